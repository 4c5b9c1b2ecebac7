// glioma: phantom/dataset generation, forward runs, calibration and evaluation.
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "glioma/calibration.hpp"
#include "glioma/dataset.hpp"
#include "glioma/error.hpp"
#include "glioma/evaluation.hpp"
#include "glioma/growth_model.hpp"
#include "glioma/imaging.hpp"
#include "glioma/parallel.hpp"
#include "glioma/rng.hpp"
#include "glioma/run_config.hpp"
#include "glioma/surrogate.hpp"
#include "glioma/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace glioma;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Common {
  std::string config;
  RunConfig resolve() const { return config.empty() ? RunConfig::from_json(json::object()) : RunConfig::load(config); }
};

// Flag value, else the config's paths entry, else a config error.
std::string need_path(const std::string& flag, const RunConfig& cfg, const char* key) {
  if (!flag.empty()) return flag;
  if (auto it = cfg.paths.find(key); it != cfg.paths.end()) return it->second;
  throw ConfigError(std::string("missing --") + key + " (or paths." + key + " in the config)");
}

std::array<double, 3> seed_of(const std::vector<double>& v) {
  if (v.size() != 3) throw ConfigError("--seed-pos takes three fractions");
  return {v[0], v[1], v[2]};
}

// ---------------------------------------------------------------------------

struct GenAnatomy {
  std::vector<int> dims{32};
  double spacing = 2.0;
  std::uint64_t seed = 0;
  std::string out;

  int run() const {
    if (dims.size() != 1 && dims.size() != 3) throw ConfigError("--dims takes one or three sizes");
    const Dims d = dims.size() == 1 ? Dims{dims[0], dims[0], dims[0]} : Dims{dims[0], dims[1], dims[2]};
    save_anatomy(gen_phantom(d, spacing, seed), out);
    std::cerr << "wrote anatomy " << d.nx << 'x' << d.ny << 'x' << d.nz << " to " << out << '\n';
    return 0;
  }
};

struct GenDataset {
  Common common;
  std::vector<std::string> anatomies;
  std::size_t count = 0;
  std::optional<int> crop_side;
  std::string out;
  std::uint64_t seed = 0;
  unsigned workers = default_workers();

  int run() const {
    const RunConfig cfg = common.resolve();
    std::vector<Anatomy> an;
    std::vector<std::string> ids;
    for (const auto& p : anatomies) {
      an.push_back(load_anatomy(p));
      ids.push_back(fs::path(p).lexically_normal().filename().string().empty()
                        ? fs::path(p).lexically_normal().parent_path().filename().string()
                        : fs::path(p).lexically_normal().filename().string());
    }
    DatasetOptions opt;
    opt.count = count;
    opt.crop_side = crop_side.value_or(cfg.net.side);
    opt.seed = seed;
    opt.workers = workers;
    opt.solver = cfg.solver;
    write_dataset(an, ids, opt, out);
    std::cerr << "wrote " << count << " samples to " << out << '\n';
    return 0;
  }
};

struct Forward {
  std::string anatomy;
  double dw = 0.05, rho = 0.015, T = 300.0;
  std::vector<double> seed_pos{0.5, 0.5, 0.5};
  std::string out;

  GrowthParams params() const { return {dw, rho, seed_of(seed_pos), T}; }
};

struct Simulate {
  Common common;
  Forward f;

  int run() const {
    const RunConfig cfg = common.resolve();
    const Anatomy a = load_anatomy(need_path(f.anatomy, cfg, "anatomy"));
    const auto t0 = std::chrono::steady_clock::now();
    const ScalarField3D u = simulate(a, f.params(), cfg.solver);
    save_volume(u, need_path(f.out, cfg, "out"));
    std::cerr << "simulated T=" << f.T << " in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
    return 0;
  }
};

struct Predict {
  Common common;
  Forward f;
  std::string weights;

  int run() const {
    const RunConfig cfg = common.resolve();
    const Anatomy a = load_anatomy(need_path(f.anatomy, cfg, "anatomy"));
    auto w = std::make_shared<const SurrogateWeights>(load_weights(need_path(weights, cfg, "weights")));
    const SurrogateForward fw(a, w, cfg.solver.csf_domain_threshold);
    save_volume(fw.evaluate(f.params()), need_path(f.out, cfg, "out"));
    return 0;
  }
};

struct Observe {
  Common common;
  std::string truth, anatomy, out;
  std::uint64_t seed = 0;
  ImagingParams im{};

  int run() const {
    const RunConfig cfg = common.resolve();
    im.validate();
    const ScalarField3D u = load_volume(need_path(truth, cfg, "truth"));
    const Anatomy a = load_anatomy(need_path(anatomy, cfg, "anatomy"));
    const Observation obs = synth_observation(u, im, a, Rng::derive(seed, "observation", {}),
                                              cfg.solver.csf_domain_threshold);
    save_observation(obs, need_path(out, cfg, "observation"));
    return 0;
  }
};

struct Calibrate {
  Common common;
  std::string anatomy, observation, weights, out, truth;
  std::string forward = "numerical";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> population;
  unsigned workers = default_workers();
  bool constant_likelihood = false;

  int run() const {
    RunConfig cfg = common.resolve();
    if (seed) cfg.sampler.seed = *seed;
    if (population) cfg.sampler.population_n = *population;
    if (cfg.sampler.population_n < 8) throw ConfigError("population must be >= 8");
    const fs::path out_dir = need_path(out, cfg, "out");

    const Anatomy a = load_anatomy(need_path(anatomy, cfg, "anatomy"));
    std::unique_ptr<ForwardModel> fw;
    if (forward == "numerical") {
      fw = std::make_unique<NumericalForward>(a, cfg.solver);
    } else {
      const std::string wpath = need_path(weights, cfg, "weights");
      if (!fs::exists(wpath)) throw Error("weight file not found: " + wpath);
      auto w = std::make_shared<const SurrogateWeights>(load_weights(wpath));
      fw = std::make_unique<SurrogateForward>(a, w, cfg.solver.csf_domain_threshold);
    }

    tmcmc::Options opt;
    opt.population_n = cfg.sampler.population_n;
    opt.cov_target = cfg.sampler.cov_target;
    opt.beta = cfg.sampler.beta;
    opt.seed = Rng::derive(cfg.sampler.seed, "sampler", {});
    opt.workers = workers;

    const auto t0 = std::chrono::steady_clock::now();
    auto progress = [&](const tmcmc::SampleSet& s) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "stage %d p=%.6g acceptance=%.3f elapsed=%.1fs\n", s.stage, s.p,
                   s.acceptance_rate, el);
    };

    CalibrationResult r;
    if (constant_likelihood) {
      cfg.prior.validate();
      r.chain = tmcmc::run([](std::span<const double>) { return 0.0; }, cfg.prior.box(), opt, progress);
      std::copy(r.chain.map.theta.begin(), r.chain.map.theta.end(), r.map_theta.begin());
      r.map_density = ScalarField3D(a.dims(), a.spacing_mm());
    } else {
      const Observation obs = load_observation(need_path(observation, cfg, "observation"));
      r = calibrate(*fw, obs, cfg.prior, opt, progress);
    }

    json echo = cfg.to_json();
    echo["forward"] = forward;
    echo["workers"] = workers;
    echo["constant_likelihood"] = constant_likelihood;
    echo["tool_version"] = kVersionString;
    write_calibration(r, out_dir, echo);

    std::string truth_path = truth;
    if (truth_path.empty())
      if (auto it = cfg.paths.find("truth"); it != cfg.paths.end()) truth_path = it->second;
    if (!truth_path.empty()) {
      const ScalarField3D u = load_volume(truth_path);
      json s;
      {
        std::ifstream in(out_dir / "summary.json");
        s = json::parse(in);
      }
      for (double uc : kDiceThresholds) {
        char key[16];
        std::snprintf(key, sizeof key, "dice@%.1f", uc);
        s["dice_vs_truth"][key] = dice(r.map_density, u, uc);
      }
      std::ofstream(out_dir / "summary.json") << s.dump(2) << '\n';
      std::fprintf(stderr, "MAP dice@0.2 vs truth: %.4f\n", s["dice_vs_truth"]["dice@0.2"].get<double>());
    }
    return 0;
  }
};

struct Evaluate {
  Common common;
  std::string dataset, weights, out;
  unsigned workers = default_workers();

  int run() const {
    const RunConfig cfg = common.resolve();
    const auto w = load_weights(need_path(weights, cfg, "weights"));
    const auto dirs = dataset_sample_dirs(dataset);
    if (dirs.empty()) throw Error("dataset is empty");
    std::vector<SampleMetrics> metrics(dirs.size());
    std::atomic<std::size_t> done{0};
    parallel_for(dirs.size(), workers, [&](std::size_t k) {
      DatasetSample s = load_dataset_sample(dirs[k]);
      EvalPair p{s.id, predict(w, s.anatomy, s.params.D_w, s.params.rho, s.params.T), std::move(s.tumor),
                 std::move(s.anatomy)};
      metrics[k] = evaluate_pair(p);
      const std::size_t n = ++done;
      if (n % 50 == 0 || n == dirs.size()) std::fprintf(stderr, "evaluated %zu/%zu\n", n, dirs.size());
    });
    const MetricReport r = aggregate_metrics(std::move(metrics));
    json echo = cfg.to_json();
    echo["dataset"] = dataset;
    echo["weights"] = need_path(weights, cfg, "weights");
    write_report(r, need_path(out, cfg, "out"), echo);
    std::fprintf(stderr, "dice@0.2 mean %.4f  mae_tumor mean %.4f\n", r.dice[0].mean, r.mae_tumor.mean);
    return 0;
  }
};

void add_forward(CLI::App* c, Forward& f) {
  c->add_option("--anatomy", f.anatomy, "anatomy directory");
  c->add_option("--dw", f.dw, "white-matter diffusivity [mm^2/day]");
  c->add_option("--rho", f.rho, "proliferation rate [1/day]");
  c->add_option("--T", f.T, "growth time [days]");
  c->add_option("--seed-pos", f.seed_pos, "seed position as three fractions of the grid")->expected(3);
  c->add_option("--out", f.out, "output volume base path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain tumor growth simulation, surrogate inference and Bayesian calibration"};
  app.set_version_flag("--version", kVersionString);
  app.require_subcommand(1);

  GenAnatomy ga;
  auto* c_ga = app.add_subcommand("gen-anatomy", "write a synthetic tissue phantom");
  c_ga->add_option("--dims", ga.dims, "grid size (one or three values)");
  c_ga->add_option("--spacing", ga.spacing, "voxel spacing [mm]");
  c_ga->add_option("--seed", ga.seed, "random seed");
  c_ga->add_option("--out", ga.out, "output directory")->required();

  GenDataset gd;
  auto* c_gd = app.add_subcommand("gen-dataset", "simulate random tumors and export training crops");
  c_gd->add_option("--config", gd.common.config, "run configuration JSON");
  c_gd->add_option("--anatomies", gd.anatomies, "anatomy directories")->required();
  c_gd->add_option("--count", gd.count, "number of samples")->required();
  c_gd->add_option("--crop-side", gd.crop_side, "crop edge length (default net.side)");
  c_gd->add_option("--out", gd.out, "output directory")->required();
  c_gd->add_option("--seed", gd.seed, "random seed");
  c_gd->add_option("--workers", gd.workers, "worker threads");

  Simulate sim;
  auto* c_sim = app.add_subcommand("simulate", "run the numerical solver");
  c_sim->add_option("--config", sim.common.config, "run configuration JSON");
  add_forward(c_sim, sim.f);

  Predict pr;
  auto* c_pr = app.add_subcommand("predict", "run the surrogate network");
  c_pr->add_option("--config", pr.common.config, "run configuration JSON");
  c_pr->add_option("--weights", pr.weights, "TGSW weight file");
  add_forward(c_pr, pr.f);

  Observe ob;
  auto* c_ob = app.add_subcommand("observe", "synthesize T1c/FLAIR/PET observations from a density");
  c_ob->add_option("--config", ob.common.config, "run configuration JSON");
  c_ob->add_option("--truth", ob.truth, "tumor density volume");
  c_ob->add_option("--anatomy", ob.anatomy, "anatomy directory");
  c_ob->add_option("--out", ob.out, "observation directory");
  c_ob->add_option("--seed", ob.seed, "random seed");
  c_ob->add_option("--uc-t1c", ob.im.uc_t1c, "T1c threshold");
  c_ob->add_option("--uc-flair", ob.im.uc_flair, "FLAIR threshold");
  c_ob->add_option("--sigma-alpha", ob.im.sigma_alpha, "logistic width");
  c_ob->add_option("--b", ob.im.b, "PET scale");
  c_ob->add_option("--sigma", ob.im.sigma, "PET noise");

  Calibrate cal;
  auto* c_cal = app.add_subcommand("calibrate", "TMCMC calibration against an observation");
  c_cal->add_option("--config", cal.common.config, "run configuration JSON");
  c_cal->add_option("--anatomy", cal.anatomy, "anatomy directory");
  c_cal->add_option("--observation", cal.observation, "observation directory or manifest");
  c_cal->add_option("--forward", cal.forward, "forward model")
      ->check(CLI::IsMember({"numerical", "surrogate"}));
  c_cal->add_option("--weights", cal.weights, "TGSW weight file (surrogate forward)");
  c_cal->add_option("--out", cal.out, "output directory");
  c_cal->add_option("--truth", cal.truth, "true density; adds MAP dice to the summary");
  c_cal->add_option("--seed", cal.seed, "sampler seed (overrides sampler.seed)");
  c_cal->add_option("--population", cal.population, "population size (overrides sampler.population_n)");
  c_cal->add_option("--workers", cal.workers, "worker threads");
  c_cal->add_flag("--debug-constant-likelihood", cal.constant_likelihood,
                  "replace the likelihood by a constant (samples the prior)");

  Evaluate ev;
  auto* c_ev = app.add_subcommand("evaluate", "compare surrogate predictions with a simulated dataset");
  c_ev->add_option("--config", ev.common.config, "run configuration JSON");
  c_ev->add_option("--dataset", ev.dataset, "dataset directory")->required();
  c_ev->add_option("--weights", ev.weights, "TGSW weight file");
  c_ev->add_option("--out", ev.out, "report directory");
  c_ev->add_option("--workers", ev.workers, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*c_ga) return ga.run();
    if (*c_gd) return gd.run();
    if (*c_sim) return sim.run();
    if (*c_pr) return pr.run();
    if (*c_ob) return ob.run();
    if (*c_cal) return cal.run();
    if (*c_ev) return ev.run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
