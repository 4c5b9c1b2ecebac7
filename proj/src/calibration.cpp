#include "glioma/calibration.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>

#include "glioma/error.hpp"

namespace glioma {

namespace fs = std::filesystem;
using json = nlohmann::json;

PriorSpec PriorSpec::defaults() {
  PriorSpec p;
  p.bounds[kDw] = {0.01, 0.08};
  p.bounds[kRho] = {0.0001, 0.03};
  p.bounds[kT] = {30.0, 1000.0};
  p.bounds[kX] = {0.0, 1.0};
  p.bounds[kY] = {0.0, 1.0};
  p.bounds[kZ] = {0.0, 1.0};
  p.bounds[kSigma] = {0.01, 0.25};
  p.bounds[kB] = {0.6, 1.02};
  p.bounds[kUcT1c] = {0.6, 0.8};
  p.bounds[kUcFlair] = {0.05, 0.6};
  p.bounds[kSigmaAlpha] = {0.05, 0.08};
  return p;
}

tmcmc::BoxPrior PriorSpec::box() const {
  tmcmc::BoxPrior b;
  for (const auto& r : bounds) {
    b.lo.push_back(r.lo);
    b.hi.push_back(r.hi);
  }
  return b;
}

void PriorSpec::validate() const {
  for (std::size_t k = 0; k < kParamCount; ++k)
    if (!(bounds[k].lo < bounds[k].hi))
      throw ConfigError("prior." + std::string(kParamNames[k]) + " needs lo < hi");
}

GrowthParams growth_params_of(std::span<const double> t) {
  if (t.size() != kParamCount) throw Error("parameter vector must have 11 entries");
  return {t[kDw], t[kRho], {t[kX], t[kY], t[kZ]}, t[kT]};
}

ImagingParams imaging_params_of(std::span<const double> t) {
  if (t.size() != kParamCount) throw Error("parameter vector must have 11 entries");
  return {t[kUcT1c], t[kUcFlair], t[kSigmaAlpha], t[kB], t[kSigma]};
}

Theta make_theta(const GrowthParams& g, const ImagingParams& im) {
  Theta t{};
  t[kDw] = g.D_w;
  t[kRho] = g.rho;
  t[kT] = g.T;
  t[kX] = g.seed[0];
  t[kY] = g.seed[1];
  t[kZ] = g.seed[2];
  t[kSigma] = im.sigma;
  t[kB] = im.b;
  t[kUcT1c] = im.uc_t1c;
  t[kUcFlair] = im.uc_flair;
  t[kSigmaAlpha] = im.sigma_alpha;
  return t;
}

NumericalForward::NumericalForward(Anatomy anatomy, SolverConfig cfg)
    : anatomy_(std::move(anatomy)), cfg_(cfg) {
  cfg_.validate();
}

ScalarField3D NumericalForward::evaluate(const GrowthParams& params) const {
  return simulate(anatomy_, params, cfg_);
}

SurrogateForward::SurrogateForward(Anatomy anatomy, std::shared_ptr<const SurrogateWeights> weights,
                                   double domain_threshold)
    : anatomy_(std::move(anatomy)), weights_(std::move(weights)), domain_threshold_(domain_threshold) {
  if (!weights_) throw Error("surrogate forward model needs weights");
}

ScalarField3D SurrogateForward::evaluate(const GrowthParams& params) const {
  params.validate();
  const Voxel seed = seed_voxel(anatomy_.dims(), params.seed);
  const std::size_t i = anatomy_.wm.index(seed.x, seed.y, seed.z);
  if (!(anatomy_.wm[i] + anatomy_.gm[i] > domain_threshold_))
    throw Error("seed outside tissue domain");
  const CropSpec spec{seed, weights_->config().side};
  const Anatomy crop = crop_anatomy(anatomy_, spec);
  const ScalarField3D local = predict(*weights_, crop, params.D_w, params.rho, params.T);
  return embed(local, anatomy_.dims(), seed, 0.0);
}

tmcmc::LogLikelihood make_log_likelihood(const ForwardModel& forward, const Observation& obs) {
  return [&forward, &obs](std::span<const double> theta) {
    const ScalarField3D u = forward.evaluate(growth_params_of(theta));
    return total_loglik(obs, u, imaging_params_of(theta));
  };
}

CalibrationResult calibrate(const ForwardModel& forward, const Observation& obs,
                            const PriorSpec& prior, const tmcmc::Options& options,
                            const tmcmc::StageCallback& on_stage) {
  prior.validate();
  CalibrationResult out;
  out.chain = tmcmc::run(make_log_likelihood(forward, obs), prior.box(), options, on_stage);
  std::copy(out.chain.map.theta.begin(), out.chain.map.theta.end(), out.map_theta.begin());
  out.map_density = forward.evaluate(growth_params_of(out.map_theta));
  return out;
}

void write_calibration(const CalibrationResult& result, const fs::path& dir,
                       const json& config_echo) {
  fs::create_directories(dir);
  json stages = json::array();
  for (const auto& set : result.chain.stages) {
    char name[32];
    std::snprintf(name, sizeof name, "stage_%03d.csv", set.stage);
    std::ofstream csv(dir / name);
    if (!csv) throw Error("cannot write " + (dir / name).string());
    for (std::size_t k = 0; k < kParamCount; ++k) csv << kParamNames[k] << ',';
    csv << "log_lik,log_prior\n";
    csv << std::setprecision(17);
    for (const auto& s : set.samples) {
      for (double v : s.theta) csv << v << ',';
      csv << s.log_lik << ',' << s.log_prior << '\n';
    }
    stages.push_back({{"stage", set.stage},
                      {"p", set.p},
                      {"acceptance_rate", set.acceptance_rate},
                      {"seconds", set.seconds},
                      {"file", name}});
  }
  json map = json::object();
  for (std::size_t k = 0; k < kParamCount; ++k) map[std::string(kParamNames[k])] = result.map_theta[k];
  const json summary = {{"map", map},
                        {"map_log_lik", result.chain.map.log_lik},
                        {"map_log_prior", result.chain.map.log_prior},
                        {"stages", stages},
                        {"evaluations", result.chain.evaluations},
                        {"map_density", "map_density"},
                        {"config", config_echo}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  save_volume(result.map_density, dir / "map_density");
}

}  // namespace glioma
