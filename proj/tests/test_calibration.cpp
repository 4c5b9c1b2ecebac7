#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <memory>
#include <string>

#include "glioma/calibration.hpp"
#include "glioma/error.hpp"
#include "test_support.hpp"

using namespace glioma;

namespace {

Anatomy small_head() { return gen_phantom({24, 24, 24}, 1.0, 5); }

// Closed-form stand-in for a growth solver: a ball of radius D_w * 100 at the seed.
class BallForward final : public ForwardModel {
public:
  explicit BallForward(Dims d) : d_(d) {}
  ScalarField3D evaluate(const GrowthParams& p) const override {
    ++calls;
    ScalarField3D u(d_, 1.0);
    const Voxel c = seed_voxel(d_, p.seed);
    const double r = p.D_w * 100.0;
    for (int z = 0; z < d_.nz; ++z)
      for (int y = 0; y < d_.ny; ++y)
        for (int x = 0; x < d_.nx; ++x) {
          const double dd = std::hypot(x - c.x, y - c.y, z - c.z);
          u(x, y, z) = dd < r ? 0.9 : 0.0;
        }
    return u;
  }
  mutable int calls = 0;

private:
  Dims d_;
};

}  // namespace

TEST_CASE("prior defaults and validation") {
  const PriorSpec p = PriorSpec::defaults();
  CHECK(p.bounds[kDw] == ParamRange{0.01, 0.08});
  CHECK(p.bounds[kRho] == ParamRange{1e-4, 0.03});
  CHECK(p.bounds[kT] == ParamRange{30, 1000});
  for (auto k : {kX, kY, kZ}) CHECK(p.bounds[k] == ParamRange{0, 1});
  CHECK(p.bounds[kSigma] == ParamRange{0.01, 0.25});
  CHECK(p.bounds[kB] == ParamRange{0.6, 1.02});
  CHECK(p.bounds[kUcT1c] == ParamRange{0.6, 0.8});
  CHECK(p.bounds[kUcFlair] == ParamRange{0.05, 0.6});
  CHECK(p.bounds[kSigmaAlpha] == ParamRange{0.05, 0.08});
  const tmcmc::BoxPrior box = p.box();
  CHECK(box.dim() == 11);
  CHECK(box.lo[kT] == 30.0);
  CHECK(box.hi[kB] == 1.02);
  PriorSpec bad = p;
  bad.bounds[kSigma] = {0.2, 0.2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_WITH(bad.validate(), doctest::Contains("sigma"));
}

TEST_CASE("parameter vector packing") {
  const GrowthParams g{0.031, 0.012, {0.2, 0.4, 0.6}, 345.0};
  const ImagingParams im{0.71, 0.33, 0.065, 0.9, 0.04};
  const Theta t = make_theta(g, im);
  CHECK(t[kDw] == 0.031);
  CHECK(t[kT] == 345.0);
  CHECK(t[kZ] == 0.6);
  CHECK(t[kUcFlair] == 0.33);
  const GrowthParams g2 = growth_params_of(t);
  CHECK(g2.D_w == g.D_w);
  CHECK(g2.rho == g.rho);
  CHECK(g2.T == g.T);
  CHECK(g2.seed == g.seed);
  const ImagingParams im2 = imaging_params_of(t);
  CHECK(im2.uc_t1c == im.uc_t1c);
  CHECK(im2.uc_flair == im.uc_flair);
  CHECK(im2.sigma_alpha == im.sigma_alpha);
  CHECK(im2.b == im.b);
  CHECK(im2.sigma == im.sigma);
  const std::vector<double> short_theta(10, 0.5);
  CHECK_THROWS_AS(growth_params_of(short_theta), Error);
  CHECK_THROWS_AS(imaging_params_of(short_theta), Error);
  CHECK(kParamNames[kSigmaAlpha] == "sigma_alpha");
}

TEST_CASE("numerical forward model is the solver") {
  const Anatomy a = small_head();
  SolverConfig cfg;
  const NumericalForward f(a, cfg);
  const GrowthParams g{0.05, 0.02, {0.5, 0.5, 0.5}, 60.0};
  const ScalarField3D u = f.evaluate(g);
  const ScalarField3D ref = simulate(a, g, cfg);
  REQUIRE(u.same_grid(ref));
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(u[i] == ref[i]);
  cfg.dt_safety = 2.0;
  CHECK_THROWS_AS(NumericalForward(a, cfg), ConfigError);
}

TEST_CASE("surrogate forward model crops, predicts and embeds") {
  const Anatomy a = small_head();
  NetConfig c;
  c.side = 16;
  c.channels = 2;
  c.levels = 2;
  const ParamRanges ranges{{{0.01, 0.08}, {1e-4, 0.03}, {30, 1000}}};
  auto w = std::make_shared<const SurrogateWeights>(SurrogateWeights::random(c, ranges, 8));
  const SurrogateForward f(a, w);
  const GrowthParams g{0.04, 0.01, {0.45, 0.5, 0.55}, 200.0};
  const ScalarField3D u = f.evaluate(g);

  const Voxel s = seed_voxel(a.dims(), g.seed);
  const ScalarField3D local = predict(*w, crop_anatomy(a, {s, 16}), g.D_w, g.rho, g.T);
  REQUIRE(u.dims() == a.dims());
  int inside = 0;
  for (int z = 0; z < 24; ++z)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        const int lx = x - s.x + 8, ly = y - s.y + 8, lz = z - s.z + 8;
        const bool in = lx >= 0 && ly >= 0 && lz >= 0 && lx < 16 && ly < 16 && lz < 16;
        if (in) {
          ++inside;
          CHECK(u(x, y, z) == local(lx, ly, lz));
        } else {
          CHECK(u(x, y, z) == 0.0);
        }
      }
  CHECK(inside > 0);

  // corner voxel of the phantom is background
  CHECK_THROWS_WITH(f.evaluate({0.04, 0.01, {0.0, 0.0, 0.0}, 200.0}), doctest::Contains("outside tissue"));
  CHECK_THROWS_AS(SurrogateForward(a, nullptr), Error);
}

TEST_CASE("log likelihood composes forward and imaging models") {
  const Anatomy a = small_head();
  const BallForward f(a.dims());
  const GrowthParams truth{0.05, 0.01, {0.5, 0.5, 0.5}, 100.0};
  const ImagingParams im{};
  const Observation obs = synth_observation(f.evaluate(truth), im, a, 4);
  const auto ll = make_log_likelihood(f, obs);
  for (double dw : {0.03, 0.05, 0.07}) {
    const GrowthParams g{dw, 0.01, {0.5, 0.5, 0.5}, 100.0};
    const Theta t = make_theta(g, im);
    CHECK(ll(t) == total_loglik(obs, f.evaluate(g), im));
  }
  const Theta at_truth = make_theta(truth, im);
  const Theta off = make_theta({0.02, 0.01, {0.5, 0.5, 0.5}, 100.0}, im);
  CHECK(ll(at_truth) > ll(off));
}

TEST_CASE("calibration returns the map and its density") {
  const Anatomy a = small_head();
  const BallForward f(a.dims());
  const GrowthParams truth{0.05, 0.01, {0.5, 0.5, 0.5}, 100.0};
  const Observation obs = synth_observation(f.evaluate(truth), {}, a, 6);

  PriorSpec prior = PriorSpec::defaults();
  prior.bounds[kX] = prior.bounds[kY] = prior.bounds[kZ] = {0.4, 0.6};
  tmcmc::Options opt;
  opt.population_n = 64;
  opt.seed = 1;
  int stages = 0;
  const CalibrationResult r = calibrate(f, obs, prior, opt, [&](const tmcmc::SampleSet&) { ++stages; });
  CHECK(stages == static_cast<int>(r.chain.stages.size()));
  CHECK(r.chain.stages.back().p == 1.0);
  for (std::size_t k = 0; k < kParamCount; ++k) CHECK(r.map_theta[k] == r.chain.map.theta[k]);
  const ScalarField3D expect = f.evaluate(growth_params_of(r.map_theta));
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(r.map_density[i] == expect[i]);

  test::TempDir tmp("calib");
  const nlohmann::json echo = {{"note", "unit"}};
  write_calibration(r, tmp.path / "out", echo);
  for (const auto& st : r.chain.stages) {
    char name[32];
    std::snprintf(name, sizeof name, "stage_%03d.csv", st.stage);
    std::ifstream in(tmp.path / "out" / name);
    REQUIRE(in);
    std::string header;
    std::getline(in, header);
    CHECK(header == "D_w,rho,T,x,y,z,sigma,b,uc_t1c,uc_flair,sigma_alpha,log_lik,log_prior");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 64);
  }
  std::ifstream js(tmp.path / "out" / "summary.json");
  const nlohmann::json s = nlohmann::json::parse(js);
  CHECK(s["config"]["note"] == "unit");
  CHECK(s["stages"].size() == r.chain.stages.size());
  CHECK(s["map"]["D_w"].get<double>() == r.map_theta[kDw]);
  CHECK(s["evaluations"].get<std::size_t>() == r.chain.evaluations);
  const ScalarField3D m = load_volume(tmp.path / "out" / "map_density");
  CHECK(m.dims() == a.dims());
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == static_cast<float>(r.map_density[i]));
}
