#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "glioma/error.hpp"
#include "glioma/imaging.hpp"
#include "imaging_oracle.hpp"
#include "test_support.hpp"

using namespace glioma;
using namespace oracle;

namespace {

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("alpha shape") {
  CHECK(alpha(0.4, 0.4, 0.06) == 0.5);
  CHECK(alpha_raw(0.4, 0.4, 0.06) == 0.5);
  CHECK(alpha(0.4 + 10 * 0.06, 0.4, 0.06) == 1.0 - kAlphaClamp);
  CHECK(alpha(0.4 - 10 * 0.06, 0.4, 0.06) == kAlphaClamp);
  for (double delta : {0.0, 0.01, 0.05, 0.1, 0.3, 0.7})
    CHECK(alpha_raw(0.5 + delta, 0.5, 0.07) + alpha_raw(0.5 - delta, 0.5, 0.07) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(alpha_raw(0.5 + 0.06, 0.5, 0.06) == doctest::Approx(0.5 + 0.5 * (1 - std::exp(-1.0))));
}

TEST_CASE("mri log-likelihood closed forms") {
  const Dims d{3, 2, 2};
  const ScalarField3D u(d, 1.0, 0.3), roi(d, 1.0, 1.0), y(d, 1.0, 1.0), y0(d, 1.0, 0.0);
  // alpha = 0.5 everywhere
  CHECK(loglik_mri(y, u, 0.3, 0.06, roi) == doctest::Approx(12 * std::log(0.5)));
  CHECK(loglik_mri(y0, u, 0.3, 0.06, roi) == doctest::Approx(12 * std::log(0.5)));
  // saturated alpha with matching labels
  const ScalarField3D hi(d, 1.0, 0.95);
  CHECK(loglik_mri(y, hi, 0.3, 0.06, roi) == doctest::Approx(12 * std::log1p(-kAlphaClamp)));
  CHECK(std::abs(loglik_mri(y, hi, 0.3, 0.06, roi)) < 1e-5);
  // roi restricts the sum
  ScalarField3D half = roi;
  for (std::size_t i = 0; i < 6; ++i) half[i] = 0.0;
  CHECK(loglik_mri(y, u, 0.3, 0.06, half) == doctest::Approx(6 * std::log(0.5)));
  CHECK_THROWS_WITH(loglik_mri(y, ScalarField3D({2, 2, 2}, 1.0), 0.3, 0.06, roi), doctest::Contains("shape mismatch"));
}

TEST_CASE("pet log-likelihood closed forms") {
  const Dims d{2, 2, 2};
  const double b = 0.8, s = 0.05;
  const ScalarField3D u(d, 1.0, 0.5), roi(d, 1.0, 1.0), y(d, 1.0, b * 0.5);
  const double norm = std::log(s * std::sqrt(2 * std::numbers::pi));
  CHECK(loglik_pet(y, u, b, s, roi) == doctest::Approx(-8 * norm).epsilon(1e-14));
  ScalarField3D one_roi(d, 1.0, 0.0);
  one_roi[3] = 1.0;
  ScalarField3D y1 = y;
  y1[3] += s;
  CHECK(loglik_pet(y1, u, b, s, one_roi) == doctest::Approx(-norm - 0.5).epsilon(1e-14));
  CHECK_THROWS_AS(loglik_pet(y, u, b, 0.0, roi), Error);
}

TEST_CASE("random 4^3 instances match the brute-force oracles") {
  for (std::uint32_t seed = 0; seed < 100; ++seed) {
    const Instance in = random_instance(seed);
    const double t1 = loglik_mri(in.obs.y_t1c, in.u, in.th.uc_t1c, in.th.sigma_alpha, in.obs.roi);
    const double fl = loglik_mri(in.obs.y_flair, in.u, in.th.uc_flair, in.th.sigma_alpha, in.obs.roi);
    const double pe = loglik_pet(in.obs.y_pet, in.u, in.th.b, in.th.sigma, in.obs.roi);
    const double o1 = mri_oracle(in.obs.y_t1c, in.u, in.th.uc_t1c, in.th.sigma_alpha, in.obs.roi);
    const double o2 = mri_oracle(in.obs.y_flair, in.u, in.th.uc_flair, in.th.sigma_alpha, in.obs.roi);
    const double o3 = pet_oracle(in.obs.y_pet, in.u, in.th.b, in.th.sigma, in.obs.roi);
    CAPTURE(seed);
    CHECK(close(t1, o1, 1e-12));
    CHECK(close(fl, o2, 1e-12));
    CHECK(close(pe, o3, 1e-12));
    CHECK(close(total_loglik(in.obs, in.u, in.th), o1 + o2 + o3, 1e-12));
  }
}

TEST_CASE("mirrored data doubles the total") {
  const Instance in = random_instance(7);
  const Dims d{8, 4, 4};
  Observation m{ScalarField3D(d, 1.0), ScalarField3D(d, 1.0), ScalarField3D(d, 1.0), ScalarField3D(d, 1.0)};
  ScalarField3D u(d, 1.0);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        for (int xx : {x, 7 - x}) {
          u(xx, y, z) = in.u(x, y, z);
          m.y_t1c(xx, y, z) = in.obs.y_t1c(x, y, z);
          m.y_flair(xx, y, z) = in.obs.y_flair(x, y, z);
          m.y_pet(xx, y, z) = in.obs.y_pet(x, y, z);
          m.roi(xx, y, z) = in.obs.roi(x, y, z);
        }
  CHECK(total_loglik(m, u, in.th) == doctest::Approx(2 * total_loglik(in.obs, in.u, in.th)).epsilon(1e-13));
}

TEST_CASE("log-likelihoods stay finite") {
  const Dims d{4, 4, 4};
  ScalarField3D u(d, 1.0), y1(d, 1.0, 1.0), y0(d, 1.0, 0.0), roi(d, 1.0, 1.0);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = (i % 2) ? 1.0 : 0.0;  // extreme disagreement
  CHECK(std::isfinite(loglik_mri(y1, u, 0.7, 0.05, roi)));
  CHECK(std::isfinite(loglik_mri(y0, u, 0.05, 0.05, roi)));
  CHECK(std::isfinite(loglik_pet(y0, u, 1.02, 0.01, roi)));
}

TEST_CASE("mri log-likelihood is monotone in u when every voxel is positive") {
  std::mt19937 g(3);
  std::uniform_real_distribution<double> U(0, 1);
  const Dims d{2, 2, 2};
  ScalarField3D y(d, 1.0, 1.0), roi(d, 1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    ScalarField3D u(d, 1.0);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = U(g);
    const double before = loglik_mri(y, u, 0.5, 0.06, roi);
    const std::size_t k = g() % u.size();
    u[k] = std::min(1.0, u[k] + 0.2 * U(g));
    CHECK(loglik_mri(y, u, 0.5, 0.06, roi) >= before);
  }
}

TEST_CASE("synthetic observations: limits and determinism") {
  const Anatomy a = gen_phantom({20, 20, 20}, 2.0, 1);
  ScalarField3D u(a.dims(), 2.0);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::fmod(0.137 * static_cast<double>(i), 1.0);
  ImagingParams th;
  th.sigma_alpha = 1e-9;
  th.sigma = 1e-12;
  const Observation o = synth_observation(u, th, a, 5);
  for (std::size_t i = 0; i < u.size(); ++i) {
    // voxels within rounding of a threshold are coin flips even in the limit
    if (std::abs(u[i] - th.uc_t1c) > 1e-6) CHECK(o.y_t1c[i] == (u[i] > th.uc_t1c ? 1.0 : 0.0));
    if (std::abs(u[i] - th.uc_flair) > 1e-6) CHECK(o.y_flair[i] == (u[i] > th.uc_flair ? 1.0 : 0.0));
    CHECK(o.y_pet[i] == doctest::Approx(std::clamp(th.b * u[i], 0.0, 1.0)).epsilon(1e-9));
  }
  const ScalarField3D mask = a.tissue_mask(0.1);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(o.roi[i] == mask[i]);
  CHECK_NOTHROW(o.validate());

  const ImagingParams def;
  const Observation p = synth_observation(u, def, a, 9), q = synth_observation(u, def, a, 9);
  const Observation r = synth_observation(u, def, a, 10);
  bool same = true, differ = false;
  for (std::size_t i = 0; i < u.size(); ++i) {
    same = same && p.y_t1c[i] == q.y_t1c[i] && p.y_flair[i] == q.y_flair[i] && p.y_pet[i] == q.y_pet[i];
    differ = differ || p.y_pet[i] != r.y_pet[i];
  }
  CHECK(same);
  CHECK(differ);
}

TEST_CASE("noise statistics of synthetic PET") {
  const Anatomy a = uniform_anatomy({30, 30, 30}, 2.0, 1.0, 0.0);
  const ScalarField3D u(a.dims(), 2.0, 0.5);
  ImagingParams th;
  th.b = 0.8;
  th.sigma = 0.05;  // b u = 0.4: clamping is a >8 sigma event
  const Observation o = synth_observation(u, th, a, 11);
  double m = 0, v = 0;
  for (double y : o.y_pet.values()) m += y;
  m /= o.y_pet.size();
  for (double y : o.y_pet.values()) v += (y - m) * (y - m);
  v /= o.y_pet.size() - 1;
  const double n = static_cast<double>(o.y_pet.size());
  CHECK(std::abs(m - 0.4) < 4 * 0.05 / std::sqrt(n));
  CHECK(std::abs(std::sqrt(v) - 0.05) < 4 * 0.05 / std::sqrt(2 * n));
  // Bernoulli rate at u = uc + sigma_alpha
  const ScalarField3D u2(a.dims(), 2.0, th.uc_t1c + th.sigma_alpha);
  const Observation o2 = synth_observation(u2, th, a, 12);
  const double p = alpha_raw(u2[0], th.uc_t1c, th.sigma_alpha);
  const double rate = o2.y_t1c.sum() / n;
  CHECK(std::abs(rate - p) < 4 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("likelihood peaks at the generating threshold") {
  const Anatomy a = uniform_anatomy({16, 16, 16}, 2.0, 1.0, 0.0);
  ScalarField3D u(a.dims(), 2.0);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(u.size());
  ImagingParams gen;
  gen.sigma_alpha = 1e-9;
  const double t = 0.7;
  gen.uc_t1c = t;
  const Observation o = synth_observation(u, gen, a, 3);
  double best = -1e300, arg = 0;
  for (double uc = 0.60; uc <= 0.80 + 1e-12; uc += 0.005) {
    const double l = loglik_mri(o.y_t1c, u, uc, 0.05, o.roi);
    if (l > best) {
      best = l;
      arg = uc;
    }
  }
  CHECK(arg == doctest::Approx(t).epsilon(1e-9));
}

TEST_CASE("observation round trip and validation") {
  test::TempDir tmp("obs");
  const Anatomy a = gen_phantom({16, 16, 16}, 2.0, 2);
  const ScalarField3D u(a.dims(), 2.0, 0.45);
  const Observation o = synth_observation(u, ImagingParams{}, a, 1);
  save_observation(o, tmp / "obs");
  for (const auto& p : {tmp / "obs", tmp / "obs" / "observation.json"}) {
    const Observation r = load_observation(p);
    for (std::size_t i = 0; i < u.size(); ++i) {
      CHECK(r.y_t1c[i] == o.y_t1c[i]);
      CHECK(r.roi[i] == o.roi[i]);
      CHECK(r.y_pet[i] == static_cast<double>(static_cast<float>(o.y_pet[i])));
    }
  }
  Observation bad = o;
  bad.y_t1c[0] = 0.5;
  CHECK_THROWS_WITH(bad.validate(), doctest::Contains("binary"));
  bad = o;
  bad.y_pet[0] = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  ImagingParams th;
  th.uc_t1c = 1.0;
  CHECK_THROWS_AS(th.validate(), Error);
  th = {};
  th.sigma = 0.0;
  CHECK_THROWS_AS(th.validate(), Error);
}
