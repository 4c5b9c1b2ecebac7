#include "glioma/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "glioma/error.hpp"
#include "glioma/rng.hpp"

namespace glioma {

namespace fs = std::filesystem;
using json = nlohmann::json;

void ImagingParams::validate() const {
  if (!(uc_t1c > 0.0 && uc_t1c < 1.0) || !(uc_flair > 0.0 && uc_flair < 1.0))
    throw Error("imaging thresholds must lie in (0,1)");
  if (!(sigma_alpha > 0.0) || !(b > 0.0) || !(sigma > 0.0))
    throw Error("imaging sigma_alpha, b and sigma must be positive");
}

void Observation::validate() const {
  if (!roi.same_grid(y_t1c) || !roi.same_grid(y_flair) || !roi.same_grid(y_pet))
    throw Error("observation fields do not share a grid");
  auto binary = [](const ScalarField3D& f, const char* name) {
    for (double v : f.values())
      if (v != 0.0 && v != 1.0) throw Error(std::string(name) + " must be binary");
  };
  binary(y_t1c, "y_t1c");
  binary(y_flair, "y_flair");
  binary(roi, "roi");
  for (double v : y_pet.values())
    if (!(v >= 0.0 && v <= 1.0)) throw Error("y_pet must lie in [0,1]");
}

double alpha_raw(double u, double u_c, double sigma_alpha) {
  const double d = u - u_c;
  const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  return 0.5 + 0.5 * sign * (1.0 - std::exp(-(d * d) / (sigma_alpha * sigma_alpha)));
}

double alpha(double u, double u_c, double sigma_alpha) {
  return std::clamp(alpha_raw(u, u_c, sigma_alpha), kAlphaClamp, 1.0 - kAlphaClamp);
}

namespace {

void require_same(const ScalarField3D& a, const ScalarField3D& b, const char* what) {
  if (a.dims() != b.dims()) throw Error(std::string("shape mismatch in ") + what);
}

}  // namespace

double loglik_mri(const ScalarField3D& y, const ScalarField3D& u, double u_c, double sigma_alpha,
                  const ScalarField3D& roi) {
  require_same(y, u, "loglik_mri");
  require_same(y, roi, "loglik_mri");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (roi[i] == 0.0) continue;
    // both tails from the same exponential, so 1 - alpha keeps full precision near 1
    const double d = u[i] - u_c;
    const double half_e = 0.5 * std::exp(-(d * d) / (sigma_alpha * sigma_alpha));
    double pos = 0.5, neg = 0.5;
    if (d > 0.0) {
      pos = 1.0 - half_e;
      neg = half_e;
    } else if (d < 0.0) {
      pos = half_e;
      neg = 1.0 - half_e;
    }
    pos = std::clamp(pos, kAlphaClamp, 1.0 - kAlphaClamp);
    neg = std::clamp(neg, kAlphaClamp, 1.0 - kAlphaClamp);
    total += y[i] * std::log(pos) + (1.0 - y[i]) * std::log(neg);
  }
  return total;
}

double loglik_pet(const ScalarField3D& y_pet, const ScalarField3D& u, double b, double sigma,
                  const ScalarField3D& roi) {
  require_same(y_pet, u, "loglik_pet");
  require_same(y_pet, roi, "loglik_pet");
  if (!(sigma > 0.0)) throw Error("PET sigma must be positive");
  const double log_norm = std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  double total = 0.0;
  for (std::size_t i = 0; i < y_pet.size(); ++i) {
    if (roi[i] == 0.0) continue;
    const double r = y_pet[i] - b * u[i];
    total += -log_norm - r * r * inv_two_var;
  }
  return total;
}

double total_loglik(const Observation& obs, const ScalarField3D& u, const ImagingParams& th) {
  return loglik_mri(obs.y_t1c, u, th.uc_t1c, th.sigma_alpha, obs.roi) +
         loglik_mri(obs.y_flair, u, th.uc_flair, th.sigma_alpha, obs.roi) +
         loglik_pet(obs.y_pet, u, th.b, th.sigma, obs.roi);
}

Observation synth_observation(const ScalarField3D& u, const ImagingParams& th,
                              const Anatomy& anatomy, std::uint64_t rng_seed,
                              double domain_threshold) {
  th.validate();
  if (u.dims() != anatomy.dims()) throw Error("density and anatomy grids differ");
  Rng rng(rng_seed, "observation");
  Observation obs{ScalarField3D(u.dims(), u.spacing_mm()), ScalarField3D(u.dims(), u.spacing_mm()),
                  ScalarField3D(u.dims(), u.spacing_mm()), anatomy.tissue_mask(domain_threshold)};
  for (std::size_t i = 0; i < u.size(); ++i) {
    // Draws are taken for every voxel, in order, so the stream layout does not
    // depend on parameter values.
    const double r_t1c = rng.uniform();
    const double r_flair = rng.uniform();
    const double noise = rng.normal();
    obs.y_t1c[i] = r_t1c < alpha_raw(u[i], th.uc_t1c, th.sigma_alpha) ? 1.0 : 0.0;
    obs.y_flair[i] = r_flair < alpha_raw(u[i], th.uc_flair, th.sigma_alpha) ? 1.0 : 0.0;
    obs.y_pet[i] = std::clamp(th.b * u[i] + th.sigma * noise, 0.0, 1.0);
  }
  return obs;
}

void save_observation(const Observation& obs, const fs::path& dir) {
  fs::create_directories(dir);
  save_volume(obs.y_t1c, dir / "t1c");
  save_volume(obs.y_flair, dir / "flair");
  save_volume(obs.y_pet, dir / "pet");
  save_volume(obs.roi, dir / "roi");
  const json manifest = {{"t1c", "t1c"}, {"flair", "flair"}, {"pet", "pet"}, {"roi", "roi"}};
  std::ofstream(dir / "observation.json") << manifest.dump(2) << '\n';
}

Observation load_observation(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / "observation.json" : path;
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open observation manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed observation manifest: ") + e.what());
  }
  const fs::path dir = manifest_path.parent_path();
  auto vol = [&](const char* key) {
    if (!m.contains(key)) throw Error(std::string("observation manifest lacks ") + key);
    return load_volume(dir / m.at(key).get<std::string>());
  };
  Observation obs{vol("t1c"), vol("flair"), vol("pet"), vol("roi")};
  obs.validate();
  return obs;
}

}  // namespace glioma
