#pragma once

#include <cstdint>
#include <filesystem>

#include "glioma/volumes.hpp"

namespace glioma {

/// Parameters of the imaging model relating tumor density to scans.
struct ImagingParams {
  double uc_t1c = 0.7;
  double uc_flair = 0.25;
  double sigma_alpha = 0.06;
  double b = 0.8;
  double sigma = 0.05;

  void validate() const;
};

/// Binary T1c/FLAIR segmentations, normalized PET and the voxel set the
/// likelihood runs over.
struct Observation {
  ScalarField3D y_t1c;
  ScalarField3D y_flair;
  ScalarField3D y_pet;
  ScalarField3D roi;

  const Dims& dims() const { return roi.dims(); }
  void validate() const;
};

inline constexpr double kAlphaClamp = 1e-7;

/// Double logistic sigmoid, unclamped: 0.5 + 0.5 sign(u-uc) (1 - exp(-(u-uc)^2 / s^2)).
double alpha_raw(double u, double u_c, double sigma_alpha);

/// alpha_raw clamped to [1e-7, 1 - 1e-7] so its logs stay finite.
double alpha(double u, double u_c, double sigma_alpha);

/// Bernoulli log-likelihood of a binary segmentation over the roi voxels.
double loglik_mri(const ScalarField3D& y, const ScalarField3D& u, double u_c, double sigma_alpha,
                  const ScalarField3D& roi);

/// Gaussian log-likelihood of PET ~ N(b u, sigma^2) over the roi voxels.
double loglik_pet(const ScalarField3D& y_pet, const ScalarField3D& u, double b, double sigma,
                  const ScalarField3D& roi);

double total_loglik(const Observation& obs, const ScalarField3D& u, const ImagingParams& theta);

/// Samples scans from the imaging model given a true density.
Observation synth_observation(const ScalarField3D& u_true, const ImagingParams& theta,
                              const Anatomy& anatomy, std::uint64_t rng_seed,
                              double domain_threshold = 0.1);

/// Observation directory: t1c/flair/pet/roi volumes plus observation.json.
void save_observation(const Observation& obs, const std::filesystem::path& dir);
Observation load_observation(const std::filesystem::path& manifest_or_dir);

}  // namespace glioma
