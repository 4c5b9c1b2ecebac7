#pragma once

#include <array>
#include <span>
#include <vector>

#include "glioma/volumes.hpp"

namespace glioma {

/// Biophysical parameters of the Fisher-Kolmogorov model.
struct GrowthParams {
  double D_w = 0.05;                          ///< WM diffusivity, mm^2/day
  double rho = 0.015;                         ///< proliferation rate, 1/day
  std::array<double, 3> seed{0.5, 0.5, 0.5};  ///< tumor origin, fractions of the volume extent
  double T = 0.0;                             ///< tumor age, days

  void validate() const;
};

struct SolverConfig {
  double dw_dg_ratio = 10.0;
  double csf_domain_threshold = 0.1;
  double dt_safety = 0.1;
  double seed_amplitude = 0.1;
  double seed_sigma_voxels = 1.0;

  void validate() const;
};

/// Voxel addressed by fractional coordinates: round(f * (n - 1)) per axis.
Voxel seed_voxel(const Dims& dims, const std::array<double, 3>& fraction);

/// Per-voxel D = p_w * D_w + p_g * D_w / ratio; zero where p_w + p_g <= threshold.
ScalarField3D diffusion_field(const Anatomy& anatomy, double D_w, double ratio,
                              double domain_threshold = SolverConfig{}.csf_domain_threshold);

/// Largest explicit step keeping the update a convex combination, scaled by `safety`:
/// dt = safety / (6 D_max / h^2 + rho).
double stable_dt(const ScalarField3D& D_field, double rho, double h, double safety);

/// Truncated Gaussian point source at the seed voxel, zero outside the tissue domain.
ScalarField3D init_seed(const Anatomy& anatomy, const std::array<double, 3>& seed,
                        const SolverConfig& cfg);

/// Harmonic-mean face diffusivities for the flux-form stencil. A face between
/// two voxels carries D_f = 2 D_a D_b / (D_a + D_b); faces touching a D = 0
/// voxel, and the grid boundary, carry no flux.
class FluxStencil {
public:
  explicit FluxStencil(const ScalarField3D& D_field);

  const Dims& dims() const { return dims_; }
  double max_diffusivity() const { return d_max_; }

  /// One explicit Euler step; `out` must not alias `u`.
  void step(std::span<const double> u, std::span<double> out, double rho, double dt,
            double h) const;

private:
  Dims dims_;
  double d_max_ = 0.0;
  std::vector<double> fx_, fy_, fz_;  // face to the +x/+y/+z neighbour
  mutable std::vector<double> flux_;
};

/// Single explicit flux-form update. Throws if dt exceeds the stable step.
ScalarField3D step(const ScalarField3D& u, const ScalarField3D& D_field, double rho,
                   double dt, double h);

/// Solves to time params.T (the final step is shortened to land exactly on T).
ScalarField3D simulate(const Anatomy& anatomy, const GrowthParams& params,
                       const SolverConfig& cfg);

/// One integration returning the density at each ascending time in `times`;
/// params.T is ignored.
std::vector<ScalarField3D> simulate_snapshots(const Anatomy& anatomy, GrowthParams params,
                                              const SolverConfig& cfg,
                                              std::span<const double> times);

}  // namespace glioma
