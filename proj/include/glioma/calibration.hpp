#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string_view>

#include "json.hpp"

#include "glioma/growth_model.hpp"
#include "glioma/imaging.hpp"
#include "glioma/surrogate.hpp"
#include "glioma/tmcmc.hpp"

namespace glioma {

/// Position of each quantity in the 11-dimensional parameter vector.
enum ParamIndex : std::size_t {
  kDw = 0,
  kRho,
  kT,
  kX,
  kY,
  kZ,
  kSigma,
  kB,
  kUcT1c,
  kUcFlair,
  kSigmaAlpha,
  kParamCount
};

inline constexpr std::array<std::string_view, kParamCount> kParamNames = {
    "D_w", "rho", "T", "x", "y", "z", "sigma", "b", "uc_t1c", "uc_flair", "sigma_alpha"};

/// Uniform prior box over all eleven parameters.
struct PriorSpec {
  std::array<ParamRange, kParamCount> bounds{};

  /// D_w [0.01,0.08], rho [1e-4,0.03], T [30,1000], x,y,z [0,1], sigma [0.01,0.25],
  /// b [0.6,1.02], uc_t1c [0.6,0.8], uc_flair [0.05,0.6], sigma_alpha [0.05,0.08].
  static PriorSpec defaults();

  tmcmc::BoxPrior box() const;
  void validate() const;
};

using Theta = std::array<double, kParamCount>;

GrowthParams growth_params_of(std::span<const double> theta);
ImagingParams imaging_params_of(std::span<const double> theta);
Theta make_theta(const GrowthParams& g, const ImagingParams& im);

/// Maps growth parameters to a tumor density on the observation grid.
class ForwardModel {
public:
  virtual ~ForwardModel() = default;
  virtual ScalarField3D evaluate(const GrowthParams& params) const = 0;
};

class NumericalForward final : public ForwardModel {
public:
  NumericalForward(Anatomy anatomy, SolverConfig cfg);
  ScalarField3D evaluate(const GrowthParams& params) const override;

private:
  Anatomy anatomy_;
  SolverConfig cfg_;
};

/// Crops the anatomy at the seed voxel, runs the network and embeds the
/// prediction back into the full grid (zero elsewhere).
class SurrogateForward final : public ForwardModel {
public:
  SurrogateForward(Anatomy anatomy, std::shared_ptr<const SurrogateWeights> weights,
                   double domain_threshold = SolverConfig{}.csf_domain_threshold);
  ScalarField3D evaluate(const GrowthParams& params) const override;

private:
  Anatomy anatomy_;
  std::shared_ptr<const SurrogateWeights> weights_;
  double domain_threshold_;
};

struct CalibrationResult {
  tmcmc::Result chain;
  Theta map_theta{};
  ScalarField3D map_density;
};

/// log p(D | theta) = total_loglik(obs, forward(theta_P), theta_I).
tmcmc::LogLikelihood make_log_likelihood(const ForwardModel& forward, const Observation& obs);

CalibrationResult calibrate(const ForwardModel& forward, const Observation& obs,
                            const PriorSpec& prior, const tmcmc::Options& options,
                            const tmcmc::StageCallback& on_stage = {});

/// stage_XXX.csv per stage, summary.json (embedding `config_echo`) and the
/// MAP density volume `map_density.{json,raw}`.
void write_calibration(const CalibrationResult& result, const std::filesystem::path& dir,
                       const nlohmann::json& config_echo);

}  // namespace glioma
