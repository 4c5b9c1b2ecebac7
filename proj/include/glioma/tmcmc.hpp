#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "glioma/rng.hpp"

namespace glioma::tmcmc {

/// Independent uniform prior on an axis-aligned box.
struct BoxPrior {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dim() const { return lo.size(); }
  bool contains(std::span<const double> theta) const;
  void validate() const;
};

/// -sum ln(hi - lo) inside the box, -inf outside.
double log_prior(std::span<const double> theta, const BoxPrior& prior);

struct Sample {
  std::vector<double> theta;
  double log_lik = 0.0;
  double log_prior = 0.0;

  double log_posterior() const { return log_lik + log_prior; }
};

struct SampleSet {
  std::vector<Sample> samples;
  double p = 0.0;              ///< tempering exponent of this population
  int stage = 0;
  double acceptance_rate = 0.0;
  double seconds = 0.0;        ///< wall clock spent producing this stage
};

using LogLikelihood = std::function<double(std::span<const double>)>;

struct Options {
  std::size_t population_n = 2048;
  double cov_target = 1.0;
  double beta = 0.2;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  int max_stages = 500;
};

struct Result {
  std::vector<SampleSet> stages;  ///< stages.front() holds the prior draws
  Sample map;                     ///< best log posterior among every evaluated sample
  std::size_t evaluations = 0;
};

/// Coefficient of variation (sample standard deviation over mean) of
/// w_k = exp(dp * (l_k - max l)). Entries equal to -inf get weight 0.
double weight_cov(std::span<const double> log_liks, double dp);

/// Next exponent: the largest p in (p_current, 1] whose weights have COV at
/// most cov_target (bisection on dp to 1e-8). Returns 1 when that bound is
/// never reached, e.g. for identical likelihoods.
double select_delta_p(std::span<const double> log_liks, double p_current, double cov_target);

/// Normalized plausibility weights exp(dp * l_k) / sum, computed after
/// subtracting the maximum so shifts in l never matter.
std::vector<double> plausibility_weights(std::span<const double> log_liks, double dp);

/// Multinomial resampling of `set` by plausibility weights; size is preserved.
SampleSet resample(const SampleSet& set, double dp, Rng& rng);

/// Weighted sample covariance of the population, regularized to be positive definite.
Eigen::MatrixXd population_covariance(const SampleSet& set, std::span<const double> weights);

struct MoveResult {
  Sample sample;                    ///< state after the move
  std::optional<Sample> proposal;   ///< the proposal, if its likelihood was evaluated
  bool accepted = false;
};

/// One Metropolis-Hastings step with proposal N(theta, beta^2 Sigma), where
/// `chol` is the lower Cholesky factor of Sigma, targeting p * log_lik + log_prior.
/// Proposals outside the prior box are rejected without evaluating the likelihood.
MoveResult mh_move(const Sample& current, const Eigen::MatrixXd& chol, double beta, double p,
                   const LogLikelihood& log_lik, const BoxPrior& prior, Rng& rng);

/// Lower Cholesky factor of `cov`, adding growing diagonal jitter (from 1e-10) if needed.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& cov);

using StageCallback = std::function<void(const SampleSet&)>;

/// Transitional MCMC from the prior (p = 0) to the posterior (p = 1). A
/// likelihood that throws is treated as -inf for that sample.
Result run(const LogLikelihood& log_lik, const BoxPrior& prior, const Options& options,
           const StageCallback& on_stage = {});

}  // namespace glioma::tmcmc
