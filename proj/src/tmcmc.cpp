#include "glioma/tmcmc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "glioma/error.hpp"
#include "glioma/parallel.hpp"

namespace glioma::tmcmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double max_finite(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v)
    if (std::isfinite(x)) m = std::max(m, x);
  return m;
}

double safe_log_lik(const LogLikelihood& f, std::span<const double> theta) {
  try {
    const double v = f(theta);
    return std::isnan(v) ? kNegInf : v;
  } catch (const std::exception&) {
    return kNegInf;
  }
}

}  // namespace

bool BoxPrior::contains(std::span<const double> theta) const {
  if (theta.size() != dim()) return false;
  for (std::size_t k = 0; k < dim(); ++k)
    if (!(theta[k] >= lo[k] && theta[k] <= hi[k])) return false;
  return true;
}

void BoxPrior::validate() const {
  if (lo.size() != hi.size() || lo.empty()) throw Error("prior bounds have inconsistent sizes");
  for (std::size_t k = 0; k < dim(); ++k)
    if (!(lo[k] < hi[k])) throw Error("prior bound " + std::to_string(k) + " has lo >= hi");
}

double log_prior(std::span<const double> theta, const BoxPrior& prior) {
  if (!prior.contains(theta)) return kNegInf;
  double lp = 0.0;
  for (std::size_t k = 0; k < prior.dim(); ++k) lp -= std::log(prior.hi[k] - prior.lo[k]);
  return lp;
}

double weight_cov(std::span<const double> log_liks, double dp) {
  const double top = max_finite(log_liks);
  const std::size_t n = log_liks.size();
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k)
    w[k] = std::isfinite(log_liks[k]) ? std::exp(dp * (log_liks[k] - top)) : 0.0;
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : w) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return sd / mean;
}

double select_delta_p(std::span<const double> log_liks, double p_current, double cov_target) {
  std::size_t finite = 0;
  for (double l : log_liks) finite += std::isfinite(l) ? 1 : 0;
  if (finite == 0) throw Error("every sample has zero likelihood");
  if (log_liks.size() < 2) return 1.0;
  const double span_left = 1.0 - p_current;
  if (span_left <= 0.0) return 1.0;
  if (weight_cov(log_liks, span_left) <= cov_target) return 1.0;
  double lo = 0.0, hi = span_left;
  while (hi - lo > 1e-8) {
    const double mid = 0.5 * (lo + hi);
    (weight_cov(log_liks, mid) <= cov_target ? lo : hi) = mid;
  }
  // Keep the schedule strictly increasing even when COV(0+) already exceeds
  // the target (many zero-likelihood samples).
  return p_current + std::max(lo, 1e-10);
}

std::vector<double> plausibility_weights(std::span<const double> log_liks, double dp) {
  const double top = max_finite(log_liks);
  std::vector<double> w(log_liks.size());
  double total = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = std::isfinite(log_liks[k]) ? std::exp(dp * (log_liks[k] - top)) : 0.0;
    total += w[k];
  }
  if (!(total > 0.0) || !std::isfinite(total)) throw Error("degenerate resampling weights");
  for (double& x : w) x /= total;
  return w;
}

namespace {

std::vector<double> log_liks_of(const SampleSet& set) {
  std::vector<double> l(set.samples.size());
  for (std::size_t k = 0; k < l.size(); ++k) l[k] = set.samples[k].log_lik;
  return l;
}

std::vector<std::size_t> multinomial(std::span<const double> w, std::size_t n, Rng& rng) {
  std::vector<double> cdf(w.size());
  std::partial_sum(w.begin(), w.end(), cdf.begin());
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) {
    const double u = rng.uniform() * cdf.back();
    i = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    i = std::min(i, w.size() - 1);
  }
  return idx;
}

}  // namespace

SampleSet resample(const SampleSet& set, double dp, Rng& rng) {
  const auto w = plausibility_weights(log_liks_of(set), dp);
  SampleSet out;
  out.p = set.p + dp;
  out.stage = set.stage + 1;
  out.samples.reserve(set.samples.size());
  for (std::size_t i : multinomial(w, set.samples.size(), rng)) out.samples.push_back(set.samples[i]);
  return out;
}

Eigen::MatrixXd population_covariance(const SampleSet& set, std::span<const double> w) {
  const std::size_t d = set.samples.front().theta.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < set.samples.size(); ++k)
    mean += w[k] * Eigen::Map<const Eigen::VectorXd>(set.samples[k].theta.data(),
                                                     static_cast<Eigen::Index>(d));
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < set.samples.size(); ++k) {
    if (w[k] == 0.0) continue;
    const Eigen::VectorXd r =
        Eigen::Map<const Eigen::VectorXd>(set.samples[k].theta.data(), static_cast<Eigen::Index>(d)) - mean;
    cov.noalias() += w[k] * r * r.transpose();
  }
  return cov;
}

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& cov) {
  double jitter = 1e-10;
  const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  for (int attempt = 0; attempt < 30; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov + (attempt == 0 ? 0.0 : jitter * scale) *
                                              Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
    if (llt.info() == Eigen::Success) return llt.matrixL();
    if (attempt > 0) jitter *= 10.0;
  }
  throw Error("proposal covariance is not positive definite");
}

MoveResult mh_move(const Sample& current, const Eigen::MatrixXd& chol, double beta, double p,
                   const LogLikelihood& log_lik, const BoxPrior& prior, Rng& rng) {
  const std::size_t d = current.theta.size();
  Eigen::VectorXd z(static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
  const double u_accept = rng.uniform();
  const Eigen::VectorXd step = beta * (chol * z);

  Sample prop;
  prop.theta = current.theta;
  for (std::size_t k = 0; k < d; ++k) prop.theta[k] += step[static_cast<Eigen::Index>(k)];

  MoveResult res{current, std::nullopt, false};
  if (!prior.contains(prop.theta)) return res;
  prop.log_prior = log_prior(prop.theta, prior);
  prop.log_lik = safe_log_lik(log_lik, prop.theta);
  res.proposal = prop;
  if (!std::isfinite(prop.log_lik)) return res;

  const double cur_target = std::isfinite(current.log_lik) ? p * current.log_lik + current.log_prior
                                                           : kNegInf;
  const double log_ratio = p * prop.log_lik + prop.log_prior - cur_target;
  if (log_ratio >= 0.0 || std::log(u_accept) < log_ratio) {
    res.sample = std::move(prop);
    res.accepted = true;
  }
  return res;
}

Result run(const LogLikelihood& log_lik, const BoxPrior& prior, const Options& opt,
           const StageCallback& on_stage) {
  prior.validate();
  if (opt.population_n < 8) throw Error("population_n must be at least 8");
  const std::size_t n = opt.population_n;
  const std::size_t d = prior.dim();
  using clock = std::chrono::steady_clock;

  Result result;
  result.map.log_lik = kNegInf;
  result.map.log_prior = 0.0;
  auto consider = [&](const Sample& s) {
    if (std::isfinite(s.log_lik) && (!std::isfinite(result.map.log_lik) ||
                                     s.log_posterior() > result.map.log_posterior()))
      result.map = s;
  };

  auto t0 = clock::now();
  SampleSet current;
  current.samples.resize(n);
  parallel_for(n, opt.workers, [&](std::size_t k) {
    Rng rng(opt.seed, "prior", {k});
    Sample& s = current.samples[k];
    s.theta.resize(d);
    for (std::size_t j = 0; j < d; ++j) s.theta[j] = rng.uniform(prior.lo[j], prior.hi[j]);
    s.log_prior = log_prior(s.theta, prior);
    s.log_lik = safe_log_lik(log_lik, s.theta);
  });
  result.evaluations += n;
  for (const auto& s : current.samples) consider(s);
  current.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  result.stages.push_back(current);
  if (on_stage) on_stage(current);

  while (current.p < 1.0) {
    if (static_cast<int>(result.stages.size()) > opt.max_stages)
      throw Error("tempering did not reach p = 1 within max_stages");
    t0 = clock::now();
    const auto lls = log_liks_of(current);
    const double p_next = select_delta_p(lls, current.p, opt.cov_target);
    const double dp = p_next - current.p;
    const auto weights = plausibility_weights(lls, dp);
    const Eigen::MatrixXd chol = robust_cholesky(population_covariance(current, weights));

    Rng resample_rng(opt.seed, "resample", {static_cast<std::uint64_t>(current.stage)});
    SampleSet next = resample(current, dp, resample_rng);
    next.p = p_next >= 1.0 ? 1.0 : p_next;

    std::vector<MoveResult> moves(n);
    parallel_for(n, opt.workers, [&](std::size_t k) {
      Rng rng(opt.seed, "mh", {static_cast<std::uint64_t>(next.stage), k});
      moves[k] = mh_move(next.samples[k], chol, opt.beta, next.p, log_lik, prior, rng);
    });
    std::size_t accepted = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (moves[k].proposal) {
        ++result.evaluations;
        consider(*moves[k].proposal);
      }
      accepted += moves[k].accepted ? 1 : 0;
      next.samples[k] = std::move(moves[k].sample);
    }
    next.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(n);
    next.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    current = std::move(next);
    result.stages.push_back(current);
    if (on_stage) on_stage(current);
  }
  if (!std::isfinite(result.map.log_lik)) throw Error("no sample with finite likelihood");
  return result;
}

}  // namespace glioma::tmcmc
