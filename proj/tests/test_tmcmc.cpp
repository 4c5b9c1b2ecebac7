#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "glioma/error.hpp"
#include "glioma/tmcmc.hpp"

using namespace glioma;
using namespace glioma::tmcmc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double Phi(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// COV with the n-1 standard deviation, in long double.
long double cov_oracle(const std::vector<double>& l, long double dp) {
  long double top = -1e300L;
  for (double x : l) top = std::max<long double>(top, x);
  std::vector<long double> w;
  for (double x : l) w.push_back(std::exp(dp * (x - top)));
  long double m = 0;
  for (auto x : w) m += x;
  m /= w.size();
  long double ss = 0;
  for (auto x : w) ss += (x - m) * (x - m);
  return std::sqrt(ss / (w.size() - 1)) / m;
}

// Root of cov_oracle = target on (0, hi] by plain bisection in long double.
long double root_oracle(const std::vector<double>& l, long double target, long double hi) {
  long double a = 0, b = hi;
  for (int it = 0; it < 200; ++it) {
    const long double m = 0.5L * (a + b);
    (cov_oracle(l, m) <= target ? a : b) = m;
  }
  return a;
}

SampleSet set_of(const std::vector<double>& l) {
  SampleSet s;
  for (std::size_t k = 0; k < l.size(); ++k) s.samples.push_back({{static_cast<double>(k)}, l[k], 0.0});
  return s;
}

BoxPrior unit_box(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)}; }

}  // namespace

TEST_CASE("log prior of a box") {
  const BoxPrior p{{0.0, -1.0, 10.0}, {2.0, 1.0, 15.0}};
  const std::vector<double> c{1.0, 0.0, 12.5};
  CHECK(log_prior(c, p) == doctest::Approx(-(std::log(2.0) + std::log(2.0) + std::log(5.0))));
  const std::vector<double> out{1.0, 1.5, 12.5};
  CHECK(log_prior(out, p) == -kInf);
  const std::vector<double> edge{0.0, 1.0, 15.0};
  CHECK(std::isfinite(log_prior(edge, p)));
  const std::vector<double> u{0.3, 0.9};
  CHECK(log_prior(u, unit_box(2)) == 0.0);
  CHECK_THROWS_AS((BoxPrior{{0.0}, {0.0}}.validate()), Error);
}

TEST_CASE("stage exponent selection") {
  SUBCASE("identical likelihoods finish immediately") {
    const std::vector<double> l(50, -3.2);
    CHECK(select_delta_p(l, 0.0, 1.0) == 1.0);
    CHECK(select_delta_p(l, 0.4, 1.0) == 1.0);
  }
  SUBCASE("two samples {0,-1}: the COV root lies beyond 1") {
    // COV(1, q) = sqrt(2)(1-q)/(1+q) = 1  =>  dp = ln((sqrt2+1)/(sqrt2-1)) ~ 1.7627
    const double root = std::log((std::numbers::sqrt2 + 1) / (std::numbers::sqrt2 - 1));
    CHECK(root > 1.0);
    const std::vector<double> l{0.0, -1.0};
    CHECK(select_delta_p(l, 0.0, 1.0) == 1.0);
    CHECK(static_cast<double>(root_oracle(l, 1.0L, 10.0L)) == doctest::Approx(root).epsilon(1e-12));
  }
  SUBCASE("two samples {0,-10}: closed-form root") {
    const double root = std::log((std::numbers::sqrt2 + 1) / (std::numbers::sqrt2 - 1)) / 10;
    const std::vector<double> l{0.0, -10.0};
    CHECK(std::abs(select_delta_p(l, 0.0, 1.0) - root) < 1e-6);
    CHECK(std::abs(select_delta_p(l, 0.25, 1.0) - (0.25 + root)) < 1e-6);
    CHECK(weight_cov(l, root) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("larger populations match the scalar root") {
    std::mt19937 g(4);
    std::normal_distribution<double> N(0, 1);
    for (int t = 0; t < 10; ++t) {
      std::vector<double> l(200);
      for (double& x : l) x = -50.0 * std::abs(N(g)) + 3.0;
      for (double target : {0.5, 1.0, 2.0}) {
        const double got = select_delta_p(l, 0.0, target);
        const double want = static_cast<double>(root_oracle(l, target, 1.0L));
        CHECK(std::abs(got - want) < 1e-6);
      }
    }
  }
  SUBCASE("unbounded COV target") {
    const std::vector<double> l{0.0, -1e4, -5.0};
    CHECK(select_delta_p(l, 0.0, 1e300) == 1.0);
  }
  SUBCASE("the schedule always advances") {
    // most samples at -inf: COV(0+) already exceeds the target
    std::vector<double> l(100, -kInf);
    l[0] = 0.0;
    const double p = select_delta_p(l, 0.3, 1.0);
    CHECK(p > 0.3);
    const std::vector<double> dead(4, -kInf);
    CHECK_THROWS_AS(select_delta_p(dead, 0.0, 1.0), Error);
  }
}

TEST_CASE("plausibility weights are shift invariant") {
  std::mt19937 g(1);
  std::uniform_real_distribution<double> U(-30, 0);
  std::vector<double> l(64);
  for (double& x : l) x = U(g);
  for (double shift : {-1e6, -123.4, 0.0, 777.0, 1e8}) {
    std::vector<double> s = l;
    for (double& x : s) x += shift;
    const auto a = plausibility_weights(l, 0.37), b = plausibility_weights(s, 0.37);
    for (std::size_t k = 0; k < l.size(); ++k) CHECK(b[k] == doctest::Approx(a[k]).epsilon(1e-6));
  }
  // large magnitudes must not overflow or underflow to all-zero
  std::vector<double> huge(8, -1e9);
  huge[3] = -1e9 + 2;
  const auto w = plausibility_weights(huge, 1.0);
  double total = 0;
  for (double x : w) total += x;
  CHECK(total == doctest::Approx(1.0));
  CHECK(w[3] > w[0]);
}

TEST_CASE("resampling") {
  SUBCASE("uniform weights: multiplicities pass a chi-square test") {
    const std::size_t n = 10;
    const SampleSet s = set_of(std::vector<double>(n, -1.0));
    std::vector<double> counts(n, 0.0);
    Rng rng(42, "test");
    for (int trial = 0; trial < 10000; ++trial) {
      const SampleSet r = resample(s, 0.5, rng);
      REQUIRE(r.samples.size() == n);
      for (const auto& x : r.samples) counts[static_cast<std::size_t>(x.theta[0])] += 1;
    }
    const double expect = 10000.0;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
    CHECK(chi2 < 21.666);  // chi-square 0.99 quantile, 9 degrees of freedom
  }
  SUBCASE("a single non-zero weight takes over") {
    std::vector<double> l(20, -kInf);
    l[7] = -2.0;
    Rng rng(1, "test");
    const SampleSet r = resample(set_of(l), 1.0, rng);
    for (const auto& x : r.samples) CHECK(x.theta[0] == 7.0);
    std::vector<double> under(20, -1e6);
    under[4] = 0.0;
    const SampleSet u = resample(set_of(under), 1.0, rng);
    for (const auto& x : u.samples) CHECK(x.theta[0] == 4.0);
  }
  SUBCASE("expected multiplicity follows the weights") {
    const std::vector<double> l{0.0, std::log(3.0), std::log(6.0)};  // weights 0.1/0.3/0.6 at dp = 1
    std::vector<double> counts(3, 0.0);
    Rng rng(5, "test");
    const int trials = 20000;
    for (int t = 0; t < trials; ++t)
      for (const auto& x : resample(set_of(l), 1.0, rng).samples) counts[static_cast<std::size_t>(x.theta[0])] += 1;
    const double n = 3.0 * trials;
    const double w[3] = {0.1, 0.3, 0.6};
    for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / n - w[k]) < 4 * std::sqrt(w[k] * (1 - w[k]) / n));
  }
  SUBCASE("stage bookkeeping and degenerate weights") {
    SampleSet s = set_of({-1.0, -2.0});
    s.p = 0.2;
    s.stage = 3;
    Rng rng(0);
    const SampleSet r = resample(s, 0.3, rng);
    CHECK(r.p == doctest::Approx(0.5));
    CHECK(r.stage == 4);
    CHECK_THROWS_AS(resample(set_of({-kInf, -kInf}), 1.0, rng), Error);
  }
}

TEST_CASE("population covariance matches a direct computation") {
  SampleSet s;
  std::mt19937 g(2);
  std::normal_distribution<double> N(0, 1);
  for (int k = 0; k < 30; ++k) s.samples.push_back({{N(g), 2 * N(g) + 1, N(g)}, 0.0, 0.0});
  std::vector<double> w(30);
  double tot = 0;
  for (double& x : w) tot += (x = std::abs(N(g)));
  for (double& x : w) x /= tot;
  const Eigen::MatrixXd c = population_covariance(s, w);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double mi = 0, mj = 0, cij = 0;
      for (int k = 0; k < 30; ++k) {
        mi += w[k] * s.samples[k].theta[i];
        mj += w[k] * s.samples[k].theta[j];
      }
      for (int k = 0; k < 30; ++k) cij += w[k] * (s.samples[k].theta[i] - mi) * (s.samples[k].theta[j] - mj);
      CHECK(c(i, j) == doctest::Approx(cij).epsilon(1e-12));
    }
}

TEST_CASE("robust cholesky") {
  Eigen::MatrixXd a(2, 2);
  a << 4, 2, 2, 3;
  const Eigen::MatrixXd L = robust_cholesky(a);
  CHECK((L * L.transpose() - a).norm() < 1e-12);
  Eigen::MatrixXd sing = Eigen::MatrixXd::Zero(3, 3);
  sing(0, 0) = 1.0;  // rank one
  const Eigen::MatrixXd Ls = robust_cholesky(sing);
  CHECK((Ls * Ls.transpose() - sing).norm() < 1e-6);
  CHECK(Ls.allFinite());
}

TEST_CASE("metropolis moves") {
  const BoxPrior box = unit_box(2);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
  int calls = 0;
  const LogLikelihood flat = [&](std::span<const double>) {
    ++calls;
    return 0.0;
  };
  const Sample start{{0.9, 0.5}, 0.0, 0.0};

  SUBCASE("out-of-box proposals are rejected without evaluation") {
    Rng rng(3);
    const MoveResult m = mh_move(start, I, 100.0, 1.0, flat, box, rng);  // almost surely outside
    CHECK_FALSE(m.accepted);
    CHECK_FALSE(m.proposal.has_value());
    CHECK(m.sample.theta == start.theta);
    CHECK(calls == 0);
  }
  SUBCASE("beta = 0 never moves") {
    Rng rng(3);
    for (int k = 0; k < 50; ++k) CHECK(mh_move(start, I, 0.0, 1.0, flat, box, rng).sample.theta == start.theta);
  }
  SUBCASE("flat target: acceptance equals the in-box proposal mass") {
    const double beta = 0.2;
    const double px = Phi((1.0 - 0.9) / beta) - Phi((0.0 - 0.9) / beta);
    const double py = Phi((1.0 - 0.5) / beta) - Phi((0.0 - 0.5) / beta);
    const double expect = px * py;
    const int n = 10000;
    int acc = 0;
    for (int k = 0; k < n; ++k) {
      Rng rng(9, "flat", {static_cast<std::uint64_t>(k)});
      acc += mh_move(start, I, beta, 1.0, flat, box, rng).accepted;
    }
    const double rate = static_cast<double>(acc) / n;
    CHECK(std::abs(rate - expect) <= 3 * std::sqrt(expect * (1 - expect) / n));
  }
  SUBCASE("a better proposal is always taken, a throwing one never") {
    const LogLikelihood uphill = [](std::span<const double> t) { return 1e3 * t[0]; };
    const Sample s{{0.5, 0.5}, 500.0, 0.0};
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(2, 2);
    e(0, 0) = 1e-12;  // proposals move only along x
    int moved_up = 0, total = 0;
    for (int k = 0; k < 200; ++k) {
      Rng rng(11, "up", {static_cast<std::uint64_t>(k)});
      const MoveResult m = mh_move(s, e * 1e6, 0.1, 1.0, uphill, box, rng);
      if (m.proposal && m.proposal->theta[0] > 0.5) {
        ++total;
        moved_up += m.accepted;
      }
    }
    CHECK(total > 0);
    CHECK(moved_up == total);
    const LogLikelihood boom = [](std::span<const double>) -> double { throw std::runtime_error("solver failed"); };
    Rng rng(1);
    const MoveResult m = mh_move(s, I, 0.01, 1.0, boom, box, rng);
    CHECK_FALSE(m.accepted);
    CHECK(m.sample.theta == s.theta);
  }
}

TEST_CASE("run: constant likelihood is a single stage of prior draws") {
  const BoxPrior box{{0.0, -2.0, 10.0}, {1.0, 2.0, 11.0}};
  Options o;
  o.population_n = 2048;
  o.seed = 3;
  const Result r = run([](std::span<const double>) { return -4.0; }, box, o);
  REQUIRE(r.stages.size() == 2);
  CHECK(r.stages.back().p == 1.0);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0;
    for (const auto& s : r.stages.back().samples) m += s.theta[j];
    m /= 2048;
    const double width = box.hi[j] - box.lo[j];
    const double se = width / std::sqrt(12.0 * 2048);
    CHECK(std::abs(m - 0.5 * (box.lo[j] + box.hi[j])) < 3 * se);
  }
}

TEST_CASE("run: schedule, population and map invariants") {
  const BoxPrior box = unit_box(2);
  const LogLikelihood ll = [](std::span<const double> t) {
    const double a = (t[0] - 0.3) / 0.05, b = (t[1] - 0.6) / 0.1;
    return -0.5 * (a * a + b * b);
  };
  Options o;
  o.population_n = 512;
  o.seed = 7;
  std::vector<double> seen;
  const Result r = run(ll, box, o, [&](const SampleSet& s) { seen.push_back(s.p); });
  REQUIRE(r.stages.size() >= 3);
  CHECK(seen.size() == r.stages.size());
  CHECK(r.stages.front().p == 0.0);
  CHECK(r.stages.back().p == 1.0);
  for (std::size_t k = 1; k < r.stages.size(); ++k) {
    CHECK(r.stages[k].p > r.stages[k - 1].p);
    CHECK(r.stages[k].stage == static_cast<int>(k));
    CHECK(r.stages[k].samples.size() == 512);
    CHECK(r.stages[k].acceptance_rate >= 0.0);
    CHECK(r.stages[k].acceptance_rate <= 1.0);
    for (const auto& s : r.stages[k].samples) CHECK(box.contains(s.theta));
  }
  double best = -kInf;
  for (const auto& st : r.stages)
    for (const auto& s : st.samples) best = std::max(best, s.log_posterior());
  CHECK(r.map.log_posterior() >= best);
  CHECK(r.map.log_lik == doctest::Approx(ll(r.map.theta)));
  CHECK(std::abs(r.map.theta[0] - 0.3) < 0.05);
  CHECK(r.evaluations >= 512);
}

TEST_CASE("run: reproducible and independent of the worker count") {
  const BoxPrior box = unit_box(3);
  const LogLikelihood ll = [](std::span<const double> t) {
    double s = 0;
    for (double x : t) s += (x - 0.5) * (x - 0.5);
    return -s / (2 * 0.01);
  };
  Options o;
  o.population_n = 256;
  o.seed = 99;
  const Result a = run(ll, box, o);
  o.workers = 3;
  const Result b = run(ll, box, o);
  REQUIRE(a.stages.size() == b.stages.size());
  for (std::size_t k = 0; k < a.stages.size(); ++k) {
    CHECK(a.stages[k].p == b.stages[k].p);
    for (std::size_t i = 0; i < a.stages[k].samples.size(); ++i)
      CHECK(a.stages[k].samples[i].theta == b.stages[k].samples[i].theta);
  }
  CHECK(a.map.theta == b.map.theta);
  o.seed = 100;
  const Result c = run(ll, box, o);
  CHECK(c.stages.front().samples.front().theta != a.stages.front().samples.front().theta);
}

TEST_CASE("run: forward failures become zero likelihood") {
  const BoxPrior box = unit_box(1);
  const LogLikelihood ll = [](std::span<const double> t) -> double {
    if (t[0] > 0.5) throw std::runtime_error("seed outside tissue domain");
    return -0.5 * std::pow((t[0] - 0.25) / 0.1, 2);
  };
  Options o;
  o.population_n = 256;
  const Result r = run(ll, box, o);
  CHECK(r.stages.back().p == 1.0);
  for (const auto& s : r.stages.back().samples) CHECK(s.theta[0] <= 0.5);
  CHECK_THROWS_AS(run([](std::span<const double>) -> double { throw std::runtime_error("x"); }, box, o), Error);
  o.population_n = 4;
  CHECK_THROWS_AS(run(ll, box, o), Error);
}
