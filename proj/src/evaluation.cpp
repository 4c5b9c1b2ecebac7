#include "glioma/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "glioma/error.hpp"
#include "glioma/parallel.hpp"
#include "glioma/version.hpp"

namespace glioma {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Compensated {
  double sum = 0.0, c = 0.0;
  void add(double v) {
    const double t = sum + v;
    c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + c; }
};

}  // namespace

double dice(const ScalarField3D& a, const ScalarField3D& b, double u_c) {
  if (a.dims() != b.dims()) throw Error("dice: dim mismatch");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] > u_c, y = b[i] > u_c;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double mae_masked(const ScalarField3D& pred, const ScalarField3D& sim, const ScalarField3D& mask) {
  if (pred.dims() != sim.dims() || pred.dims() != mask.dims()) throw Error("mae: dim mismatch");
  Compensated acc;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    acc.add(std::abs(pred[i] - sim[i]));
    ++n;
  }
  if (n == 0) throw Error("empty mask");
  return acc.value() / static_cast<double>(n);
}

TissueMae per_tissue_mae(const ScalarField3D& pred, const ScalarField3D& sim,
                         const Anatomy& anatomy) {
  if (pred.dims() != sim.dims() || pred.dims() != anatomy.dims())
    throw Error("per_tissue_mae: dim mismatch");
  std::array<Compensated, 3> acc;
  std::array<std::size_t, 3> count{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = anatomy.wm[i], g = anatomy.gm[i], c = anatomy.csf[i];
    if (w <= 0.0 && g <= 0.0 && c <= 0.0) continue;
    const int cls = (w >= g && w >= c) ? 0 : (g >= c ? 1 : 2);
    acc[cls].add(std::abs(pred[i] - sim[i]));
    ++count[cls];
  }
  auto mean = [&](int k) -> std::optional<double> {
    if (count[k] == 0) return std::nullopt;
    return acc[k].value() / static_cast<double>(count[k]);
  };
  return {mean(0), mean(1), mean(2)};
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  Compensated sum;
  for (double v : values) sum.add(v);
  s.mean = sum.value() / static_cast<double>(s.count);
  if (s.count > 1) {
    Compensated ss;
    for (double v : values) ss.add((v - s.mean) * (v - s.mean));
    s.sd = std::sqrt(ss.value() / static_cast<double>(s.count - 1));
  }
  return s;
}

std::vector<std::size_t> histogram(std::span<const double> values) {
  const auto bins = static_cast<std::size_t>(std::lround(1.0 / kHistogramBinWidth));
  std::vector<std::size_t> h(bins, 0);
  for (double v : values) {
    const auto b = static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) / kHistogramBinWidth);
    ++h[std::min(b, bins - 1)];
  }
  return h;
}

SampleMetrics evaluate_pair(const EvalPair& p) {
  SampleMetrics m;
  m.id = p.id;
  for (std::size_t t = 0; t < kDiceThresholds.size(); ++t)
    m.dice[t] = dice(p.pred, p.sim, kDiceThresholds[t]);
  ScalarField3D tumor(p.sim.dims(), p.sim.spacing_mm());
  bool any = false;
  for (std::size_t i = 0; i < tumor.size(); ++i) {
    tumor[i] = p.sim[i] > kTumorEpsilon ? 1.0 : 0.0;
    any = any || tumor[i] != 0.0;
  }
  if (any) m.mae_tumor = mae_masked(p.pred, p.sim, tumor);
  m.tissue = per_tissue_mae(p.pred, p.sim, p.anatomy);
  return m;
}

MetricReport aggregate_metrics(std::vector<SampleMetrics> samples) {
  if (samples.empty()) throw Error("no samples to aggregate");
  MetricReport report;
  report.samples = std::move(samples);
  auto collect = [&](auto&& get) {
    std::vector<double> v;
    for (const auto& s : report.samples)
      if (auto x = get(s)) v.push_back(*x);
    return v;
  };
  for (std::size_t t = 0; t < 3; ++t) {
    const auto v = collect([t](const SampleMetrics& s) { return std::optional<double>(s.dice[t]); });
    report.dice[t] = summarize(v);
    report.dice_histograms[t] = histogram(v);
  }
  const auto mae = collect([](const SampleMetrics& s) { return s.mae_tumor; });
  report.mae_tumor = summarize(mae);
  report.mae_histogram = histogram(mae);
  report.mae_wm = summarize(collect([](const SampleMetrics& s) { return s.tissue.wm; }));
  report.mae_gm = summarize(collect([](const SampleMetrics& s) { return s.tissue.gm; }));
  report.mae_csf = summarize(collect([](const SampleMetrics& s) { return s.tissue.csf; }));
  return report;
}

MetricReport evaluate_set(std::span<const EvalPair> pairs, unsigned workers) {
  if (pairs.empty()) throw Error("evaluate_set needs at least one pair");
  std::vector<SampleMetrics> samples(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t k) { samples[k] = evaluate_pair(pairs[k]); });
  return aggregate_metrics(std::move(samples));
}

namespace {

json summary_json(const Summary& s) { return {{"count", s.count}, {"mean", s.mean}, {"sd", s.sd}}; }

std::string opt_str(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(10) << *v;
  return s.str();
}

}  // namespace

void write_report(const MetricReport& report, const fs::path& dir, const json& config_echo) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "report.csv");
  if (!csv) throw Error("cannot write " + (dir / "report.csv").string());
  csv << "id,dice@0.2,dice@0.4,dice@0.8,mae_tumor,mae_wm,mae_gm,mae_csf\n";
  csv << std::setprecision(10);
  for (const auto& s : report.samples) {
    csv << s.id << ',' << s.dice[0] << ',' << s.dice[1] << ',' << s.dice[2] << ','
        << opt_str(s.mae_tumor) << ',' << opt_str(s.tissue.wm) << ',' << opt_str(s.tissue.gm)
        << ',' << opt_str(s.tissue.csf) << '\n';
  }
  json j = {{"tool_version", kVersionString},
            {"count", report.samples.size()},
            {"dice@0.2", summary_json(report.dice[0])},
            {"dice@0.4", summary_json(report.dice[1])},
            {"dice@0.8", summary_json(report.dice[2])},
            {"mae_tumor", summary_json(report.mae_tumor)},
            {"mae_wm", summary_json(report.mae_wm)},
            {"mae_gm", summary_json(report.mae_gm)},
            {"mae_csf", summary_json(report.mae_csf)},
            {"histogram_bin_width", kHistogramBinWidth},
            {"histograms",
             {{"dice@0.2", report.dice_histograms[0]},
              {"dice@0.4", report.dice_histograms[1]},
              {"dice@0.8", report.dice_histograms[2]},
              {"mae_tumor", report.mae_histogram}}},
            {"config", config_echo}};
  std::ofstream(dir / "report.json") << j.dump(2) << '\n';
}

}  // namespace glioma
