#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "glioma/volumes.hpp"

namespace glioma {

/// Tumor-mask threshold standing in for "density greater than zero".
inline constexpr double kTumorEpsilon = 1e-5;
inline constexpr std::array<double, 3> kDiceThresholds = {0.2, 0.4, 0.8};
inline constexpr double kHistogramBinWidth = 0.02;

/// 2|X n Y| / (|X| + |Y|) of the sets {a > u_c} and {b > u_c}; 1 when both are empty.
double dice(const ScalarField3D& a, const ScalarField3D& b, double u_c);

/// Mean |pred - sim| over voxels where mask != 0. Throws on an empty mask.
double mae_masked(const ScalarField3D& pred, const ScalarField3D& sim, const ScalarField3D& mask);

struct TissueMae {
  std::optional<double> wm;  ///< empty when no voxel is WM-dominant
  std::optional<double> gm;
  std::optional<double> csf;
};

/// MAE per dominant tissue class (argmax of p_w, p_g, p_csf; ties go to WM, then GM).
/// Background voxels (all probabilities zero) belong to no class.
TissueMae per_tissue_mae(const ScalarField3D& pred, const ScalarField3D& sim,
                         const Anatomy& anatomy);

struct EvalPair {
  std::string id;
  ScalarField3D pred;
  ScalarField3D sim;
  Anatomy anatomy;
};

struct SampleMetrics {
  std::string id;
  std::array<double, 3> dice{};  ///< at kDiceThresholds
  std::optional<double> mae_tumor;
  TissueMae tissue;
};

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double sd = 0.0;  ///< sample standard deviation; 0 for a single value
};

/// Neumaier-compensated mean and sample standard deviation.
Summary summarize(std::span<const double> values);

/// Counts per bin of width kHistogramBinWidth on [0, 1]; values above 1 land in the last bin.
std::vector<std::size_t> histogram(std::span<const double> values);

struct MetricReport {
  std::vector<SampleMetrics> samples;
  std::array<Summary, 3> dice;
  Summary mae_tumor;
  Summary mae_wm;
  Summary mae_gm;
  Summary mae_csf;
  std::array<std::vector<std::size_t>, 3> dice_histograms;
  std::vector<std::size_t> mae_histogram;
};

SampleMetrics evaluate_pair(const EvalPair& pair);

/// Aggregates and histograms over already computed per-sample metrics.
MetricReport aggregate_metrics(std::vector<SampleMetrics> samples);

MetricReport evaluate_set(std::span<const EvalPair> pairs, unsigned workers = 1);

/// report.csv (one row per sample) and report.json (aggregates + config echo).
void write_report(const MetricReport& report, const std::filesystem::path& dir,
                  const nlohmann::json& config_echo);

}  // namespace glioma
