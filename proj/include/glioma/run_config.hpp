#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "glioma/calibration.hpp"
#include "glioma/growth_model.hpp"
#include "glioma/surrogate.hpp"

namespace glioma {

struct SamplerConfig {
  std::size_t population_n = 2048;
  double cov_target = 1.0;
  double beta = 0.2;
  std::uint64_t seed = 0;
};

/// Resolved configuration for every CLI command. Missing sections take
/// defaults; unknown keys are rejected.
struct RunConfig {
  SolverConfig solver{};
  NetConfig net{};
  PriorSpec prior = PriorSpec::defaults();
  SamplerConfig sampler{};
  std::map<std::string, std::string> paths;  ///< anatomy, observation, weights, out, truth

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

}  // namespace glioma
