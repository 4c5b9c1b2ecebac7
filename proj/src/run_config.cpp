#include "glioma/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

#include "glioma/error.hpp"

namespace glioma {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::string_view section,
                    std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError("unknown key " + std::string(section) + "." + item.key());
  }
}

template <typename T>
void read(const json& obj, std::string_view section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for " + std::string(section) + "." + key);
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, "config", {"solver", "net", "prior", "sampler", "paths"});

  if (j.contains("solver")) {
    const json& s = j.at("solver");
    reject_unknown(s, "solver", {"dw_dg_ratio", "csf_domain_threshold", "dt_safety",
                                 "seed_amplitude", "seed_sigma_voxels"});
    read(s, "solver", "dw_dg_ratio", c.solver.dw_dg_ratio);
    read(s, "solver", "csf_domain_threshold", c.solver.csf_domain_threshold);
    read(s, "solver", "dt_safety", c.solver.dt_safety);
    read(s, "solver", "seed_amplitude", c.solver.seed_amplitude);
    read(s, "solver", "seed_sigma_voxels", c.solver.seed_sigma_voxels);
  }
  if (j.contains("net")) {
    const json& n = j.at("net");
    reject_unknown(n, "net", {"side", "channels", "convs_per_block", "levels", "param_count"});
    read(n, "net", "side", c.net.side);
    read(n, "net", "channels", c.net.channels);
    read(n, "net", "convs_per_block", c.net.convs_per_block);
    read(n, "net", "levels", c.net.levels);
    read(n, "net", "param_count", c.net.param_count);
  }
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    if (!p.is_object()) throw ConfigError("prior must be an object");
    for (const auto& item : p.items()) {
      std::size_t k = 0;
      while (k < kParamCount && kParamNames[k] != item.key()) ++k;
      if (k == kParamCount) throw ConfigError("unknown key prior." + item.key());
      const json& r = item.value();
      if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
        throw ConfigError("prior." + item.key() + " must be [lo, hi]");
      c.prior.bounds[k] = {r[0].get<double>(), r[1].get<double>()};
    }
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    reject_unknown(s, "sampler", {"population_n", "cov_target", "beta", "seed"});
    read(s, "sampler", "population_n", c.sampler.population_n);
    read(s, "sampler", "cov_target", c.sampler.cov_target);
    read(s, "sampler", "beta", c.sampler.beta);
    read(s, "sampler", "seed", c.sampler.seed);
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    reject_unknown(p, "paths", {"anatomy", "observation", "weights", "out", "truth"});
    for (const auto& item : p.items()) {
      if (!item.value().is_string()) throw ConfigError("paths." + item.key() + " must be a string");
      c.paths[item.key()] = item.value().get<std::string>();
    }
  }

  c.solver.validate();
  c.net.validate();
  c.prior.validate();
  if (c.sampler.population_n < 8) throw ConfigError("sampler.population_n must be >= 8");
  if (!(c.sampler.cov_target > 0.0)) throw ConfigError("sampler.cov_target must be positive");
  if (!(c.sampler.beta >= 0.0)) throw ConfigError("sampler.beta must be non-negative");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json prior_j = json::object();
  for (std::size_t k = 0; k < kParamCount; ++k)
    prior_j[std::string(kParamNames[k])] = {prior.bounds[k].lo, prior.bounds[k].hi};
  return {{"solver",
           {{"dw_dg_ratio", solver.dw_dg_ratio},
            {"csf_domain_threshold", solver.csf_domain_threshold},
            {"dt_safety", solver.dt_safety},
            {"seed_amplitude", solver.seed_amplitude},
            {"seed_sigma_voxels", solver.seed_sigma_voxels}}},
          {"net",
           {{"side", net.side},
            {"channels", net.channels},
            {"convs_per_block", net.convs_per_block},
            {"levels", net.levels},
            {"param_count", net.param_count}}},
          {"prior", prior_j},
          {"sampler",
           {{"population_n", sampler.population_n},
            {"cov_target", sampler.cov_target},
            {"beta", sampler.beta},
            {"seed", sampler.seed}}},
          {"paths", paths}};
}

}  // namespace glioma
