#include "glioma/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "glioma/error.hpp"
#include "glioma/parallel.hpp"
#include "glioma/rng.hpp"
#include "glioma/version.hpp"

namespace glioma {

namespace fs = std::filesystem;
using json = nlohmann::json;

DatasetDraw draw_dataset_sample(const std::vector<Anatomy>& anatomies, const DatasetOptions& opt,
                                std::size_t k) {
  if (anatomies.empty()) throw Error("dataset needs at least one anatomy");
  Rng rng(opt.seed, "dataset", {static_cast<std::uint64_t>(k)});
  DatasetDraw d;
  d.anatomy = static_cast<std::size_t>(rng.below(anatomies.size()));
  d.params.D_w = rng.uniform(opt.D_w.lo, opt.D_w.hi);
  d.params.rho = rng.uniform(opt.rho.lo, opt.rho.hi);
  d.params.T = opt.t_step * static_cast<double>(1 + rng.below(static_cast<std::uint64_t>(opt.t_steps)));
  const Anatomy& a = anatomies[d.anatomy];
  const double thr = opt.solver.csf_domain_threshold;
  for (int attempt = 0; attempt < opt.max_seed_attempts; ++attempt) {
    const std::array<double, 3> f{rng.uniform(), rng.uniform(), rng.uniform()};
    const Voxel v = seed_voxel(a.dims(), f);
    const std::size_t i = a.wm.index(v.x, v.y, v.z);
    if (a.wm[i] + a.gm[i] > thr) {
      d.params.seed = f;
      d.seed_voxel = v;
      return d;
    }
  }
  throw Error("no valid seed found");
}

json write_dataset(const std::vector<Anatomy>& anatomies, const std::vector<std::string>& ids,
                   const DatasetOptions& opt, const fs::path& out) {
  if (anatomies.size() != ids.size()) throw Error("one id per anatomy required");
  if (opt.crop_side <= 0) throw ConfigError("crop side must be positive");
  opt.solver.validate();
  if (opt.count > 0 && anatomies.empty()) throw Error("dataset needs at least one anatomy");
  fs::create_directories(out);

  std::vector<json> entries(opt.count);
  parallel_for(opt.count, opt.workers, [&](std::size_t k) {
    const DatasetDraw d = draw_dataset_sample(anatomies, opt, k);
    const Anatomy& a = anatomies[d.anatomy];
    const ScalarField3D u = simulate(a, d.params, opt.solver);
    const CropSpec spec{d.seed_voxel, opt.crop_side};
    const Anatomy crop = crop_anatomy(a, spec);

    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu", k);
    const fs::path dir = out / name;
    fs::create_directories(dir);
    save_volume(crop.wm, dir / "wm");
    save_volume(crop.gm, dir / "gm");
    save_volume(crop.csf, dir / "csf");
    save_volume(crop_centered(u, spec, 0.0), dir / "tumor");
    const json params = {{"id", name},
                         {"anatomy", ids[d.anatomy]},
                         {"D_w", d.params.D_w},
                         {"rho", d.params.rho},
                         {"T", d.params.T},
                         {"seed", d.params.seed},
                         {"seed_voxel", {d.seed_voxel.x, d.seed_voxel.y, d.seed_voxel.z}},
                         {"crop_side", opt.crop_side}};
    std::ofstream(dir / "params.json") << params.dump(2) << '\n';
    entries[k] = {{"id", name}, {"dir", name}, {"anatomy", ids[d.anatomy]}};
  });

  const json manifest = {{"tool_version", kVersionString},
                         {"count", opt.count},
                         {"crop_side", opt.crop_side},
                         {"seed", opt.seed},
                         {"anatomies", ids},
                         {"ranges",
                          {{"D_w", {opt.D_w.lo, opt.D_w.hi}},
                           {"rho", {opt.rho.lo, opt.rho.hi}},
                           {"T", {opt.t_step, opt.t_step * opt.t_steps}}}},
                         {"samples", entries}};
  std::ofstream(out / "dataset.json") << manifest.dump(2) << '\n';
  return manifest;
}

std::vector<fs::path> dataset_sample_dirs(const fs::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw Error("cannot open dataset manifest " + (dir / "dataset.json").string());
  std::vector<fs::path> out;
  try {
    const json m = json::parse(in);
    for (const auto& s : m.at("samples")) out.push_back(dir / s.at("dir").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(std::string("malformed dataset manifest: ") + e.what());
  }
  return out;
}

DatasetSample load_dataset_sample(const fs::path& dir) {
  std::ifstream in(dir / "params.json");
  if (!in) throw Error("cannot open " + (dir / "params.json").string());
  DatasetSample s;
  try {
    const json p = json::parse(in);
    s.id = p.at("id").get<std::string>();
    s.anatomy_id = p.at("anatomy").get<std::string>();
    s.params.D_w = p.at("D_w").get<double>();
    s.params.rho = p.at("rho").get<double>();
    s.params.T = p.at("T").get<double>();
    s.params.seed = p.at("seed").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw Error("malformed " + (dir / "params.json").string() + ": " + e.what());
  }
  s.anatomy = {load_volume(dir / "wm"), load_volume(dir / "gm"), load_volume(dir / "csf")};
  s.tumor = load_volume(dir / "tumor");
  return s;
}

}  // namespace glioma
