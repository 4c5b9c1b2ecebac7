#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "glioma/growth_model.hpp"
#include "glioma/surrogate.hpp"
#include "glioma/volumes.hpp"

namespace glioma {

/// Training-set sampling: D_w and rho uniform, T on a fixed day grid, seed
/// uniform over the tissue domain of a randomly chosen anatomy.
struct DatasetOptions {
  std::size_t count = 0;
  int crop_side = 32;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  ParamRange D_w{0.01, 0.08};
  ParamRange rho{0.0001, 0.03};
  double t_step = 50.0;
  int t_steps = 20;  ///< T in {t_step, 2 t_step, ..., t_steps * t_step}
  int max_seed_attempts = 10000;
  SolverConfig solver{};
};

struct DatasetDraw {
  std::size_t anatomy = 0;
  GrowthParams params;
  Voxel seed_voxel;
};

/// Parameters of sample `k`; depends only on (options.seed, k) and the anatomies.
/// Throws "no valid seed found" when rejection sampling gives up.
DatasetDraw draw_dataset_sample(const std::vector<Anatomy>& anatomies, const DatasetOptions& opt,
                                std::size_t k);

/// Writes `<out>/dataset.json` and one directory per sample holding
/// params.json plus wm/gm/csf/tumor crops. Returns the manifest.
nlohmann::json write_dataset(const std::vector<Anatomy>& anatomies,
                             const std::vector<std::string>& anatomy_ids,
                             const DatasetOptions& opt, const std::filesystem::path& out);

struct DatasetSample {
  std::string id;
  std::string anatomy_id;
  GrowthParams params;
  Anatomy anatomy;  ///< cropped
  ScalarField3D tumor;
};

/// Sample directories listed in `<dir>/dataset.json`, in manifest order.
std::vector<std::filesystem::path> dataset_sample_dirs(const std::filesystem::path& dir);
DatasetSample load_dataset_sample(const std::filesystem::path& sample_dir);

}  // namespace glioma
