#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace glioma {

/// Grid extent in voxels.
struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
  }
  int min_extent() const;
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Voxel {
  int x = 0;
  int y = 0;
  int z = 0;
  friend bool operator==(const Voxel&, const Voxel&) = default;
};

/// Dense 3D grid of doubles with isotropic spacing, stored x-fastest:
/// index = x + nx * (y + ny * z).
class ScalarField3D {
public:
  ScalarField3D() = default;
  ScalarField3D(Dims dims, double spacing_mm, double fill = 0.0);
  ScalarField3D(Dims dims, double spacing_mm, std::vector<double> data);

  const Dims& dims() const { return dims_; }
  double spacing_mm() const { return spacing_mm_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
  }
  Voxel voxel_of(std::size_t i) const;

  double& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
  double operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double sum() const;
  double max() const;

  bool same_grid(const ScalarField3D& other) const {
    return dims_ == other.dims_ && spacing_mm_ == other.spacing_mm_;
  }

private:
  Dims dims_{};
  double spacing_mm_ = 1.0;
  std::vector<double> data_;
};

/// WM/GM/CSF tissue probability maps on a shared grid.
struct Anatomy {
  ScalarField3D wm;
  ScalarField3D gm;
  ScalarField3D csf;

  const Dims& dims() const { return wm.dims(); }
  double spacing_mm() const { return wm.spacing_mm(); }

  /// Throws if the grids differ or a voxel violates 0 <= p and p_w + p_g + p_csf <= 1.
  void validate(double tolerance = 1e-12) const;

  /// 1 where p_w + p_g exceeds `threshold`, else 0.
  ScalarField3D tissue_mask(double threshold) const;
};

struct CropSpec {
  Voxel center;
  int side = 32;
};

/// Extracts a side^3 block whose local voxel `side/2` sits on `spec.center`.
/// Voxels outside the source are filled with `pad_value`.
ScalarField3D crop_centered(const ScalarField3D& field, const CropSpec& spec,
                            double pad_value);

/// Places `crop` back into a `target_dims` grid so that its local voxel
/// `side/2` lands on `center`. Overhanging voxels are dropped; everything else is `fill`.
ScalarField3D embed(const ScalarField3D& crop, Dims target_dims, Voxel center, double fill);

Anatomy crop_anatomy(const Anatomy& anatomy, const CropSpec& spec);

/// Writes `<base>.json` and `<base>.raw` (f32 little-endian, x-fastest).
/// Values are narrowed to float on disk.
void save_volume(const ScalarField3D& field, const std::filesystem::path& base);
ScalarField3D load_volume(const std::filesystem::path& base);

/// Removes a trailing `.json` or `.raw` so either file name can address a volume.
std::filesystem::path volume_base(const std::filesystem::path& path);

void save_anatomy(const Anatomy& anatomy, const std::filesystem::path& dir);
Anatomy load_anatomy(const std::filesystem::path& dir);

/// Deterministic synthetic head: ellipsoidal brain with a CSF rim, WM core,
/// GM shell and 1-3 ventricle-like CSF inclusions, all with cosine-ramped edges.
Anatomy gen_phantom(Dims dims, double spacing_mm, std::uint64_t rng_seed);

/// Uniform anatomy (every voxel p_w = wm, p_g = gm, p_csf = 0). Used for
/// analytic solver checks.
Anatomy uniform_anatomy(Dims dims, double spacing_mm, double wm, double gm);

}  // namespace glioma
