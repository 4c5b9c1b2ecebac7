#include "glioma/volumes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "glioma/error.hpp"
#include "glioma/rng.hpp"

namespace glioma {

namespace fs = std::filesystem;
using json = nlohmann::json;

int Dims::min_extent() const { return std::min({nx, ny, nz}); }

ScalarField3D::ScalarField3D(Dims dims, double spacing_mm, double fill)
    : ScalarField3D(dims, spacing_mm, std::vector<double>(dims.count(), fill)) {}

ScalarField3D::ScalarField3D(Dims dims, double spacing_mm, std::vector<double> data)
    : dims_(dims), spacing_mm_(spacing_mm), data_(std::move(data)) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0)
    throw Error("volume dims must be positive");
  if (!(spacing_mm > 0.0)) throw Error("volume spacing must be positive");
  if (data_.size() != dims.count()) throw Error("payload length mismatch");
}

Voxel ScalarField3D::voxel_of(std::size_t i) const {
  const auto nx = static_cast<std::size_t>(dims_.nx);
  const auto ny = static_cast<std::size_t>(dims_.ny);
  return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny),
          static_cast<int>(i / (nx * ny))};
}

double ScalarField3D::sum() const {
  // Neumaier summation; mass balances are checked at 1e-8 relative.
  double s = 0.0, c = 0.0;
  for (double v : data_) {
    const double t = s + v;
    c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  return s + c;
}

double ScalarField3D::max() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

void Anatomy::validate(double tolerance) const {
  if (!wm.same_grid(gm) || !wm.same_grid(csf))
    throw Error("anatomy tissue maps do not share a grid");
  for (std::size_t i = 0; i < wm.size(); ++i) {
    const double w = wm[i], g = gm[i], c = csf[i];
    if (w < -tolerance || g < -tolerance || c < -tolerance || w + g + c > 1.0 + tolerance) {
      const Voxel v = wm.voxel_of(i);
      std::ostringstream msg;
      msg << "invalid tissue probabilities at (" << v.x << "," << v.y << "," << v.z << ")";
      throw Error(msg.str());
    }
  }
}

ScalarField3D Anatomy::tissue_mask(double threshold) const {
  ScalarField3D mask(wm.dims(), wm.spacing_mm());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = wm[i] + gm[i] > threshold ? 1.0 : 0.0;
  return mask;
}

ScalarField3D crop_centered(const ScalarField3D& field, const CropSpec& spec,
                            double pad_value) {
  const Dims& d = field.dims();
  if (!d.contains(spec.center.x, spec.center.y, spec.center.z))
    throw Error("seed outside volume");
  if (spec.side <= 0) throw Error("crop side must be positive");
  const int half = spec.side / 2;
  const int x0 = spec.center.x - half, y0 = spec.center.y - half, z0 = spec.center.z - half;
  ScalarField3D out({spec.side, spec.side, spec.side}, field.spacing_mm(), pad_value);
  for (int z = 0; z < spec.side; ++z) {
    const int sz = z0 + z;
    if (sz < 0 || sz >= d.nz) continue;
    for (int y = 0; y < spec.side; ++y) {
      const int sy = y0 + y;
      if (sy < 0 || sy >= d.ny) continue;
      for (int x = 0; x < spec.side; ++x) {
        const int sx = x0 + x;
        if (sx < 0 || sx >= d.nx) continue;
        out(x, y, z) = field(sx, sy, sz);
      }
    }
  }
  return out;
}

ScalarField3D embed(const ScalarField3D& crop, Dims target_dims, Voxel center, double fill) {
  const Dims& c = crop.dims();
  ScalarField3D out(target_dims, crop.spacing_mm(), fill);
  const int x0 = center.x - c.nx / 2, y0 = center.y - c.ny / 2, z0 = center.z - c.nz / 2;
  for (int z = 0; z < c.nz; ++z) {
    const int tz = z0 + z;
    if (tz < 0 || tz >= target_dims.nz) continue;
    for (int y = 0; y < c.ny; ++y) {
      const int ty = y0 + y;
      if (ty < 0 || ty >= target_dims.ny) continue;
      for (int x = 0; x < c.nx; ++x) {
        const int tx = x0 + x;
        if (tx < 0 || tx >= target_dims.nx) continue;
        out(tx, ty, tz) = crop(x, y, z);
      }
    }
  }
  return out;
}

Anatomy crop_anatomy(const Anatomy& anatomy, const CropSpec& spec) {
  return {crop_centered(anatomy.wm, spec, 0.0), crop_centered(anatomy.gm, spec, 0.0),
          crop_centered(anatomy.csf, spec, 0.0)};
}

// ---------------------------------------------------------------------------
// On-disk format

fs::path volume_base(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".raw") {
    fs::path base = path;
    base.replace_extension();
    return base;
  }
  return path;
}

namespace {

fs::path with_suffix(const fs::path& base, const char* suffix) {
  return fs::path(base.string() + suffix);
}

void put_f32le(std::vector<char>& out, std::size_t at, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out[at + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
}

float get_f32le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

}  // namespace

void save_volume(const ScalarField3D& field, const fs::path& path) {
  const fs::path base = volume_base(path);
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  const Dims& d = field.dims();
  const json header = {{"version", 1},
                       {"dims", {d.nx, d.ny, d.nz}},
                       {"spacing_mm", field.spacing_mm()},
                       {"dtype", "f32le"},
                       {"order", "x-fastest"}};
  {
    std::ofstream js(with_suffix(base, ".json"));
    if (!js) throw Error("cannot write " + with_suffix(base, ".json").string());
    js << header.dump(2) << '\n';
  }
  std::vector<char> bytes(field.size() * 4);
  for (std::size_t i = 0; i < field.size(); ++i)
    put_f32le(bytes, 4 * i, static_cast<float>(field[i]));
  std::ofstream raw(with_suffix(base, ".raw"), std::ios::binary);
  if (!raw) throw Error("cannot write " + with_suffix(base, ".raw").string());
  raw.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!raw) throw Error("short write to " + with_suffix(base, ".raw").string());
}

ScalarField3D load_volume(const fs::path& path) {
  const fs::path base = volume_base(path);
  std::ifstream js(with_suffix(base, ".json"));
  if (!js) throw Error("cannot open " + with_suffix(base, ".json").string());
  json header;
  try {
    header = json::parse(js);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed volume header: ") + e.what());
  }
  Dims dims;
  double spacing = 0.0;
  try {
    if (header.at("version").get<int>() != 1)
      throw Error("unsupported volume version " + header.at("version").dump());
    const auto& jd = header.at("dims");
    if (!jd.is_array() || jd.size() != 3) throw Error("malformed volume header: dims");
    dims = {jd[0].get<int>(), jd[1].get<int>(), jd[2].get<int>()};
    spacing = header.at("spacing_mm").get<double>();
    if (header.at("dtype").get<std::string>() != "f32le")
      throw Error("malformed volume header: dtype must be f32le");
    if (header.at("order").get<std::string>() != "x-fastest")
      throw Error("malformed volume header: order must be x-fastest");
  } catch (const json::exception& e) {
    throw Error(std::string("malformed volume header: ") + e.what());
  }
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0 || !(spacing > 0.0))
    throw Error("malformed volume header: non-positive dims or spacing");

  std::ifstream raw(with_suffix(base, ".raw"), std::ios::binary);
  if (!raw) throw Error("cannot open " + with_suffix(base, ".raw").string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  if (bytes.size() != dims.count() * 4) throw Error("payload length mismatch");
  std::vector<double> data(dims.count());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_f32le(bytes.data() + 4 * i);
  return ScalarField3D(dims, spacing, std::move(data));
}

void save_anatomy(const Anatomy& anatomy, const fs::path& dir) {
  fs::create_directories(dir);
  save_volume(anatomy.wm, dir / "wm");
  save_volume(anatomy.gm, dir / "gm");
  save_volume(anatomy.csf, dir / "csf");
  const json manifest = {{"wm", "wm"}, {"gm", "gm"}, {"csf", "csf"}};
  std::ofstream(dir / "anatomy.json") << manifest.dump(2) << '\n';
}

Anatomy load_anatomy(const fs::path& dir) {
  Anatomy a{load_volume(dir / "wm"), load_volume(dir / "gm"), load_volume(dir / "csf")};
  a.validate(1e-6);
  return a;
}

// ---------------------------------------------------------------------------
// Phantom

namespace {

/// Smooth 0 -> 1 transition over three voxels centred on depth 0.
double cosine_ramp(double depth) {
  constexpr double half_width = 1.5;
  if (depth <= -half_width) return 0.0;
  if (depth >= half_width) return 1.0;
  return 0.5 - 0.5 * std::cos(std::numbers::pi * (depth + half_width) / (2.0 * half_width));
}

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi;

  /// Approximate signed depth in voxels, positive inside.
  double depth(double x, double y, double z) const {
    const double dx = (x - center[0]) / semi[0];
    const double dy = (y - center[1]) / semi[1];
    const double dz = (z - center[2]) / semi[2];
    const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
    return (1.0 - r) * std::min({semi[0], semi[1], semi[2]});
  }
};

}  // namespace

Anatomy gen_phantom(Dims dims, double spacing_mm, std::uint64_t rng_seed) {
  if (dims.min_extent() < 16) throw Error("phantom dims too small (need at least 16^3)");
  Rng rng(rng_seed, "phantom");
  const std::array<double, 3> extent{double(dims.nx), double(dims.ny), double(dims.nz)};
  const double scale = dims.min_extent();

  Ellipsoid brain{};
  const std::array<double, 3> brain_frac{0.44, 0.40, 0.38};
  for (int k = 0; k < 3; ++k) {
    brain.center[k] = 0.5 * (extent[k] - 1.0) + rng.uniform(-1.0, 1.0);
    brain.semi[k] = brain_frac[k] * extent[k] * rng.uniform(0.95, 1.05);
  }
  const double rim = std::max(1.5, 0.06 * scale);

  Ellipsoid white{};
  for (int k = 0; k < 3; ++k) {
    white.center[k] = brain.center[k] + rng.uniform(-0.5, 0.5);
    white.semi[k] = brain.semi[k] * rng.uniform(0.55, 0.65);
  }

  std::vector<Ellipsoid> ventricles(1 + rng.below(3));
  for (auto& v : ventricles) {
    for (int k = 0; k < 3; ++k) {
      v.center[k] = white.center[k] + rng.uniform(-0.35, 0.35) * white.semi[k];
      v.semi[k] = scale * rng.uniform(0.06, 0.12);
    }
  }

  Anatomy a{ScalarField3D(dims, spacing_mm), ScalarField3D(dims, spacing_mm),
            ScalarField3D(dims, spacing_mm)};
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        const double db = brain.depth(x, y, z);
        const double envelope = cosine_ramp(db);
        const double parenchyma = cosine_ramp(db - rim);
        double inclusion = 0.0;
        for (const auto& v : ventricles) inclusion = std::max(inclusion, cosine_ramp(v.depth(x, y, z)));
        const double wm_frac = cosine_ramp(white.depth(x, y, z));
        const double tissue = parenchyma * (1.0 - inclusion);
        const std::size_t i = a.wm.index(x, y, z);
        a.wm[i] = tissue * wm_frac;
        a.gm[i] = tissue * (1.0 - wm_frac);
        a.csf[i] = std::max(0.0, envelope - tissue);
      }
  return a;
}

Anatomy uniform_anatomy(Dims dims, double spacing_mm, double wm, double gm) {
  if (wm < 0 || gm < 0 || wm + gm > 1.0) throw Error("invalid uniform tissue fractions");
  return {ScalarField3D(dims, spacing_mm, wm), ScalarField3D(dims, spacing_mm, gm),
          ScalarField3D(dims, spacing_mm, 0.0)};
}

}  // namespace glioma
