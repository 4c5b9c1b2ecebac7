#include "glioma/surrogate.hpp"

#ifdef __AVX512F__
#include <immintrin.h>
#endif

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "glioma/error.hpp"
#include "glioma/rng.hpp"

namespace glioma {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'G', 'S', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kNetParamNames[3] = {"D_w", "rho", "T"};

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << ']';
  return s.str();
}

std::vector<int> conv_shape(int out, int in) { return {out, in, 3, 3, 3}; }


}  // namespace

void NetConfig::validate() const {
  if (side <= 0 || !std::has_single_bit(static_cast<unsigned>(side)))
    throw ConfigError("net.side must be a positive power of two");
  if (channels <= 0) throw ConfigError("net.channels must be positive");
  if (convs_per_block < 1) throw ConfigError("net.convs_per_block must be >= 1");
  if (levels < 0 || (side >> levels) < 1) throw ConfigError("net.levels leaves no latent voxels");
  if (param_count != 3) throw ConfigError("net.param_count must be 3");
}

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

Activation::Activation(int c, Dims d, float fill)
    : channels(c), dims(d), data(static_cast<std::size_t>(c) * d.count(), fill) {}

// ---------------------------------------------------------------------------
// Weights

SurrogateWeights::SurrogateWeights(NetConfig config, ParamRanges ranges,
                                   std::map<std::string, Tensor> tensors)
    : config_(config), ranges_(ranges), tensors_(std::move(tensors)) {
  validate();
}

std::vector<std::pair<std::string, std::vector<int>>> SurrogateWeights::layout(
    const NetConfig& cfg) {
  cfg.validate();
  const int C = cfg.channels;
  const int L = cfg.latent_side();
  std::vector<std::pair<std::string, std::vector<int>>> out;
  auto conv = [&](const std::string& name, int o, int i) {
    out.emplace_back(name + ".weight", conv_shape(o, i));
    out.emplace_back(name + ".bias", std::vector<int>{o});
  };
  conv("enc.stem", C, 3);
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string level = "enc.level" + std::to_string(l);
    for (int k = 0; k < cfg.convs_per_block; ++k) conv(level + ".conv" + std::to_string(k), C, C);
    conv(level + ".down", C, C);
  }
  out.emplace_back("fc.weight", std::vector<int>{3 * L * L * L, cfg.param_count});
  out.emplace_back("fc.bias", std::vector<int>{3 * L * L * L});
  conv("dec.merge", C, C + 3);
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string level = "dec.level" + std::to_string(l);
    for (int k = 0; k < cfg.convs_per_block; ++k) conv(level + ".conv" + std::to_string(k), C, C);
  }
  conv("head", 1, C);
  return out;
}

const Tensor& SurrogateWeights::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("missing tensor " + name);
  return it->second;
}

void SurrogateWeights::validate() const {
  config_.validate();
  for (std::size_t k = 0; k < ranges_.size(); ++k)
    if (!(ranges_[k].lo < ranges_[k].hi))
      throw Error(std::string("invalid normalization range for ") + kNetParamNames[k]);
  const auto expected = layout(config_);
  for (const auto& [name, shape] : expected) {
    const Tensor& t = at(name);
    if (t.shape != shape)
      throw Error("shape mismatch for " + name + ": expected " + shape_str(shape) + ", got " +
                  shape_str(t.shape));
    if (t.values.size() != t.numel()) throw Error("value count mismatch for " + name);
    for (float v : t.values)
      if (!std::isfinite(v)) throw Error("non-finite value in " + name);
  }
  if (tensors_.size() != expected.size()) {
    for (const auto& [name, t] : tensors_) {
      const bool known = std::any_of(expected.begin(), expected.end(),
                                     [&](const auto& e) { return e.first == name; });
      if (!known) throw Error("unexpected tensor " + name);
    }
  }
}

SurrogateWeights SurrogateWeights::random(const NetConfig& cfg, const ParamRanges& ranges,
                                          std::uint64_t seed, double gain) {
  std::map<std::string, Tensor> tensors;
  std::size_t index = 0;
  for (const auto& [name, shape] : layout(cfg)) {
    Tensor t{shape, {}};
    t.values.resize(t.numel());
    Rng rng(seed, "weights", {index++});
    const bool is_bias = name.ends_with(".bias");
    // fan_in = everything but the leading output dimension
    const std::size_t fan_in = shape.size() > 1 ? t.numel() / static_cast<std::size_t>(shape[0]) : 1;
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    for (float& v : t.values)
      v = static_cast<float>(is_bias ? rng.uniform(-0.05, 0.05) : rng.uniform(-bound, bound));
    if (name == "head.bias") t.values[0] = 0.5f;
    tensors.emplace(name, std::move(t));
  }
  return SurrogateWeights(cfg, ranges, std::move(tensors));
}

namespace {

json config_json(const NetConfig& c) {
  return {{"side", c.side},
          {"channels", c.channels},
          {"convs_per_block", c.convs_per_block},
          {"levels", c.levels},
          {"param_count", c.param_count}};
}

json header_json(const SurrogateWeights& w, std::uint64_t payload_start) {
  json tensors = json::object();
  std::uint64_t offset = payload_start;
  for (const auto& [name, shape] : SurrogateWeights::layout(w.config())) {
    const std::uint64_t bytes = w.at(name).numel() * 4;
    tensors[name] = {{"shape", shape}, {"dtype", "f32le"}, {"offset", offset}, {"length", bytes}};
    offset += bytes;
  }
  json ranges = json::object();
  for (std::size_t k = 0; k < 3; ++k) ranges[kNetParamNames[k]] = {w.ranges()[k].lo, w.ranges()[k].hi};
  return {{"config", config_json(w.config())}, {"param_ranges", ranges}, {"tensors", tensors}};
}

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

}  // namespace

void save_weights(const SurrogateWeights& w, const fs::path& path) {
  w.validate();
  constexpr std::uint64_t prefix = 4 + 4 + 8;
  // Offsets are absolute, so the header length feeds back into itself; iterate
  // until the serialized length is stable (converges in two passes).
  std::string header = header_json(w, prefix).dump();
  for (;;) {
    std::string next = header_json(w, prefix + header.size()).dump();
    if (next.size() == header.size()) {
      header = std::move(next);
      break;
    }
    header = std::move(next);
  }
  std::string bytes(kMagic, 4);
  put_le(bytes, kVersion, 4);
  put_le(bytes, header.size(), 8);
  bytes += header;
  for (const auto& [name, shape] : SurrogateWeights::layout(w.config())) {
    for (float v : w.at(name).values) put_le(bytes, std::bit_cast<std::uint32_t>(v), 4);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

SurrogateWeights load_weights(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weight file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error("magic mismatch: not a TGSW weight file");
  const auto version = get_le(bytes, 4, 4);
  if (version != kVersion) throw Error("unsupported weight file version " + std::to_string(version));
  const auto header_len = get_le(bytes, 8, 8);
  if (16 + header_len > bytes.size()) throw Error("truncated weight header");

  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw Error(std::string("malformed weight header: ") + e.what());
  }

  NetConfig cfg;
  ParamRanges ranges;
  std::map<std::string, Tensor> tensors;
  try {
    const auto& jc = header.at("config");
    cfg.side = jc.at("side").get<int>();
    cfg.channels = jc.at("channels").get<int>();
    cfg.convs_per_block = jc.at("convs_per_block").get<int>();
    cfg.levels = jc.at("levels").get<int>();
    cfg.param_count = jc.at("param_count").get<int>();
    const auto& jr = header.at("param_ranges");
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& r = jr.at(kNetParamNames[k]);
      ranges[k] = {r.at(0).get<double>(), r.at(1).get<double>()};
    }
    const auto& jt = header.at("tensors");
    const auto expected = SurrogateWeights::layout(cfg);
    for (const auto& [name, shape] : expected) {
      if (!jt.contains(name)) throw Error("missing tensor " + name);
      const auto& rec = jt.at(name);
      Tensor t{rec.at("shape").get<std::vector<int>>(), {}};
      if (t.shape != shape)
        throw Error("shape mismatch for " + name + ": expected " + shape_str(shape) + ", got " +
                    shape_str(t.shape));
      if (rec.at("dtype").get<std::string>() != "f32le")
        throw Error("unsupported dtype for " + name);
      const auto offset = rec.at("offset").get<std::uint64_t>();
      const auto length = rec.at("length").get<std::uint64_t>();
      if (length != t.numel() * 4) throw Error("payload length mismatch for " + name);
      if (offset < 16 + header_len || offset + length > bytes.size())
        throw Error("payload out of bounds for " + name);
      t.values.resize(t.numel());
      for (std::size_t i = 0; i < t.values.size(); ++i)
        t.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, offset + 4 * i, 4)));
      tensors.emplace(name, std::move(t));
    }
    for (const auto& item : jt.items())
      if (!tensors.contains(item.key())) throw Error("unexpected tensor " + item.key());
  } catch (const json::exception& e) {
    throw Error(std::string("malformed weight header: ") + e.what());
  }
  return SurrogateWeights(cfg, ranges, std::move(tensors));
}

// ---------------------------------------------------------------------------
// Layers

#ifdef __AVX512F__
// Register tile of G output channels x R output rows x (16 V) outputs along x,
// held in zmm accumulators; weights are broadcast from a channel-minor copy.
// Stride 2 loads 32 consecutive inputs and keeps the even lanes. Channel
// groups are the innermost loop so the input rows of a tile stay cached.
template <int G, int R, int S>
void conv3d_tile(const float* padded, int px, int py, std::size_t pplane, int ci_n, int co_n,
                 const float* wt_all, const float* bias, Dims od, Activation& out) {
  constexpr int V = S == 1 ? 2 : 1;  // vectors per row
  const __m512i even = _mm512_set_epi32(30, 28, 26, 24, 22, 20, 18, 16, 14, 12, 10, 8, 6, 4, 2, 0);
  auto lane_mask = [](int n) -> __mmask16 {
    return n >= 16 ? __mmask16(0xFFFF) : n <= 0 ? __mmask16(0) : __mmask16((1u << n) - 1);
  };
  for (int oz = 0; oz < od.nz; ++oz)
    for (int oy0 = 0; oy0 < od.ny; oy0 += R)
      for (int ox0 = 0; ox0 < od.nx; ox0 += 16 * V) {
        const int rows = std::min(R, od.ny - oy0);
        __mmask16 om[V];
        for (int v = 0; v < V; ++v) om[v] = lane_mask(od.nx - ox0 - 16 * v);
        __mmask16 im[3][2];
        for (int kx = 0; kx < 3; ++kx)
          for (int h = 0; h < 2; ++h) im[kx][h] = lane_mask(px - (S * ox0 + kx) - 16 * h);

        for (int co0 = 0; co0 < co_n; co0 += G) {
          const int g = std::min(G, co_n - co0);
          const float* wt = wt_all + static_cast<std::size_t>(co0 / G) * ci_n * 27 * G;
          __m512 a[G][R][V];
#pragma GCC unroll 16
          for (int j = 0; j < G; ++j)
#pragma GCC unroll 16
            for (int r = 0; r < R; ++r)
#pragma GCC unroll 16
              for (int v = 0; v < V; ++v) a[j][r][v] = _mm512_set1_ps(j < g ? bias[co0 + j] : 0.0f);

          for (int ci = 0; ci < ci_n; ++ci) {
            const float* plane = padded + ci * pplane;
            const float* wc = wt + static_cast<std::size_t>(ci) * 27 * G;
#pragma GCC unroll 3
            for (int kz = 0; kz < 3; ++kz)
#pragma GCC unroll 3
              for (int ky = 0; ky < 3; ++ky) {
                const float* rowp[R];
#pragma GCC unroll 16
                for (int r = 0; r < R; ++r) {
                  // rows past the end reuse the last valid row; they are never stored
                  const int iy = S * (oy0 + std::min(r, rows - 1)) + ky;
                  rowp[r] = plane + static_cast<std::size_t>(px) * (iy + static_cast<std::size_t>(py) * (S * oz + kz)) +
                            S * ox0;
                }
#pragma GCC unroll 3
                for (int kx = 0; kx < 3; ++kx) {
                  __m512 in[R][V];
#pragma GCC unroll 16
                  for (int r = 0; r < R; ++r) {
                    if constexpr (S == 1) {
#pragma GCC unroll 16
                      for (int v = 0; v < V; ++v) in[r][v] = _mm512_maskz_loadu_ps(om[v], rowp[r] + kx + 16 * v);
                    } else {
                      const __m512 lo = _mm512_maskz_loadu_ps(im[kx][0], rowp[r] + kx);
                      const __m512 hi = _mm512_maskz_loadu_ps(im[kx][1], rowp[r] + kx + 16);
                      in[r][0] = _mm512_permutex2var_ps(lo, even, hi);
                    }
                  }
                  const float* wk = wc + ((kz * 3 + ky) * 3 + kx) * G;
#pragma GCC unroll 16
                  for (int j = 0; j < G; ++j) {
                    const __m512 b = _mm512_set1_ps(wk[j]);
#pragma GCC unroll 16
                    for (int r = 0; r < R; ++r)
#pragma GCC unroll 16
                      for (int v = 0; v < V; ++v) a[j][r][v] = _mm512_fmadd_ps(b, in[r][v], a[j][r][v]);
                  }
                }
              }
          }

          for (int j = 0; j < g; ++j)
            for (int r = 0; r < rows; ++r)
              for (int v = 0; v < V; ++v)
                if (om[v]) _mm512_mask_storeu_ps(&out.at(co0 + j, ox0 + 16 * v, oy0 + r, oz), om[v], a[j][r][v]);
        }
      }
}

template <int G, int R, int S>
void conv3d_avx512(const std::vector<float>& padded, int px, int py, std::size_t pplane, int ci_n,
                   int co_n, const float* w, const float* bias, Dims od, Activation& out) {
  const int groups = (co_n + G - 1) / G;
  std::vector<float> wt(static_cast<std::size_t>(groups) * ci_n * 27 * G, 0.0f);
  for (int co = 0; co < co_n; ++co)
    for (int ci = 0; ci < ci_n; ++ci)
      for (int t = 0; t < 27; ++t)
        wt[((static_cast<std::size_t>(co / G) * ci_n + ci) * 27 + t) * G + co % G] =
            w[(static_cast<std::size_t>(co) * ci_n + ci) * 27 + t];
  conv3d_tile<G, R, S>(padded.data(), px, py, pplane, ci_n, co_n, wt.data(), bias, od, out);
}
#endif


Activation conv3d(const Activation& in, const Tensor& kernel, const Tensor& bias, int stride) {
  if (stride != 1 && stride != 2) throw Error("conv3d stride must be 1 or 2");
  if (kernel.shape.size() != 5 || kernel.shape[2] != 3 || kernel.shape[3] != 3 ||
      kernel.shape[4] != 3)
    throw Error("conv3d kernel must be [out][in][3][3][3]");
  const int co_n = kernel.shape[0];
  const int ci_n = kernel.shape[1];
  if (ci_n != in.channels)
    throw Error("channel mismatch: kernel expects " + std::to_string(ci_n) + ", input has " +
                std::to_string(in.channels));
  if (bias.numel() != static_cast<std::size_t>(co_n)) throw Error("conv3d bias size mismatch");

  const Dims id = in.dims;
  const Dims od{(id.nx + stride - 1) / stride, (id.ny + stride - 1) / stride,
                (id.nz + stride - 1) / stride};

  // Zero halo of one voxel so the inner loops run without bounds checks.
  const int px = id.nx + 2, py = id.ny + 2, pz = id.nz + 2;
  const std::size_t pplane = static_cast<std::size_t>(px) * py * pz;
  std::vector<float> padded(pplane * ci_n, 0.0f);
  for (int c = 0; c < ci_n; ++c)
    for (int z = 0; z < id.nz; ++z)
      for (int y = 0; y < id.ny; ++y) {
        const float* src = &in.data[c * in.plane() + static_cast<std::size_t>(id.nx) * (y + static_cast<std::size_t>(id.ny) * z)];
        float* dst = &padded[c * pplane + 1 + static_cast<std::size_t>(px) * ((y + 1) + static_cast<std::size_t>(py) * (z + 1))];
        std::copy(src, src + id.nx, dst);
      }

  Activation out(co_n, od);
  const float* w = kernel.values.data();
  auto weight = [&](int co, int ci, int kz, int ky, int kx) {
    return w[((static_cast<std::size_t>(co) * ci_n + ci) * 3 + kz) * 9 + ky * 3 + kx];
  };
  // Output channels are processed in groups of four so each input load feeds
  // four accumulators.
  constexpr int kGroup = 4;

#ifdef __AVX512F__
  if (co_n == 1) {
    if (stride == 1) conv3d_avx512<1, 8, 1>(padded, px, py, pplane, ci_n, co_n, w, bias.values.data(), od, out);
    else conv3d_avx512<1, 8, 2>(padded, px, py, pplane, ci_n, co_n, w, bias.values.data(), od, out);
  } else {
    if (stride == 1) conv3d_avx512<8, 1, 1>(padded, px, py, pplane, ci_n, co_n, w, bias.values.data(), od, out);
    else conv3d_avx512<8, 2, 2>(padded, px, py, pplane, ci_n, co_n, w, bias.values.data(), od, out);
  }
  return out;
#endif
  if (stride == 1) {
    std::vector<float> a(static_cast<std::size_t>(kGroup) * od.nx);
    for (int co0 = 0; co0 < co_n; co0 += kGroup) {
      const int g = std::min(kGroup, co_n - co0);
      for (int oz = 0; oz < od.nz; ++oz)
        for (int oy = 0; oy < od.ny; ++oy) {
          for (int j = 0; j < kGroup; ++j)
            std::fill_n(&a[static_cast<std::size_t>(j) * od.nx], od.nx,
                        j < g ? bias.values[co0 + j] : 0.0f);
          float* a0 = &a[0];
          float* a1 = a0 + od.nx;
          float* a2 = a1 + od.nx;
          float* a3 = a2 + od.nx;
          for (int ci = 0; ci < ci_n; ++ci)
            for (int kz = 0; kz < 3; ++kz)
              for (int ky = 0; ky < 3; ++ky) {
                const float* row = &padded[ci * pplane + static_cast<std::size_t>(px) *
                                                             ((oy + ky) + static_cast<std::size_t>(py) * (oz + kz))];
                float wk[kGroup][3];
                for (int j = 0; j < kGroup; ++j)
                  for (int kx = 0; kx < 3; ++kx)
                    wk[j][kx] = j < g ? weight(co0 + j, ci, kz, ky, kx) : 0.0f;
                for (int ox = 0; ox < od.nx; ++ox) {
                  const float r0 = row[ox], r1 = row[ox + 1], r2 = row[ox + 2];
                  a0[ox] += wk[0][0] * r0 + wk[0][1] * r1 + wk[0][2] * r2;
                  a1[ox] += wk[1][0] * r0 + wk[1][1] * r1 + wk[1][2] * r2;
                  a2[ox] += wk[2][0] * r0 + wk[2][1] * r1 + wk[2][2] * r2;
                  a3[ox] += wk[3][0] * r0 + wk[3][1] * r1 + wk[3][2] * r2;
                }
              }
          for (int j = 0; j < g; ++j)
            std::copy_n(&a[static_cast<std::size_t>(j) * od.nx], od.nx, &out.at(co0 + j, 0, oy, oz));
        }
    }
    return out;
  }

  std::vector<float> acc(od.nx);
  for (int co = 0; co < co_n; ++co)
    for (int oz = 0; oz < od.nz; ++oz)
      for (int oy = 0; oy < od.ny; ++oy) {
        std::fill(acc.begin(), acc.end(), bias.values[co]);
        for (int ci = 0; ci < ci_n; ++ci)
          for (int kz = 0; kz < 3; ++kz)
            for (int ky = 0; ky < 3; ++ky) {
              // padded coordinate of input (2o + k - 1) is 2o + k
              const float* row = &padded[ci * pplane + static_cast<std::size_t>(px) *
                                                           ((2 * oy + ky) + static_cast<std::size_t>(py) * (2 * oz + kz))];
              const float w0 = weight(co, ci, kz, ky, 0);
              const float w1 = weight(co, ci, kz, ky, 1);
              const float w2 = weight(co, ci, kz, ky, 2);
              for (int ox = 0; ox < od.nx; ++ox)
                acc[ox] += w0 * row[2 * ox] + w1 * row[2 * ox + 1] + w2 * row[2 * ox + 2];
            }
        std::copy(acc.begin(), acc.end(), &out.at(co, 0, oy, oz));
      }
  return out;
}

Activation upsample_nn(const Activation& in) {
  const Dims d = in.dims;
  Activation out(in.channels, {2 * d.nx, 2 * d.ny, 2 * d.nz});
  for (int c = 0; c < in.channels; ++c)
    for (int z = 0; z < out.dims.nz; ++z)
      for (int y = 0; y < out.dims.ny; ++y)
        for (int x = 0; x < out.dims.nx; ++x) out.at(c, x, y, z) = in.at(c, x / 2, y / 2, z / 2);
  return out;
}

void relu_inplace(Activation& a) {
  for (float& v : a.data) v = v > 0.0f ? v : 0.0f;
}

namespace {

Activation conv_relu(const Activation& x, const SurrogateWeights& w, const std::string& name,
                     int stride = 1) {
  Activation y = conv3d(x, w.at(name + ".weight"), w.at(name + ".bias"), stride);
  relu_inplace(y);
  return y;
}

/// x + relu(conv_N(... relu(conv_1(x))))
Activation residual_block(const Activation& x, const SurrogateWeights& w, const std::string& prefix) {
  Activation t = x;
  for (int k = 0; k < w.config().convs_per_block; ++k)
    t = conv_relu(t, w, prefix + ".conv" + std::to_string(k));
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += x.data[i];
  return t;
}

}  // namespace

Activation anatomy_activation(const Anatomy& crop) {
  Activation a(3, crop.dims());
  const std::size_t n = crop.dims().count();
  const ScalarField3D* maps[3] = {&crop.wm, &crop.gm, &crop.csf};
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i) a.data[c * n + i] = static_cast<float>((*maps[c])[i]);
  return a;
}

Activation encode_anatomy(const Activation& crop, const SurrogateWeights& w) {
  const NetConfig& cfg = w.config();
  if (crop.channels != 3) throw Error("anatomy input must have 3 channels");
  if (crop.dims != Dims{cfg.side, cfg.side, cfg.side})
    throw Error("anatomy crop side " + std::to_string(crop.dims.nx) + " does not match net side " +
                std::to_string(cfg.side));
  Activation h = conv_relu(crop, w, "enc.stem");
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string level = "enc.level" + std::to_string(l);
    h = residual_block(h, w, level);
    h = conv_relu(h, w, level + ".down", 2);
  }
  return h;
}

Activation embed_parameters(const SurrogateWeights& w, const std::array<double, 3>& p) {
  const int L = w.config().latent_side();
  const Tensor& fw = w.at("fc.weight");
  const Tensor& fb = w.at("fc.bias");
  Activation out(3, {L, L, L});
  const std::size_t n = out.data.size();
  for (std::size_t o = 0; o < n; ++o) {
    double v = fb.values[o];
    for (int k = 0; k < 3; ++k) v += static_cast<double>(fw.values[o * 3 + k]) * p[k];
    out.data[o] = static_cast<float>(v);
  }
  return out;
}

std::array<double, 3> normalize_parameters(const SurrogateWeights& w, double D_w, double rho,
                                           double T) {
  const double raw[3] = {D_w, rho, T};
  std::array<double, 3> out{};
  for (int k = 0; k < 3; ++k) {
    const ParamRange r = w.ranges()[k];
    const double v = (raw[k] - r.lo) / (r.hi - r.lo);
    if (!(v >= -1e-9 && v <= 1.0 + 1e-9))
      throw Error(std::string("parameter out of training range: ") + kNetParamNames[k] + " = " +
                  std::to_string(raw[k]));
    out[k] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

ScalarField3D predict(const SurrogateWeights& w, const Anatomy& anatomy_crop, double D_w,
                      double rho, double T) {
  const NetConfig& cfg = w.config();
  const auto normalized = normalize_parameters(w, D_w, rho, T);
  const Activation latent = encode_anatomy(anatomy_activation(anatomy_crop), w);
  const Activation emb = embed_parameters(w, normalized);

  Activation cat(latent.channels + 3, latent.dims);
  std::copy(latent.data.begin(), latent.data.end(), cat.data.begin());
  std::copy(emb.data.begin(), emb.data.end(), cat.data.begin() + static_cast<std::ptrdiff_t>(latent.data.size()));

  Activation h = conv_relu(cat, w, "dec.merge");
  for (int l = 0; l < cfg.levels; ++l) {
    h = upsample_nn(h);
    h = residual_block(h, w, "dec.level" + std::to_string(l));
  }
  const Activation y = conv3d(h, w.at("head.weight"), w.at("head.bias"), 1);

  ScalarField3D out(y.dims, anatomy_crop.spacing_mm());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(static_cast<double>(y.data[i]), 0.0, 1.0);
  return out;
}

}  // namespace glioma
