#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "glioma/volumes.hpp"

namespace glioma {

/// Shape knobs of the anatomy-encoder / tumor-decoder network.
struct NetConfig {
  int side = 32;             ///< crop edge length, power of two
  int channels = 8;          ///< feature channels in every conv
  int convs_per_block = 2;   ///< convs inside one residual block
  int levels = 3;            ///< stride-2 downsamplings (and matching upsamplings)
  int param_count = 3;       ///< D_w, rho, T

  int latent_side() const { return side >> levels; }
  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Min-max range used to normalize one input parameter.
struct ParamRange {
  double lo = 0.0;
  double hi = 1.0;
  friend bool operator==(const ParamRange&, const ParamRange&) = default;
};

/// Training ranges for D_w, rho and T, in that order.
using ParamRanges = std::array<ParamRange, 3>;

struct Tensor {
  std::vector<int> shape;
  std::vector<float> values;

  std::size_t numel() const;
};

/// Channels-first activation volume, laid out [c][z][y][x].
struct Activation {
  int channels = 0;
  Dims dims{};
  std::vector<float> data;

  Activation() = default;
  Activation(int channels, Dims dims, float fill = 0.0f);

  std::size_t plane() const { return dims.count(); }
  float& at(int c, int x, int y, int z) {
    return data[static_cast<std::size_t>(c) * plane() +
                static_cast<std::size_t>(x) +
                static_cast<std::size_t>(dims.nx) *
                    (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.ny) * z)];
  }
  float at(int c, int x, int y, int z) const { return const_cast<Activation&>(*this).at(c, x, y, z); }
};

class SurrogateWeights {
public:
  SurrogateWeights() = default;
  SurrogateWeights(NetConfig config, ParamRanges ranges, std::map<std::string, Tensor> tensors);

  /// Reproducible uniform fan-in scaled initialisation. The head bias is 0.5
  /// so an untrained net produces mid-range densities rather than clamped ones.
  static SurrogateWeights random(const NetConfig& config, const ParamRanges& ranges,
                                 std::uint64_t seed, double gain = 1.0);

  /// Every tensor the config requires, in canonical (payload) order.
  static std::vector<std::pair<std::string, std::vector<int>>> layout(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  const ParamRanges& ranges() const { return ranges_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  const Tensor& at(const std::string& name) const;

  /// Throws on missing/unexpected tensors, shape mismatches or non-finite values.
  void validate() const;

private:
  NetConfig config_{};
  ParamRanges ranges_{};
  std::map<std::string, Tensor> tensors_;
};

/// TGSW exchange format: "TGSW", u32 version, u64 header length, JSON header,
/// raw f32le payloads at absolute offsets.
void save_weights(const SurrogateWeights& weights, const std::filesystem::path& path);
SurrogateWeights load_weights(const std::filesystem::path& path);

/// Same-padded 3x3x3 cross-correlation; output spatial dims are ceil(in / stride).
/// kernel is [out][in][3][3][3], bias is [out].
Activation conv3d(const Activation& input, const Tensor& kernel, const Tensor& bias, int stride);

/// Nearest-neighbour 2x upsampling.
Activation upsample_nn(const Activation& input);

void relu_inplace(Activation& a);

/// Stacks WM, GM, CSF into a 3-channel activation.
Activation anatomy_activation(const Anatomy& crop);

Activation encode_anatomy(const Activation& anatomy_crop, const SurrogateWeights& w);

/// FC embedding of normalized {D_w, rho, T} reshaped to [3][L][L][L].
Activation embed_parameters(const SurrogateWeights& w, const std::array<double, 3>& normalized);

/// Min-max normalization with the ranges stored in the weights.
std::array<double, 3> normalize_parameters(const SurrogateWeights& w, double D_w, double rho,
                                           double T);

/// Predicted tumor density on the crop grid, clamped to [0,1].
ScalarField3D predict(const SurrogateWeights& w, const Anatomy& anatomy_crop, double D_w,
                      double rho, double T);

}  // namespace glioma
