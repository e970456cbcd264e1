#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfae/tensor.hpp"

namespace sfae::net {

using ad::Tensor;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NetConfig {
  std::size_t n_bands = 8;
  std::size_t in_channels = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t mha_heads = 4;
  std::size_t ffn_expansion = 4;
  double gamma_max = 4.0;

  std::size_t d_model() const { return n_bands * in_channels; }
  /// Throws ConfigError when an invariant is broken.
  void validate() const;
};

inline constexpr double kNormEps = 1e-5;
inline constexpr std::size_t kCbamMaxReduction = 8;
inline constexpr std::size_t kCbamSpatialKernel = 7;

struct ConvParams {
  Tensor weight;  // [out, in / groups, k, k]
  Tensor bias;    // [out] or undefined
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
};

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct CbamParams {
  LinearParams fc1;  // Ch -> Ch / r
  LinearParams fc2;  // Ch / r -> Ch (channel gate)
  ConvParams spatial;  // 2 -> 1, 7 x 7 (spatial gate)
};

/// Strides and grouping of a residual block. The standard block strides in
/// its first conv only; the frequency block strides in both convs and groups
/// the first by band.
struct BlockLayout {
  std::size_t stride1 = 1;
  std::size_t stride2 = 1;
  std::size_t groups1 = 1;

  static BlockLayout standard(std::size_t stride) { return {stride, 1, 1}; }
  static BlockLayout frequency(std::size_t groups) { return {2, 2, groups}; }
  std::size_t total_stride() const { return stride1 * stride2; }
};

struct ResBlockParams {
  BlockLayout layout;
  ConvParams conv1;  // 3 x 3, no bias (InstanceNorm follows)
  NormParams norm1;
  ConvParams conv2;
  NormParams norm2;
  CbamParams cbam;
  ConvParams skip;  // 1 x 1 with bias; weight undefined for an identity skip
};

struct MhaParams {
  LinearParams q, k, v, out;
};

struct FusionParams {
  NormParams ln_spa, ln_freq;  // pre-attention, one per stream
  MhaParams attn_spa;          // spatial queries, frequency keys/values
  MhaParams attn_freq;         // frequency queries, spatial keys/values
  NormParams ffn_ln_spa, ffn_ln_freq;
  LinearParams ffn_spa1, ffn_spa2;
  LinearParams ffn_freq1, ffn_freq2;
};

struct HeadParams {
  LinearParams fc1;  // d -> d
  LinearParams fc2;  // d -> out, zero at init
};

struct NetParams {
  std::vector<ResBlockParams> spatial;  // 3 blocks
  std::vector<ResBlockParams> freq;     // frequency block, then a standard block
  FusionParams fusion;
  HeadParams head_orig;
  HeadParams head_freq;

  /// Every trainable tensor under a unique dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::size_t parameter_count() const;
  /// Deep copy; the copy's tensors require grad.
  NetParams clone() const;
  void zero_grad() const;
};

enum class InitMode {
  kStandard,   // CBAM gates and head output layers start at zero
  kRandomAll,  // every tensor random, for gradient-reach probes
};

NetParams init_params(const NetConfig& config, std::uint64_t seed, InitMode mode = InitMode::kStandard);

struct GammaParams {
  Tensor gamma_orig;  // B x C x 1 x 1
  Tensor gamma_freq;  // B x (N C) x 1 x 1
  double epsilon = 1e-6;
};

Tensor cbam(const Tensor& x, const CbamParams& p);
Tensor cbam_resblock(const Tensor& x, const ResBlockParams& p);

Tensor spatial_encoder(const Tensor& image, const NetParams& p, const NetConfig& config);
Tensor freq_encoder(const Tensor& bands, const NetParams& p, const NetConfig& config);

/// Feature map B x d x h x w <-> token sequence B x (h w) x d.
Tensor to_tokens(const Tensor& feature);
Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width);

struct MhaResult {
  Tensor out;      // same layout as the query input
  Tensor weights;  // B x heads x Lq x Lk
};

/// Scaled dot-product attention over token sequences B x L x d.
MhaResult mha_tokens(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, const MhaParams& p,
                     std::size_t heads);
/// Attention between feature maps B x d x h x w; positions are tokens.
MhaResult mha(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, const MhaParams& p, std::size_t heads);

struct Fused {
  Tensor z_spa;
  Tensor z_freq;
};

Fused cross_fusion(const Tensor& z_spa, const Tensor& z_freq, const FusionParams& p, std::size_t heads);

GammaParams gamma_heads(const Tensor& z_spa, const Tensor& z_freq, const NetParams& p, const NetConfig& config);

struct NetOutput {
  Tensor z_spa, z_freq;
  Fused fused;
  GammaParams gammas;
};

/// Encoders, fusion and heads. `bands` is the band-major concatenation
/// B x (N C) x H x W.
NetOutput run_network(const Tensor& image, const Tensor& bands, const NetParams& p, const NetConfig& config);

}  // namespace sfae::net
