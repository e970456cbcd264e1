#pragma once

#include <cstddef>
#include <vector>

#include "sfae/enhancer_net.hpp"
#include "sfae/freq_decomp.hpp"
#include "sfae/tensor.hpp"

namespace sfae::pipeline {

using ad::Tensor;

inline constexpr double kSafePowEps = 1e-6;

/// sign(S) * (|S| + eps)^gamma, elementwise with broadcasting. Backward treats
/// sign as constant: dS = gamma (|S| + eps)^(gamma - 1) (0 at S = 0) and
/// dgamma = out * ln(|S| + eps). Throws std::domain_error for gamma <= 0 or
/// eps <= 0.
Tensor safe_pow(const Tensor& s, const Tensor& gamma, double eps = kSafePowEps);
Tensor safe_pow(const Tensor& s, double gamma, double eps = kSafePowEps);

struct AppliedGammas {
  Tensor enhanced_orig;                // I'_orig
  std::vector<Tensor> enhanced_bands;  // I'_freq,i
};

/// I'_orig = SafePow(I, gamma_orig); band i uses gamma_freq channels
/// [i C, (i + 1) C).
AppliedGammas apply_gammas(const Tensor& image, const freq::BandMapSet& bands, const net::GammaParams& gammas);

struct EnhanceOutput {
  Tensor enhanced;           // (orig + band_sum) / 2
  Tensor enhanced_orig;
  Tensor enhanced_band_sum;  // sum over bands
  net::GammaParams gammas;
};

/// Band sum and averaging; no clamping.
EnhanceOutput recombine(const Tensor& enhanced_orig, const std::vector<Tensor>& enhanced_bands);

/// Full forward pass on an image of any size >= 2 x 2: reflect-pads to a
/// multiple of 8, decomposes, runs the network, applies gammas, recombines
/// and crops back.
EnhanceOutput enhance(const Tensor& image, const net::NetParams& params, const net::NetConfig& config);

/// Training path for images already a multiple of 8 with precomputed
/// band-major concatenated bands B x (N C) x H x W. All bands go through one
/// broadcast SafePow and are summed over the band axis.
EnhanceOutput enhance_with_bands(const Tensor& image, const Tensor& bands, const net::NetParams& params,
                                 const net::NetConfig& config);

/// Pads bottom/right by mirror reflection (edge sample not repeated).
Tensor reflect_pad(const Tensor& image, std::size_t pad_bottom, std::size_t pad_right);

}  // namespace sfae::pipeline
