#pragma once

#include <cstddef>
#include <vector>

#include "sfae/tensor.hpp"

namespace sfae::ad {

// Elementwise, trailing-dimension broadcasting.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// a^b with a > 0 wherever the gradient w.r.t. b is needed.
Tensor pow(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor pow(const Tensor& a, double p);
Tensor neg(const Tensor& a);

/// |x|; the derivative at 0 is taken as 0.
Tensor abs(const Tensor& x);
/// sign(x) in {-1, 0, 1}; zero gradient everywhere.
Tensor sign(const Tensor& x);
/// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Activations.
inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

enum class Activation { kSelu, kSigmoid, kTanh };
Tensor activation(Activation kind, const Tensor& x);
inline Tensor selu(const Tensor& x) { return activation(Activation::kSelu, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(Activation::kSigmoid, x); }
inline Tensor tanh(const Tensor& x) { return activation(Activation::kTanh, x); }

/// Stable softmax over the last dimension.
Tensor softmax(const Tensor& x);

// Contractions.

/// [..., m, k] x [..., k, n] -> [..., m, n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Cross-correlation with zero padding. `weight` is [Cout, Cin/groups, kh, kw];
/// `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

// Normalization.

/// Per-(sample, channel) normalization of [B, C, H, W] with affine [C].
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Normalization over the last dimension with affine [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Reductions.

enum class Reduce { kSum, kMean, kMax };

/// Reduces over `dims` (negative allowed; empty means all). Max routes the
/// gradient to the first maximal element in flat order.
Tensor reduce(Reduce kind, const Tensor& x, std::vector<int> dims = {}, bool keepdim = false);
inline Tensor sum(const Tensor& x, std::vector<int> dims = {}, bool keepdim = false) {
  return reduce(Reduce::kSum, x, std::move(dims), keepdim);
}
inline Tensor mean(const Tensor& x, std::vector<int> dims = {}, bool keepdim = false) {
  return reduce(Reduce::kMean, x, std::move(dims), keepdim);
}
inline Tensor max(const Tensor& x, std::vector<int> dims = {}, bool keepdim = false) {
  return reduce(Reduce::kMax, x, std::move(dims), keepdim);
}

// Layout.

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
/// Swaps the last two dimensions.
Tensor transpose_last(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int dim);
Tensor slice(const Tensor& x, int dim, std::size_t start, std::size_t length);

/// x[..., in] * weight[in, out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace sfae::ad
