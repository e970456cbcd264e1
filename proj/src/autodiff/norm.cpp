#include <cmath>

#include "sfae/ops.hpp"

namespace sfae::ad {

namespace {

// Normalizes `groups` contiguous rows of length n; the affine parameter for
// row r is index (r / inner) % channels, and is applied per element for
// layer norm (channel index = element index within the row).
struct NormLayout {
  std::size_t rows;
  std::size_t n;
  bool per_row_affine;  // instance norm: one (gamma, beta) per row
  std::size_t channels;
};

Tensor normalize(const char* op, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                 NormLayout L) {
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  std::vector<double> out(xs.size());
  std::vector<double> xhat(xs.size());
  std::vector<double> inv_std(L.rows);
  for (std::size_t r = 0; r < L.rows; ++r) {
    const double* in = xs.data() + r * L.n;
    double mu = 0.0;
    for (std::size_t i = 0; i < L.n; ++i) mu += in[i];
    mu /= static_cast<double>(L.n);
    double var = 0.0;
    for (std::size_t i = 0; i < L.n; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(L.n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < L.n; ++i) {
      const std::size_t c = L.per_row_affine ? r % L.channels : i;
      const double h = (in[i] - mu) * is;
      xhat[r * L.n + i] = h;
      out[r * L.n + i] = gs[c] * h + bs[c];
    }
  }
  return make_result(
      op, x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, L, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g, std::span<const double>) mutable {
        auto gs = gamma.data();
        std::span<double> gx = x.requires_grad() ? x.grad_buffer() : std::span<double>{};
        std::span<double> gg = gamma.requires_grad() ? gamma.grad_buffer() : std::span<double>{};
        std::span<double> gb = beta.requires_grad() ? beta.grad_buffer() : std::span<double>{};
        const double n = static_cast<double>(L.n);
        for (std::size_t r = 0; r < L.rows; ++r) {
          const std::size_t base = r * L.n;
          double sum_d = 0.0;
          double sum_dh = 0.0;
          for (std::size_t i = 0; i < L.n; ++i) {
            const std::size_t c = L.per_row_affine ? r % L.channels : i;
            const double d = g[base + i] * gs[c];
            sum_d += d;
            sum_dh += d * xhat[base + i];
            if (!gg.empty()) gg[c] += g[base + i] * xhat[base + i];
            if (!gb.empty()) gb[c] += g[base + i];
          }
          if (gx.empty()) continue;
          for (std::size_t i = 0; i < L.n; ++i) {
            const std::size_t c = L.per_row_affine ? r % L.channels : i;
            const double d = g[base + i] * gs[c];
            gx[base + i] += inv_std[r] / n * (n * d - sum_d - xhat[base + i] * sum_dh);
          }
        }
      });
}

}  // namespace

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 4) throw ShapeError("instance_norm expects [B,C,H,W], got " + to_string(x.shape()));
  const std::size_t C = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("instance_norm needs a non-empty plane, got " + to_string(x.shape()));
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("instance_norm affine parameters must be [" + std::to_string(C) + "]");
  }
  return normalize("instance_norm", x, gamma, beta, eps, {x.dim(0) * C, hw, true, C});
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (d < 2) throw ShapeError("layer_norm over a degenerate dimension of size " + std::to_string(d));
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm affine parameters must be [" + std::to_string(d) + "]");
  }
  return normalize("layer_norm", x, gamma, beta, eps, {x.numel() / d, d, false, d});
}

}  // namespace sfae::ad
