#include <algorithm>

#include "broadcast.hpp"
#include "sfae/ops.hpp"

namespace sfae::ad {

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      const double* grow = g + i * n;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shape(a_batch, b_batch);
  const std::size_t nb = numel(batch);
  // Batch offsets in units of whole matrices.
  detail::BroadcastMap ma(a_batch.empty() ? Shape{1} : a_batch, batch.empty() ? Shape{1} : batch);
  detail::BroadcastMap mb(b_batch.empty() ? Shape{1} : b_batch, batch.empty() ? Shape{1} : batch);

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nb * m * n, 0.0);
  auto xa = a.data();
  auto xb = b.data();
  for (std::size_t t = 0; t < nb; ++t) {
    gemm_nn(xa.data() + ma(t) * m * k, xb.data() + mb(t) * k * n, out.data() + t * m * n, m, k, n);
  }
  return make_result("matmul", out_shape, std::move(out), {a, b},
                     [a, b, ma, mb, nb, m, k, n](std::span<const double> g, std::span<const double>) mutable {
                       auto xa = a.data();
                       auto xb = b.data();
                       if (a.requires_grad()) {
                         auto ga = a.grad_buffer();
                         for (std::size_t t = 0; t < nb; ++t) {
                           gemm_nt(g.data() + t * m * n, xb.data() + mb(t) * k * n, ga.data() + ma(t) * m * k, m,
                                   k, n);
                         }
                       }
                       if (b.requires_grad()) {
                         auto gb = b.grad_buffer();
                         for (std::size_t t = 0; t < nb; ++t) {
                           gemm_tn(xa.data() + ma(t) * m * k, g.data() + t * m * n, gb.data() + mb(t) * k * n, m,
                                   k, n);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d expects [B,C,H,W] input and [Cout,Cin/g,kh,kw] weight, got " + to_string(x.shape()) +
                     " and " + to_string(weight.shape()));
  }
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = weight.dim(0), Cg = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  const std::size_t G = opt.groups, S = opt.stride, P = opt.padding;
  if (G == 0 || S == 0) throw ShapeError("conv2d groups and stride must be positive");
  if (Cin % G != 0 || Cout % G != 0 || Cin / G != Cg) {
    throw ShapeError("conv2d channel/group mismatch: input " + to_string(x.shape()) + ", weight " +
                     to_string(weight.shape()) + ", groups " + std::to_string(G));
  }
  if (KH % 2 == 0 || KW % 2 == 0) throw ShapeError("conv2d kernel extents must be odd");
  if (H + 2 * P < KH || W + 2 * P < KW) throw ShapeError("conv2d kernel larger than padded input");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
    throw ShapeError("conv2d bias must be [Cout], got " + to_string(bias.shape()));
  }
  const std::size_t OH = (H + 2 * P - KH) / S + 1;
  const std::size_t OW = (W + 2 * P - KW) / S + 1;
  const std::size_t Coutg = Cout / G;

  // Output columns ox with 0 <= ox*S + kx - P < W.
  auto ox_range = [=](std::size_t kx) {
    const long lo_num = static_cast<long>(P) - static_cast<long>(kx);
    const std::size_t lo = lo_num <= 0 ? 0 : static_cast<std::size_t>((lo_num + static_cast<long>(S) - 1) / static_cast<long>(S));
    const long hi_num = static_cast<long>(W) - 1 + static_cast<long>(P) - static_cast<long>(kx);
    const std::size_t hi = hi_num < 0 ? 0 : std::min(OW, static_cast<std::size_t>(hi_num) / S + 1);
    return std::pair{lo, std::max(lo, hi)};
  };

  auto xs = x.data();
  auto ws = weight.data();
  std::vector<double> out(B * Cout * OH * OW, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t oc = 0; oc < Cout; ++oc) {
      const std::size_t g = oc / Coutg;
      double* oplane = out.data() + (b * Cout + oc) * OH * OW;
      if (bias.defined()) std::fill(oplane, oplane + OH * OW, bias.data()[oc]);
      for (std::size_t ic = 0; ic < Cg; ++ic) {
        const double* iplane = xs.data() + (b * Cin + g * Cg + ic) * H * W;
        const double* wk = ws.data() + (oc * Cg + ic) * KH * KW;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const double wv = wk[ky * KW + kx];
            if (wv == 0.0) continue;
            const auto [lo, hi] = ox_range(kx);
            for (std::size_t oy = 0; oy < OH; ++oy) {
              const long iy = static_cast<long>(oy * S + ky) - static_cast<long>(P);
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              const double* irow = iplane + static_cast<std::size_t>(iy) * W;
              double* orow = oplane + oy * OW;
              if (S == 1) {
                for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox + kx - P];
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * S + kx - P];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      "conv2d", {B, Cout, OH, OW}, std::move(out), inputs,
      [=](std::span<const double> gout, std::span<const double>) mutable {
        auto xs = x.data();
        auto ws = weight.data();
        std::span<double> gx = x.requires_grad() ? x.grad_buffer() : std::span<double>{};
        std::span<double> gw = weight.requires_grad() ? weight.grad_buffer() : std::span<double>{};
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t oc = 0; oc < Cout; ++oc) {
              const double* gp = gout.data() + (b * Cout + oc) * OH * OW;
              double acc = 0.0;
              for (std::size_t i = 0; i < OH * OW; ++i) acc += gp[i];
              gb[oc] += acc;
            }
          }
        }
        if (gx.empty() && gw.empty()) return;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t oc = 0; oc < Cout; ++oc) {
            const std::size_t g = oc / Coutg;
            const double* gplane = gout.data() + (b * Cout + oc) * OH * OW;
            for (std::size_t ic = 0; ic < Cg; ++ic) {
              const std::size_t in_off = (b * Cin + g * Cg + ic) * H * W;
              const std::size_t w_off = (oc * Cg + ic) * KH * KW;
              for (std::size_t ky = 0; ky < KH; ++ky) {
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const auto [lo, hi] = ox_range(kx);
                  const double wv = ws[w_off + ky * KW + kx];
                  double wacc = 0.0;
                  for (std::size_t oy = 0; oy < OH; ++oy) {
                    const long iy = static_cast<long>(oy * S + ky) - static_cast<long>(P);
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    const std::size_t row = in_off + static_cast<std::size_t>(iy) * W;
                    const double* grow = gplane + oy * OW;
                    if (!gw.empty()) {
                      const double* irow = xs.data() + row;
                      for (std::size_t ox = lo; ox < hi; ++ox) wacc += grow[ox] * irow[ox * S + kx - P];
                    }
                    if (!gx.empty() && wv != 0.0) {
                      double* girow = gx.data() + row;
                      for (std::size_t ox = lo; ox < hi; ++ox) girow[ox * S + kx - P] += wv * grow[ox];
                    }
                  }
                  if (!gw.empty()) gw[w_off + ky * KW + kx] += wacc;
                }
              }
            }
          }
        }
      });
}

}  // namespace sfae::ad
