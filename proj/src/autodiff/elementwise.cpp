#include <algorithm>
#include <cmath>

#include "broadcast.hpp"
#include "sfae/ops.hpp"

namespace sfae::ad {

namespace detail {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

std::size_t normalize_dim(int d, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int idx = d < 0 ? d + r : d;
  if (idx < 0 || idx >= r) {
    throw ShapeError("dimension " + std::to_string(d) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(idx);
}

BroadcastMap::BroadcastMap(const Shape& in, const Shape& out) {
  if (in == out) return;
  identity_ = false;
  const std::size_t r = out.size();
  const std::size_t lead = r - in.size();
  std::vector<std::size_t> in_strides(r, 0);
  const auto raw = strides_of(in);
  for (std::size_t i = 0; i < in.size(); ++i) {
    in_strides[lead + i] = in[i] == 1 ? 0 : raw[i];
  }
  const std::size_t n = numel(out);
  offsets_.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    offsets_[flat] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += in_strides[d];
      if (idx[d] < out[d]) break;
      off -= in_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

using detail::BroadcastMap;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// f(x, y) -> z; da(x, y, z) = dz/dx; db(x, y, z) = dz/dy.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  BroadcastMap ma(a.shape(), out_shape);
  BroadcastMap mb(b.shape(), out_shape);
  auto xa = a.data();
  auto xb = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xa[ma(i)], xb[mb(i)]);
  return make_result(
      op, out_shape, std::move(out), {a, b},
      [a, b, ma = std::move(ma), mb = std::move(mb), da, db](std::span<const double> g,
                                                             std::span<const double> z) mutable {
        auto xa = a.data();
        auto xb = b.data();
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[ma(i)] += g[i] * da(xa[ma(i)], xb[mb(i)], z[i]);
          }
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            gb[mb(i)] += g[i] * db(xa[ma(i)], xb[mb(i)], z[i]);
          }
        }
      });
}

// f(x) -> z; d(x, z) = dz/dx.
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D d) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_result(op, x.shape(), std::move(out), {x},
                     [x, d](std::span<const double> g, std::span<const double> z) mutable {
                       auto xs = x.data();
                       auto gx = x.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xs[i], z[i]);
                     });
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor pow(const Tensor& a, const Tensor& b) {
  return binary(
      "pow", a, b, [](double x, double y) { return std::pow(x, y); },
      [](double x, double y, double) { return y * std::pow(x, y - 1.0); },
      [](double x, double, double z) { return x > 0.0 ? z * std::log(x) : 0.0; });
}

Tensor add(const Tensor& a, double b) {
  return unary(
      "add_scalar", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(
      "mul_scalar", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor pow(const Tensor& a, double p) {
  return unary(
      "pow_scalar", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor neg(const Tensor& a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); }, [](double v, double) { return sign_of(v); });
}

Tensor sign(const Tensor& x) {
  return unary(
      "sign", x, [](double v) { return sign_of(v); }, [](double, double) { return 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double z) { return z; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::kSelu:
      return unary(
          "selu", x,
          [](double v) { return v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v); },
          [](double v, double z) { return v > 0.0 ? kSeluLambda : z + kSeluLambda * kSeluAlpha; });
    case Activation::kSigmoid:
      return unary(
          "sigmoid", x,
          [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
          },
          [](double, double z) { return z * (1.0 - z); });
    case Activation::kTanh:
      return unary(
          "tanh", x, [](double v) { return std::tanh(v); }, [](double, double z) { return 1.0 - z * z; });
  }
  throw std::invalid_argument("unknown activation");
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double* o = out.data() + r * n;
    const double m = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = std::exp(in[i] - m);
      total += o[i];
    }
    for (std::size_t i = 0; i < n; ++i) o[i] /= total;
  }
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [x, n](std::span<const double> g, std::span<const double> y) mutable {
                       auto gx = x.grad_buffer();
                       const std::size_t rows = g.size() / n;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * n;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < n; ++i) dot += g[base + i] * y[base + i];
                         for (std::size_t i = 0; i < n; ++i) gx[base + i] += y[base + i] * (g[base + i] - dot);
                       }
                     });
}

}  // namespace sfae::ad
