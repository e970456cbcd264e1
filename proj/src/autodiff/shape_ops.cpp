#include <algorithm>
#include <numeric>

#include "broadcast.hpp"
#include "sfae/ops.hpp"

namespace sfae::ad {

using detail::normalize_dim;
using detail::strides_of;

Tensor reduce(Reduce kind, const Tensor& x, std::vector<int> dims, bool keepdim) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  std::vector<bool> reduced(r, dims.empty());
  for (int d : dims) reduced[normalize_dim(d, r)] = true;

  Shape kept(r);
  std::size_t count = 1;
  for (std::size_t i = 0; i < r; ++i) {
    kept[i] = reduced[i] ? 1 : in[i];
    if (reduced[i]) count *= in[i];
  }
  if (count == 0) throw ShapeError("empty reduction");
  Shape out_shape;
  for (std::size_t i = 0; i < r; ++i) {
    if (!reduced[i] || keepdim) out_shape.push_back(kept[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Output index for every input element.
  const std::size_t n = x.numel();
  std::vector<std::size_t> target(n);
  {
    const auto ks = strides_of(kept);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      target[flat] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        if (!reduced[d]) off += ks[d];
        if (idx[d] < in[d]) break;
        if (!reduced[d]) off -= ks[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  const std::size_t m = numel(kept);
  auto xs = x.data();
  std::vector<double> out(m, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == Reduce::kMax) {
    argmax.assign(m, n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = target[i];
      if (argmax[t] == n || xs[i] > out[t]) {
        out[t] = xs[i];
        argmax[t] = i;
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out[target[i]] += xs[i];
    if (kind == Reduce::kMean) {
      for (auto& v : out) v /= static_cast<double>(count);
    }
  }

  const char* op = kind == Reduce::kSum ? "sum" : (kind == Reduce::kMean ? "mean" : "max");
  return make_result(op, out_shape, std::move(out), {x},
                     [x, kind, count, target = std::move(target), argmax = std::move(argmax)](
                         std::span<const double> g, std::span<const double>) mutable {
                       auto gx = x.grad_buffer();
                       if (kind == Reduce::kMax) {
                         for (std::size_t t = 0; t < argmax.size(); ++t) gx[argmax[t]] += g[t];
                         return;
                       }
                       const double scale = kind == Reduce::kMean ? 1.0 / static_cast<double>(count) : 1.0;
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[target[i]] * scale;
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto xs = x.data();
  return make_result("reshape", std::move(shape), std::vector<double>(xs.begin(), xs.end()), {x},
                     [x](std::span<const double> g, std::span<const double>) mutable {
                       auto gx = x.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (order.size() != r) throw ShapeError("permute order has wrong length for " + to_string(in));
  std::vector<std::size_t> check(order);
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < r; ++i) {
    if (check[i] != i) throw ShapeError("permute order is not a permutation");
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[order[i]];
  const auto is = strides_of(in);
  // src[flat_out] = flat_in
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    src[flat] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += is[order[d]];
      if (idx[d] < out_shape[d]) break;
      off -= is[order[d]] * idx[d];
      idx[d] = 0;
    }
  }
  auto xs = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xs[src[i]];
  return make_result("permute", out_shape, std::move(out), {x},
                     [x, src = std::move(src)](std::span<const double> g, std::span<const double>) mutable {
                       auto gx = x.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
                     });
}

Tensor transpose_last(const Tensor& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw ShapeError("transpose_last needs rank >= 2");
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[r - 1], order[r - 2]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t d = normalize_dim(dim, first.size());
  Shape out_shape = first;
  out_shape[d] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != d && s[i] != first[i]) {
        throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
      }
    }
    out_shape[d] += s[d];
  }
  const std::size_t outer = std::accumulate(first.begin(), first.begin() + static_cast<long>(d), std::size_t{1},
                                            std::multiplies<>());
  const std::size_t inner = std::accumulate(first.begin() + static_cast<long>(d) + 1, first.end(), std::size_t{1},
                                            std::multiplies<>());
  const std::size_t out_row = out_shape[d] * inner;
  std::vector<double> out(numel(out_shape));
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[d] * inner;
    auto ps = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(ps.begin() + static_cast<long>(o * w), w, out.begin() + static_cast<long>(o * out_row + col));
    }
    col += w;
  }
  return make_result("concat", out_shape, std::move(out), parts,
                     [parts, d, outer, inner, out_row](std::span<const double> g, std::span<const double>) mutable {
                       std::size_t col = 0;
                       for (auto& p : parts) {
                         const std::size_t w = p.shape()[d] * inner;
                         if (p.requires_grad()) {
                           auto gp = p.grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t j = 0; j < w; ++j) gp[o * w + j] += g[o * out_row + col + j];
                           }
                         }
                         col += w;
                       }
                     });
}

Tensor slice(const Tensor& x, int dim, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  const std::size_t d = normalize_dim(dim, in.size());
  if (length == 0 || start + length > in[d]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for dim of size " + std::to_string(in[d]));
  }
  Shape out_shape = in;
  out_shape[d] = length;
  const std::size_t outer = std::accumulate(in.begin(), in.begin() + static_cast<long>(d), std::size_t{1},
                                            std::multiplies<>());
  const std::size_t inner = std::accumulate(in.begin() + static_cast<long>(d) + 1, in.end(), std::size_t{1},
                                            std::multiplies<>());
  const std::size_t in_row = in[d] * inner;
  const std::size_t w = length * inner;
  auto xs = x.data();
  std::vector<double> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xs.begin() + static_cast<long>(o * in_row + start * inner), w, out.begin() + static_cast<long>(o * w));
  }
  return make_result("slice", out_shape, std::move(out), {x},
                     [x, outer, in_row, w, off = start * inner](std::span<const double> g,
                                                                std::span<const double>) mutable {
                       auto gx = x.grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < w; ++j) gx[o * in_row + off + j] += g[o * w + j];
                       }
                     });
}

}  // namespace sfae::ad
