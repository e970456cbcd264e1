#include "sfae/fft.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace sfae::freq {

namespace {

constexpr std::size_t kMaxDirectRadix = 13;

Complex unit_root(std::size_t j, std::size_t n) {
  // exp(-2 pi i j / n) from the reduced fraction keeps the argument small.
  const double angle = -2.0 * std::numbers::pi * static_cast<double>(j % n) / static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

std::vector<std::size_t> factorize(std::size_t n) {
  std::vector<std::size_t> f;
  // Radix 4 first keeps the recursion shallow for powers of two.
  while (n % 4 == 0) {
    f.push_back(4);
    n /= 4;
  }
  for (std::size_t p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  if (n > 1) f.push_back(n);
  return f;
}

}  // namespace

struct FftPlan::Bluestein {
  std::size_t m = 0;
  std::vector<Complex> chirp;       // exp(-pi i j^2 / n)
  std::vector<Complex> kernel_fft;  // FFT of the conjugate chirp, wrapped to length m
  std::unique_ptr<FftPlan> inner;
  mutable std::vector<Complex> work;
};

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (n == 0) throw std::invalid_argument("FFT length must be positive");
  factors_ = factorize(n);
  const bool direct = std::all_of(factors_.begin(), factors_.end(), [](std::size_t p) { return p <= kMaxDirectRadix; });
  if (direct) {
    twiddles_.resize(n);
    for (std::size_t j = 0; j < n; ++j) twiddles_[j] = unit_root(j, n);
    scratch_.resize(n);
    return;
  }
  factors_.clear();
  auto b = std::make_unique<Bluestein>();
  b->m = 1;
  while (b->m < 2 * n - 1) b->m <<= 1;
  b->inner = std::make_unique<FftPlan>(b->m);
  b->chirp.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    // j^2 mod 2n so the angle pi * j^2 / n stays in [0, 2 pi).
    const std::size_t q = (j * j) % (2 * n);
    const double angle = -std::numbers::pi * static_cast<double>(q) / static_cast<double>(n);
    b->chirp[j] = {std::cos(angle), std::sin(angle)};
  }
  b->kernel_fft.assign(b->m, Complex{});
  b->kernel_fft[0] = std::conj(b->chirp[0]);
  for (std::size_t j = 1; j < n; ++j) {
    b->kernel_fft[j] = std::conj(b->chirp[j]);
    b->kernel_fft[b->m - j] = std::conj(b->chirp[j]);
  }
  b->inner->forward(b->kernel_fft);
  b->work.resize(b->m);
  bluestein_ = std::move(b);
}

FftPlan::~FftPlan() = default;
FftPlan::FftPlan(FftPlan&&) noexcept = default;
FftPlan& FftPlan::operator=(FftPlan&&) noexcept = default;

void FftPlan::mixed_radix(const Complex* in, std::size_t stride, Complex* out, std::size_t n,
                          std::size_t level) const {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t p = factors_[level];
  const std::size_t m = n / p;
  for (std::size_t q = 0; q < p; ++q) mixed_radix(in + q * stride, stride * p, out + q * m, m, level + 1);

  const std::size_t tw_step = n_ / n;   // twiddle index scale for this level
  const std::size_t root_step = n_ / p;  // p-th roots of unity
  Complex t[kMaxDirectRadix];
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t q = 0; q < p; ++q) {
      t[q] = q == 0 ? out[k] : out[q * m + k] * twiddles_[(q * k * tw_step) % n_];
    }
    if (p == 2) {
      out[k] = t[0] + t[1];
      out[m + k] = t[0] - t[1];
      continue;
    }
    if (p == 4) {
      const Complex a = t[0] + t[2], b = t[0] - t[2];
      const Complex c = t[1] + t[3];
      const Complex d = t[1] - t[3];
      const Complex dj{d.imag(), -d.real()};  // -i * d
      out[k] = a + c;
      out[m + k] = b + dj;
      out[2 * m + k] = a - c;
      out[3 * m + k] = b - dj;
      continue;
    }
    for (std::size_t s = 0; s < p; ++s) {
      Complex acc = t[0];
      for (std::size_t q = 1; q < p; ++q) acc += t[q] * twiddles_[((q * s) % p) * root_step];
      out[s * m + k] = acc;
    }
  }
}

void FftPlan::forward(std::span<Complex> data) const {
  if (data.size() != n_) throw std::invalid_argument("FFT buffer length does not match plan");
  if (n_ == 1) return;
  if (!bluestein_) {
    std::copy(data.begin(), data.end(), scratch_.begin());
    mixed_radix(scratch_.data(), 1, data.data(), n_, 0);
    return;
  }
  auto& b = *bluestein_;
  std::fill(b.work.begin(), b.work.end(), Complex{});
  for (std::size_t j = 0; j < n_; ++j) b.work[j] = data[j] * b.chirp[j];
  b.inner->forward(b.work);
  for (std::size_t j = 0; j < b.m; ++j) b.work[j] *= b.kernel_fft[j];
  b.inner->inverse(b.work);
  const double scale = 1.0 / static_cast<double>(b.m);
  for (std::size_t k = 0; k < n_; ++k) data[k] = b.work[k] * b.chirp[k] * scale;
}

void FftPlan::inverse(std::span<Complex> data) const {
  for (auto& v : data) v = std::conj(v);
  forward(data);
  for (auto& v : data) v = std::conj(v);
}

namespace {

// Plans are immutable apart from their scratch buffers, so each thread keeps
// its own cache.
const FftPlan& cached_plan(std::size_t n) {
  thread_local std::map<std::size_t, FftPlan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, FftPlan(n)).first;
  return it->second;
}

}  // namespace

void fft2_plane(std::span<Complex> plane, std::size_t height, std::size_t width, bool inverse) {
  if (plane.size() != height * width) throw std::invalid_argument("plane size does not match H x W");
  const FftPlan& rows = cached_plan(width);
  for (std::size_t r = 0; r < height; ++r) {
    auto row = plane.subspan(r * width, width);
    inverse ? rows.inverse(row) : rows.forward(row);
  }
  const FftPlan& cols = cached_plan(height);
  std::vector<Complex> col(height);
  for (std::size_t c = 0; c < width; ++c) {
    for (std::size_t r = 0; r < height; ++r) col[r] = plane[r * width + c];
    inverse ? cols.inverse(col) : cols.forward(col);
    for (std::size_t r = 0; r < height; ++r) plane[r * width + c] = col[r];
  }
}

}  // namespace sfae::freq
