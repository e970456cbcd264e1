#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace sfae::freq {

using Complex = std::complex<double>;

/// Exact 1-D DFT of arbitrary length. Lengths whose prime factors are all
/// small run a recursive mixed-radix Cooley-Tukey; anything else goes through
/// Bluestein's chirp-z reformulation on a power-of-two grid.
///
/// forward:  X[k] = sum_j x[j] exp(-2 pi i jk / n)   (no normalization)
/// inverse:  x[j] = sum_k X[k] exp(+2 pi i jk / n)   (no 1/n factor)
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);
  ~FftPlan();
  FftPlan(FftPlan&&) noexcept;
  FftPlan& operator=(FftPlan&&) noexcept;

  std::size_t size() const noexcept { return n_; }
  bool uses_bluestein() const noexcept { return bluestein_ != nullptr; }

  void forward(std::span<Complex> data) const;
  void inverse(std::span<Complex> data) const;

 private:
  struct Bluestein;

  void mixed_radix(const Complex* in, std::size_t stride, Complex* out, std::size_t n, std::size_t level) const;

  std::size_t n_ = 0;
  std::vector<std::size_t> factors_;
  std::vector<Complex> twiddles_;  // exp(-2 pi i j / n)
  std::unique_ptr<Bluestein> bluestein_;
  mutable std::vector<Complex> scratch_;
};

/// In-place 2-D DFT of a row-major H x W plane (rows then columns).
void fft2_plane(std::span<Complex> plane, std::size_t height, std::size_t width, bool inverse);

}  // namespace sfae::freq
