#include "sfae/freq_decomp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sfae::freq {

namespace {

void require_image(const ad::Tensor& image) {
  if (image.rank() != 4) {
    throw ad::ShapeError("expected a B x C x H x W image, got " + ad::to_string(image.shape()));
  }
  if (image.dim(2) < 2 || image.dim(3) < 2) {
    throw ad::ShapeError("image planes must be at least 2 x 2, got " + ad::to_string(image.shape()));
  }
}

Spectrum shifted(const Spectrum& s, std::size_t dr, std::size_t dc, bool centered) {
  Spectrum out{s.shape, std::vector<Complex>(s.values.size()), centered};
  const std::size_t H = s.height(), W = s.width();
  for (std::size_t p = 0; p < s.planes(); ++p) {
    const Complex* in = s.values.data() + p * H * W;
    Complex* o = out.values.data() + p * H * W;
    for (std::size_t r = 0; r < H; ++r) {
      const std::size_t rr = (r + dr) % H;
      for (std::size_t c = 0; c < W; ++c) o[rr * W + (c + dc) % W] = in[r * W + c];
    }
  }
  return out;
}

// Band index (0-based) of every centered bin.
std::vector<std::size_t> band_labels(std::size_t H, std::size_t W, const BandSpec& spec) {
  std::vector<std::size_t> label(H * W);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double rho = radial_frequency(r, c, H, W);
      std::size_t i = 0;
      while (i + 1 < spec.n_bands && rho >= spec.bands[i].high) ++i;
      label[r * W + c] = i;
    }
  }
  return label;
}

}  // namespace

Spectrum fft2(const ad::Tensor& image) {
  require_image(image);
  Spectrum s{image.shape(), std::vector<Complex>(image.numel()), false};
  auto x = image.data();
  for (std::size_t i = 0; i < x.size(); ++i) s.values[i] = {x[i], 0.0};
  const std::size_t H = s.height(), W = s.width();
  for (std::size_t p = 0; p < s.planes(); ++p) {
    fft2_plane(std::span<Complex>(s.values).subspan(p * H * W, H * W), H, W, false);
  }
  return s;
}

InverseResult ifft2(const Spectrum& spectrum) {
  if (spectrum.centered) throw SpectrumStateError("ifft2 needs an uncentered spectrum; apply ifftshift first");
  const std::size_t H = spectrum.height(), W = spectrum.width();
  std::vector<Complex> work = spectrum.values;
  for (std::size_t p = 0; p < spectrum.planes(); ++p) {
    fft2_plane(std::span<Complex>(work).subspan(p * H * W, H * W), H, W, true);
  }
  const double scale = 1.0 / static_cast<double>(H * W);
  std::vector<double> real(work.size());
  double residue = 0.0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    real[i] = work[i].real() * scale;
    residue = std::max(residue, std::fabs(work[i].imag() * scale));
  }
  InverseResult out{ad::Tensor(spectrum.shape, std::move(real)), residue, residue > kSymmetryWarningLevel};
  return out;
}

Spectrum fftshift(const Spectrum& spectrum) {
  if (spectrum.centered) throw SpectrumStateError("fftshift applied to an already centered spectrum");
  return shifted(spectrum, spectrum.height() / 2, spectrum.width() / 2, true);
}

Spectrum ifftshift(const Spectrum& spectrum) {
  if (!spectrum.centered) throw SpectrumStateError("ifftshift applied to an uncentered spectrum");
  return shifted(spectrum, (spectrum.height() + 1) / 2, (spectrum.width() + 1) / 2, false);
}

BandSpec band_boundaries(std::size_t n_bands, double f_max) {
  if (n_bands == 0) throw std::invalid_argument("band count must be at least 1");
  if (!(f_max > 0.0) || f_max > 0.5 * std::sqrt(2.0)) {
    throw std::invalid_argument("f_max must lie in (0, sqrt(2)/2], got " + std::to_string(f_max));
  }
  BandSpec spec{n_bands, f_max, std::vector<Band>(n_bands)};
  for (std::size_t i = 0; i < n_bands; ++i) {
    // 1-based band i + 1: f_max / 2^(N - (i + 1)); ldexp is exact.
    spec.bands[i].high = std::ldexp(f_max, -static_cast<int>(n_bands - 1 - i));
    spec.bands[i].low = i == 0 ? 0.0 : spec.bands[i - 1].high;
  }
  return spec;
}

double radial_frequency(std::size_t r, std::size_t c, std::size_t height, std::size_t width) {
  const double fu = (static_cast<double>(r) - static_cast<double>(height / 2)) / static_cast<double>(height);
  const double fv = (static_cast<double>(c) - static_cast<double>(width / 2)) / static_cast<double>(width);
  return std::sqrt(fu * fu + fv * fv);
}

std::vector<BandMask> radial_masks(std::size_t height, std::size_t width, const BandSpec& spec) {
  const auto label = band_labels(height, width, spec);
  std::vector<BandMask> masks(spec.n_bands);
  for (std::size_t i = 0; i < spec.n_bands; ++i) {
    masks[i] = {i, height, width, std::vector<std::uint8_t>(height * width, 0)};
  }
  for (std::size_t k = 0; k < label.size(); ++k) masks[label[k]].values[k] = 1;
  return masks;
}

ad::Tensor BandMapSet::concatenated() const {
  if (maps.empty()) throw std::logic_error("empty band map set");
  const auto& s = maps.front().shape();
  const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
  const std::size_t N = maps.size();
  std::vector<double> out(N * maps.front().numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < N; ++i) {
      auto src = maps[i].data();
      std::copy_n(src.begin() + static_cast<long>(b * C * HW), C * HW,
                  out.begin() + static_cast<long>((b * N + i) * C * HW));
    }
  }
  return ad::Tensor({B, N * C, s[2], s[3]}, std::move(out));
}

BandMapSet decompose(const ad::Tensor& image, const BandSpec& spec) {
  const Spectrum centered = fftshift(fft2(image));
  const std::size_t H = centered.height(), W = centered.width();
  const auto masks = radial_masks(H, W, spec);
  BandMapSet set;
  set.maps.reserve(spec.n_bands);
  for (const BandMask& mask : masks) {
    // F_shift,i = F_shift (.) M_i
    Spectrum band{centered.shape, std::vector<Complex>(centered.values.size()), true};
    for (std::size_t p = 0; p < centered.planes(); ++p) {
      for (std::size_t k = 0; k < H * W; ++k) {
        band.values[p * H * W + k] = centered.values[p * H * W + k] * static_cast<double>(mask.values[k]);
      }
    }
    InverseResult inv = ifft2(ifftshift(band));
    set.maps.push_back(std::move(inv.image));
    set.imag_residue.push_back(inv.max_imag_residue);
  }
  return set;
}

std::vector<double> band_energy(const ad::Tensor& image, const BandSpec& spec) {
  const Spectrum centered = fftshift(fft2(image));
  const std::size_t H = centered.height(), W = centered.width();
  const auto label = band_labels(H, W, spec);
  std::vector<double> energy(spec.n_bands, 0.0);
  for (std::size_t p = 0; p < centered.planes(); ++p) {
    for (std::size_t k = 0; k < H * W; ++k) energy[label[k]] += std::norm(centered.values[p * H * W + k]);
  }
  for (auto& e : energy) e /= static_cast<double>(H * W);
  return energy;
}

}  // namespace sfae::freq
