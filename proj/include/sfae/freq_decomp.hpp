#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sfae/fft.hpp"
#include "sfae/tensor.hpp"

namespace sfae::freq {

/// Thrown when a spectrum is shifted in the wrong direction.
class SpectrumStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Complex B x C x H x W array. `centered` records whether the zero frequency
/// sits at (floor(H/2), floor(W/2)) of every plane.
struct Spectrum {
  ad::Shape shape;
  std::vector<Complex> values;
  bool centered = false;

  std::size_t height() const { return shape[2]; }
  std::size_t width() const { return shape[3]; }
  std::size_t planes() const { return shape[0] * shape[1]; }
};

/// Forward 2-D DFT of every (batch, channel) plane; unnormalized.
Spectrum fft2(const ad::Tensor& image);

struct InverseResult {
  ad::Tensor image;                 // real part
  double max_imag_residue = 0.0;    // max |Im| discarded
  bool symmetry_warning = false;    // residue above kSymmetryWarningLevel
};

inline constexpr double kSymmetryWarningLevel = 1e-6;

/// Inverse 2-D DFT with 1/(H*W) normalization. The spectrum must be
/// uncentered.
InverseResult ifft2(const Spectrum& spectrum);

/// Circular shift by (floor(H/2), floor(W/2)).
Spectrum fftshift(const Spectrum& spectrum);
/// Exact inverse of fftshift: shift by (ceil(H/2), ceil(W/2)).
Spectrum ifftshift(const Spectrum& spectrum);

/// Half-open radial interval [low, high) in normalized frequency.
struct Band {
  double low = 0.0;
  double high = 0.0;
};

/// Octave band layout: high_i = f_max / 2^(N - i), low_1 = 0,
/// low_i = high_{i-1}.
struct BandSpec {
  std::size_t n_bands = 0;
  double f_max = 0.5;
  std::vector<Band> bands;
};

inline constexpr std::size_t kDefaultBands = 8;
inline constexpr double kDefaultFmax = 0.5;

BandSpec band_boundaries(std::size_t n_bands, double f_max = kDefaultFmax);

/// Binary H x W mask in centered indexing.
struct BandMask {
  std::size_t band_index = 0;  // 0-based
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;
};

/// Normalized radius of centered bin (r, c): fu = (r - floor(H/2)) / H,
/// fv = (c - floor(W/2)) / W, rho = sqrt(fu^2 + fv^2).
double radial_frequency(std::size_t r, std::size_t c, std::size_t height, std::size_t width);

/// One mask per band. The top band is open-ended so the spectral corners and
/// the Nyquist ring (rho >= f_max) belong to it and the masks partition the
/// grid.
std::vector<BandMask> radial_masks(std::size_t height, std::size_t width, const BandSpec& spec);

/// N real band maps of the input's shape, low to high frequency.
struct BandMapSet {
  std::vector<ad::Tensor> maps;
  std::vector<double> imag_residue;  // per band, max over planes

  std::size_t size() const { return maps.size(); }
  /// Band-major channel concatenation: channel i*C + c holds band i, channel c.
  ad::Tensor concatenated() const;
};

/// Band-limited spatialization of a B x C x H x W image. A fixed transform:
/// nothing is recorded on the autodiff tape.
BandMapSet decompose(const ad::Tensor& image, const BandSpec& spec);

/// energy_i = sum |F_shift * M_i|^2 / (H W), summed over all planes.
std::vector<double> band_energy(const ad::Tensor& image, const BandSpec& spec);

}  // namespace sfae::freq
