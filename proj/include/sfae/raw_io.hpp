#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfae/tensor.hpp"

namespace sfae::io {

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  IoError(std::string path, const std::string& what) : std::runtime_error(what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed RAW input. `offset` is the byte position in the image file where
/// parsing failed, `key` the sidecar key at fault; at most one is set.
class RawParseError : public std::runtime_error {
 public:
  RawParseError(const std::string& what, std::optional<std::size_t> offset = {}, std::string key = {})
      : std::runtime_error(what), offset_(offset), key_(std::move(key)) {}
  std::optional<std::size_t> offset() const noexcept { return offset_; }
  const std::string& key() const noexcept { return key_; }

 private:
  std::optional<std::size_t> offset_;
  std::string key_;
};

class UnsupportedDepthError : public RawParseError {
 public:
  using RawParseError::RawParseError;
};

enum class BayerPattern { kRGGB, kBGGR, kGRBG, kGBRG };

BayerPattern parse_pattern(const std::string& name);
std::string to_string(BayerPattern pattern);

/// Packed channel (0 = R, 1 = G1, 2 = G2, 3 = B) of mosaic offset (dy, dx).
/// G1 is the green that comes first in raster order inside a quad.
std::size_t packed_channel(BayerPattern pattern, std::size_t dy, std::size_t dx);

inline constexpr std::size_t kPackedChannels = 4;
inline const std::array<std::string, kPackedChannels> kChannelNames = {"R", "G1", "G2", "B"};

struct BayerFrame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> samples;  // row-major mosaic
  BayerPattern pattern = BayerPattern::kRGGB;
  std::uint32_t black_level = 0;
  std::uint32_t white_level = 65535;
  std::string camera;

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

/// Parses a 16-bit binary PGM (P5, maxval 65535, big-endian samples).
/// Returns width, height and samples; pattern and levels are left default.
BayerFrame parse_pgm16(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm16(const BayerFrame& frame);

BayerFrame load_raw(const std::string& image_path, const std::string& sidecar_path);
void save_raw(const BayerFrame& frame, const std::string& image_path, const std::string& sidecar_path);

struct RawImage {
  ad::Tensor tensor;  // 1 x 4 x H/2 x W/2, values in [0, 1]
  std::vector<std::string> channel_semantics;
};

/// Black-level subtraction, scaling by (white - black), clamp to [0, 1].
/// Row-major H x W.
std::vector<double> normalize_mosaic(const BayerFrame& frame);
/// Rearranges a normalized mosaic into 1 x 4 x H/2 x W/2 (R, G1, G2, B).
ad::Tensor pack(std::span<const double> mosaic, std::size_t width, std::size_t height, BayerPattern pattern);
/// Inverse of pack.
std::vector<double> unpack(const ad::Tensor& packed, BayerPattern pattern);
RawImage normalize_pack(const BayerFrame& frame);

/// Heteroscedastic Gaussian noise with variance a * signal + b in normalized
/// units.
struct NoiseParams {
  double a = 5e-5;
  double b = 1e-7;
};

struct SynthOptions {
  std::size_t width = 128;   // mosaic size
  std::size_t height = 128;
  double exposure_scale = 0.05;
  NoiseParams noise;
  std::uint32_t black_level = 512;
  std::uint32_t white_level = 16383;
};

inline constexpr double kDisplayGamma = 2.2;

struct SyntheticRaw {
  BayerFrame frame;
  /// exposure * scene^2.2 before noise and quantization, packed like the
  /// frame (1 x 4 x H/2 x W/2).
  ad::Tensor clean_linear;
  /// The display-referred scene in [0, 1], packed.
  ad::Tensor scene;
};

SyntheticRaw synthesize_raw(std::uint64_t seed, const SynthOptions& options);

/// Per-channel counts over `bins` uniform bins of [0, 1]. Values are clamped;
/// v lands in bin min(floor(v * bins), bins - 1). Batch entries pool into
/// their channel.
struct Histogram {
  std::size_t bins = 0;
  std::vector<std::vector<std::uint64_t>> counts;  // [channel][bin]

  std::size_t channels() const { return counts.size(); }
  /// Counts summed over channels.
  std::vector<std::uint64_t> pooled() const;
};

Histogram histogram(const ad::Tensor& image, std::size_t bins);
/// Shannon entropy in bits of the normalized counts; 0 log 0 = 0.
double entropy(std::span<const std::uint64_t> counts);
/// Entropy of the pooled histogram.
double image_entropy(const ad::Tensor& image, std::size_t bins = 256);
/// Sample skewness E[(x - mu)^3] / sigma^3; 0 for constant input.
double skewness(std::span<const double> values);

enum class NormalizeMode { kClamp01, kMinMax };

/// Maps a row-major H x W slice to bytes (round half up).
std::vector<std::uint8_t> to_bytes(std::span<const double> values, NormalizeMode mode);
void write_image(std::span<const double> values, std::size_t height, std::size_t width, const std::string& path,
                 NormalizeMode mode);

/// Header `bin_lo,bin_hi,count_c0,...`.
std::string histogram_csv(const Histogram& hist);
void write_text(const std::string& path, const std::string& text);

}  // namespace sfae::io
