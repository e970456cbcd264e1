#include "sfae/raw_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

#include "sfae/kv.hpp"
#include "sfae/random.hpp"

namespace sfae::io {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path, "write failed: " + path);
}

// PGM header tokens are separated by whitespace; '#' comments run to end of
// line.
class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000) throw RawParseError(std::string("PGM ") + what + " out of range", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw RawParseError(std::string("PGM header: expected ") + what, start);
    }
    return v;
  }

  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw RawParseError("PGM header: expected whitespace before raster", pos_);
    }
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t sidecar_level(const KeyValues& kv, const std::string& key) {
  long long v = 0;
  try {
    v = kv.get_int(key);
  } catch (const KeyError& e) {
    throw RawParseError(e.what(), std::nullopt, key);
  }
  if (v < 0 || v > 65535) throw RawParseError("sidecar key '" + key + "' out of range [0, 65535]", std::nullopt, key);
  return static_cast<std::uint32_t>(v);
}

}  // namespace

BayerPattern parse_pattern(const std::string& name) {
  std::string up;
  for (char c : name) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "RGGB") return BayerPattern::kRGGB;
  if (up == "BGGR") return BayerPattern::kBGGR;
  if (up == "GRBG") return BayerPattern::kGRBG;
  if (up == "GBRG") return BayerPattern::kGBRG;
  throw std::invalid_argument("unknown Bayer pattern '" + name + "'");
}

std::string to_string(BayerPattern pattern) {
  switch (pattern) {
    case BayerPattern::kRGGB: return "RGGB";
    case BayerPattern::kBGGR: return "BGGR";
    case BayerPattern::kGRBG: return "GRBG";
    case BayerPattern::kGBRG: return "GBRG";
  }
  return "?";
}

std::size_t packed_channel(BayerPattern pattern, std::size_t dy, std::size_t dx) {
  // Raster order of the quad: (0,0), (0,1), (1,0), (1,1).
  static constexpr std::size_t kTable[4][4] = {
      {0, 1, 2, 3},  // RGGB
      {3, 1, 2, 0},  // BGGR
      {1, 0, 3, 2},  // GRBG
      {1, 3, 0, 2},  // GBRG
  };
  return kTable[static_cast<int>(pattern)][(dy & 1) * 2 + (dx & 1)];
}

void BayerFrame::validate() const {
  if (width == 0 || height == 0 || width % 2 || height % 2) {
    throw std::invalid_argument("Bayer frame must have positive even dimensions, got " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  if (samples.size() != width * height) throw std::invalid_argument("Bayer frame sample count does not match size");
  if (!(black_level < white_level) || white_level > 65535) {
    throw std::invalid_argument("need black_level < white_level <= 65535, got " + std::to_string(black_level) + ", " +
                                std::to_string(white_level));
  }
}

BayerFrame parse_pgm16(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw RawParseError("bad magic: expected P5 at byte 0", 0);
  BayerFrame f;
  // The reader starts after the magic; offsets are reported relative to the
  // whole file.
  HeaderReader hr(bytes.subspan(2));
  auto at = [](std::size_t local) { return local + 2; };
  std::size_t w, ht, maxval;
  try {
    w = hr.number("width");
    ht = hr.number("height");
    const std::size_t maxval_pos = (hr.skip_space(), hr.pos());
    maxval = hr.number("maxval");
    if (maxval != 65535) {
      throw UnsupportedDepthError("unsupported PGM depth: maxval " + std::to_string(maxval) + " (need 65535)",
                                  at(maxval_pos));
    }
    hr.single_space();
  } catch (const UnsupportedDepthError&) {
    throw;
  } catch (const RawParseError& e) {
    throw RawParseError(std::string(e.what()) + " at byte " + std::to_string(at(*e.offset())),
                        at(*e.offset()));
  }
  const std::size_t data_start = at(hr.pos());
  if (w == 0 || ht == 0) throw RawParseError("PGM has zero width or height", 2);
  if (w % 2 || ht % 2) {
    throw RawParseError("odd Bayer dimensions " + std::to_string(w) + "x" + std::to_string(ht), 2);
  }
  const std::size_t need = w * ht * 2;
  if (bytes.size() - data_start < need) {
    throw RawParseError("truncated PGM raster: expected " + std::to_string(need) + " bytes at offset " +
                            std::to_string(data_start) + ", found " + std::to_string(bytes.size() - data_start),
                        bytes.size());
  }
  f.width = w;
  f.height = ht;
  f.samples.resize(w * ht);
  for (std::size_t i = 0; i < w * ht; ++i) {
    f.samples[i] = static_cast<std::uint16_t>((bytes[data_start + 2 * i] << 8) | bytes[data_start + 2 * i + 1]);
  }
  return f;
}

std::vector<std::uint8_t> encode_pgm16(const BayerFrame& frame) {
  const std::string header = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + frame.samples.size() * 2);
  for (std::uint16_t s : frame.samples) {
    out.push_back(static_cast<std::uint8_t>(s >> 8));
    out.push_back(static_cast<std::uint8_t>(s & 0xff));
  }
  return out;
}

BayerFrame load_raw(const std::string& image_path, const std::string& sidecar_path) {
  const auto bytes = read_file(image_path);
  BayerFrame f = parse_pgm16(bytes);
  const auto meta = read_file(sidecar_path);
  KeyValues kv;
  try {
    kv = KeyValues::parse(std::string_view(reinterpret_cast<const char*>(meta.data()), meta.size()), sidecar_path);
  } catch (const KeyError& e) {
    throw RawParseError(e.what(), std::nullopt, e.key());
  } catch (const std::runtime_error& e) {
    throw RawParseError(e.what());
  }
  std::string pattern;
  try {
    pattern = kv.get_string("pattern");
  } catch (const KeyError& e) {
    throw RawParseError(e.what(), std::nullopt, "pattern");
  }
  try {
    f.pattern = parse_pattern(pattern);
  } catch (const std::invalid_argument& e) {
    throw RawParseError(sidecar_path + ": " + e.what(), std::nullopt, "pattern");
  }
  f.black_level = sidecar_level(kv, "black_level");
  f.white_level = sidecar_level(kv, "white_level");
  f.camera = kv.find("camera").value_or("");
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw RawParseError(sidecar_path + ": " + e.what(), std::nullopt, "white_level");
  }
  return f;
}

void save_raw(const BayerFrame& frame, const std::string& image_path, const std::string& sidecar_path) {
  frame.validate();
  write_file(image_path, encode_pgm16(frame));
  KeyValues kv;
  kv.set("pattern", to_string(frame.pattern));
  kv.set("black_level", std::to_string(frame.black_level));
  kv.set("white_level", std::to_string(frame.white_level));
  if (!frame.camera.empty()) kv.set("camera", frame.camera);
  write_text(sidecar_path, kv.to_text());
}

std::vector<double> normalize_mosaic(const BayerFrame& frame) {
  frame.validate();
  const double black = frame.black_level;
  const double range = static_cast<double>(frame.white_level) - black;
  std::vector<double> out(frame.samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp((frame.samples[i] - black) / range, 0.0, 1.0);
  return out;
}

ad::Tensor pack(std::span<const double> mosaic, std::size_t width, std::size_t height, BayerPattern pattern) {
  if (width % 2 || height % 2 || mosaic.size() != width * height) {
    throw std::invalid_argument("pack needs an even-sized mosaic");
  }
  const std::size_t h = height / 2, w = width / 2;
  std::vector<double> out(kPackedChannels * h * w);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t c = packed_channel(pattern, y, x);
      out[(c * h + y / 2) * w + x / 2] = mosaic[y * width + x];
    }
  }
  return ad::Tensor({1, kPackedChannels, h, w}, std::move(out));
}

std::vector<double> unpack(const ad::Tensor& packed, BayerPattern pattern) {
  if (packed.rank() != 4 || packed.dim(0) != 1 || packed.dim(1) != kPackedChannels) {
    throw ad::ShapeError("unpack expects 1 x 4 x h x w, got " + ad::to_string(packed.shape()));
  }
  const std::size_t h = packed.dim(2), w = packed.dim(3);
  const std::size_t height = 2 * h, width = 2 * w;
  std::vector<double> out(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      out[y * width + x] = packed[(packed_channel(pattern, y, x) * h + y / 2) * w + x / 2];
    }
  }
  return out;
}

RawImage normalize_pack(const BayerFrame& frame) {
  const auto mosaic = normalize_mosaic(frame);
  return {pack(mosaic, frame.width, frame.height, frame.pattern),
          std::vector<std::string>(kChannelNames.begin(), kChannelNames.end())};
}

namespace {

// Display-referred RGB scene: dim smooth background with a few bright,
// textured rectangles and disks.
std::vector<std::array<double, 3>> synth_scene(Rng& rng, std::size_t width, std::size_t height) {
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  std::vector<std::array<double, 3>> img(width * height);

  const double base = rng.uniform(0.12, 0.3);
  const double gx = rng.uniform(-0.08, 0.08), gy = rng.uniform(-0.08, 0.08);
  const double wave_amp = rng.uniform(0.01, 0.04);
  const double wave_fx = rng.uniform(0.5, 2.0), wave_fy = rng.uniform(0.5, 2.0);
  const double wave_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::array<double, 3> tint;
  for (auto& t : tint) t = rng.uniform(0.8, 1.2);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double u = x / W - 0.5, v = y / H - 0.5;
      const double s = base + gx * u + gy * v +
                       wave_amp * std::sin(2.0 * std::numbers::pi * (wave_fx * u + wave_fy * v) + wave_phase);
      for (int c = 0; c < 3; ++c) img[y * width + x][c] = s * tint[c];
    }
  }

  const std::size_t objects = 2 + rng.below(3);
  for (std::size_t k = 0; k < objects; ++k) {
    const bool disk = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.1, 0.9) * W, cy = rng.uniform(0.1, 0.9) * H;
    const double rx = rng.uniform(0.05, 0.1) * W, ry = rng.uniform(0.05, 0.1) * H;
    std::array<double, 3> color;
    for (auto& c : color) c = rng.uniform(0.55, 0.95);
    const double tex_amp = rng.uniform(0.1, 0.25);
    const double tex_period = rng.uniform(3.0, 9.0);
    const double tex_angle = rng.uniform(0.0, std::numbers::pi);
    const double ca = std::cos(tex_angle), sa = std::sin(tex_angle);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::fabs(dx) <= 1.0 && std::fabs(dy) <= 1.0;
        if (!inside) continue;
        const double t = 1.0 + tex_amp * std::sin(2.0 * std::numbers::pi * (ca * x + sa * y) / tex_period);
        for (int c = 0; c < 3; ++c) img[y * width + x][c] = color[c] * t;
      }
    }
  }
  for (auto& px : img)
    for (auto& v : px) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace

SyntheticRaw synthesize_raw(std::uint64_t seed, const SynthOptions& o) {
  if (!(o.exposure_scale > 0.0 && o.exposure_scale <= 1.0)) {
    throw std::invalid_argument("exposure_scale must lie in (0, 1]");
  }
  if (o.noise.a < 0.0 || o.noise.b < 0.0) throw std::invalid_argument("noise parameters must be nonnegative");
  Rng rng(seed);
  const auto scene = synth_scene(rng, o.width, o.height);

  BayerFrame f;
  f.width = o.width;
  f.height = o.height;
  f.pattern = BayerPattern::kRGGB;
  f.black_level = o.black_level;
  f.white_level = o.white_level;
  f.camera = "synthetic";
  f.samples.resize(o.width * o.height);
  f.validate();

  static constexpr int kSceneChannel[4] = {0, 1, 1, 2};  // R, G1, G2, B -> RGB
  std::vector<double> display(o.width * o.height), linear(o.width * o.height);
  const double range = static_cast<double>(o.white_level) - o.black_level;
  for (std::size_t y = 0; y < o.height; ++y) {
    for (std::size_t x = 0; x < o.width; ++x) {
      const std::size_t i = y * o.width + x;
      const double s = scene[i][kSceneChannel[packed_channel(f.pattern, y, x)]];
      const double lin = o.exposure_scale * std::pow(s, kDisplayGamma);
      display[i] = s;
      linear[i] = lin;
      const double sigma = std::sqrt(o.noise.a * lin + o.noise.b);
      const double noisy = sigma > 0.0 ? lin + sigma * rng.normal() : lin;
      const double counts = std::round(o.black_level + noisy * range);
      f.samples[i] = static_cast<std::uint16_t>(std::clamp(counts, 0.0, 65535.0));
    }
  }
  return {std::move(f), pack(linear, o.width, o.height, BayerPattern::kRGGB),
          pack(display, o.width, o.height, BayerPattern::kRGGB)};
}

std::vector<std::uint64_t> Histogram::pooled() const {
  std::vector<std::uint64_t> out(bins, 0);
  for (const auto& ch : counts)
    for (std::size_t b = 0; b < bins; ++b) out[b] += ch[b];
  return out;
}

Histogram histogram(const ad::Tensor& image, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("histogram needs at least 2 bins");
  if (image.rank() != 4) throw ad::ShapeError("histogram expects B x C x H x W, got " + ad::to_string(image.shape()));
  const std::size_t B = image.dim(0), C = image.dim(1), HW = image.dim(2) * image.dim(3);
  Histogram h{bins, std::vector<std::vector<std::uint64_t>>(C, std::vector<std::uint64_t>(bins, 0))};
  auto x = image.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < HW; ++k) {
        const double v = std::clamp(x[(b * C + c) * HW + k], 0.0, 1.0);
        const auto bin = std::min(static_cast<std::size_t>(v * static_cast<double>(bins)), bins - 1);
        ++h.counts[c][bin];
      }
    }
  }
  return h;
}

double entropy(std::span<const std::uint64_t> counts) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw std::invalid_argument("entropy of an empty histogram");
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

double image_entropy(const ad::Tensor& image, std::size_t bins) { return entropy(histogram(image, bins).pooled()); }

double skewness(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("skewness of an empty sample");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 <= 0.0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

std::vector<std::uint8_t> to_bytes(std::span<const double> values, NormalizeMode mode) {
  std::vector<std::uint8_t> out(values.size());
  double lo = 0.0, hi = 1.0;
  if (mode == NormalizeMode::kMinMax && !values.empty()) {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx;
  }
  const double span = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double t = span > 0.0 ? std::clamp((values[i] - lo) / span, 0.0, 1.0) : 0.0;
    out[i] = static_cast<std::uint8_t>(std::floor(t * 255.0 + 0.5));
  }
  return out;
}

void write_image(std::span<const double> values, std::size_t height, std::size_t width, const std::string& path,
                 NormalizeMode mode) {
  if (values.size() != height * width) throw std::invalid_argument("write_image: slice size does not match H x W");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const auto px = to_bytes(values, mode);
  bytes.insert(bytes.end(), px.begin(), px.end());
  write_file(path, bytes);
}

std::string histogram_csv(const Histogram& hist) {
  std::string out = "bin_lo,bin_hi";
  for (std::size_t c = 0; c < hist.channels(); ++c) out += ",count_c" + std::to_string(c);
  out += "\n";
  char buf[64];
  for (std::size_t b = 0; b < hist.bins; ++b) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g", static_cast<double>(b) / hist.bins,
                  static_cast<double>(b + 1) / hist.bins);
    out += buf;
    for (const auto& ch : hist.counts) out += "," + std::to_string(ch[b]);
    out += "\n";
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace sfae::io
