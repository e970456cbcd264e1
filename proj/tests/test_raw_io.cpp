#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "sfae/raw_io.hpp"

namespace sfae::io {
namespace {

namespace fs = std::filesystem;

BayerFrame make_frame(std::size_t w, std::size_t h, std::uint16_t fill, std::uint32_t black = 512,
                      std::uint32_t white = 16383) {
  BayerFrame f;
  f.width = w;
  f.height = h;
  f.samples.assign(w * h, fill);
  f.black_level = black;
  f.white_level = white;
  return f;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sfae_rawio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Pgm16, RoundTripsThroughEncoder) {
  BayerFrame f = make_frame(6, 4, 0);
  for (std::size_t i = 0; i < f.samples.size(); ++i) f.samples[i] = static_cast<std::uint16_t>(i * 2731 % 65536);
  const BayerFrame g = parse_pgm16(encode_pgm16(f));
  EXPECT_EQ(g.width, 6u);
  EXPECT_EQ(g.height, 4u);
  EXPECT_EQ(g.samples, f.samples);
}

TEST(Pgm16, SamplesAreBigEndianAndCommentsAreSkipped) {
  auto b = bytes_of("P5\n# comment line\n2 2\n65535\n");
  for (std::uint8_t v : {0x01, 0x02, 0xff, 0x00, 0x00, 0x01, 0x80, 0x00}) b.push_back(v);
  const BayerFrame f = parse_pgm16(b);
  EXPECT_EQ(f.samples, (std::vector<std::uint16_t>{0x0102, 0xff00, 0x0001, 0x8000}));
}

TEST(Pgm16, ErrorsCarryOffsets) {
  try {
    parse_pgm16(bytes_of("P2\n2 2\n65535\n"));
    FAIL();
  } catch (const RawParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  auto truncated = bytes_of("P5\n2 2\n65535\n");
  truncated.resize(truncated.size() + 5);
  try {
    parse_pgm16(truncated);
    FAIL();
  } catch (const RawParseError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_EQ(e.offset(), truncated.size());
  }

  try {
    parse_pgm16(bytes_of("P5\n2 x\n65535\n"));
    FAIL();
  } catch (const RawParseError& e) {
    EXPECT_EQ(e.offset(), 5u);
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos);
  }

  auto odd = bytes_of("P5\n3 2\n65535\n");
  odd.resize(odd.size() + 12);
  EXPECT_THROW(parse_pgm16(odd), RawParseError);
}

TEST(Pgm16, MaxvalOtherThan65535IsUnsupported) {
  auto b = bytes_of("P5\n2 2\n255\n");
  b.resize(b.size() + 4);
  EXPECT_THROW(parse_pgm16(b), UnsupportedDepthError);
}

TEST(LoadRaw, ReadsSidecarAndNamesMissingKeys) {
  const fs::path dir = temp_dir("load");
  const BayerFrame f = make_frame(4, 4, 512, 512, 16383);
  save_raw(f, dir / "a.pgm", dir / "a.txt");
  const BayerFrame g = load_raw(dir / "a.pgm", dir / "a.txt");
  EXPECT_EQ(g.samples, f.samples);
  EXPECT_EQ(g.black_level, 512u);
  EXPECT_EQ(g.white_level, 16383u);
  const RawImage packed = normalize_pack(g);
  for (double v : packed.tensor.data()) EXPECT_EQ(v, 0.0);

  std::ofstream(dir / "b.txt") << "pattern = RGGB\nblack_level = 512\n";
  try {
    load_raw(dir / "a.pgm", dir / "b.txt");
    FAIL();
  } catch (const RawParseError& e) {
    EXPECT_EQ(e.key(), "white_level");
  }
  std::ofstream(dir / "c.txt") << "black_level = 0\nwhite_level = 10\n";
  try {
    load_raw(dir / "a.pgm", dir / "c.txt");
    FAIL();
  } catch (const RawParseError& e) {
    EXPECT_EQ(e.key(), "pattern");
  }
  EXPECT_THROW(load_raw(dir / "missing.pgm", dir / "a.txt"), IoError);
}

TEST(NormalizePack, LevelsMapToUnitInterval) {
  const auto white = normalize_pack(make_frame(4, 4, 16383));
  for (double v : white.tensor.data()) EXPECT_EQ(v, 1.0);
  const auto black = normalize_pack(make_frame(4, 4, 512));
  for (double v : black.tensor.data()) EXPECT_EQ(v, 0.0);
  const auto mid = normalize_pack(make_frame(4, 4, 8448, 512, 16384));
  for (double v : mid.tensor.data()) EXPECT_EQ(v, 0.5);
  const auto below = normalize_pack(make_frame(4, 4, 100));
  for (double v : below.tensor.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(white.tensor.shape(), (ad::Shape{1, 4, 2, 2}));
  EXPECT_EQ(white.channel_semantics, (std::vector<std::string>{"R", "G1", "G2", "B"}));
}

TEST(NormalizePack, PatternDecidesWhichOffsetIsRed) {
  // Sample value encodes the mosaic position.
  BayerFrame f = make_frame(6, 4, 0, 0, 65535);
  for (std::size_t i = 0; i < f.samples.size(); ++i) f.samples[i] = static_cast<std::uint16_t>(i + 1);
  struct Case {
    BayerPattern p;
    std::size_t red_dy, red_dx, blue_dy, blue_dx;
  };
  for (const Case& c : {Case{BayerPattern::kRGGB, 0, 0, 1, 1}, Case{BayerPattern::kBGGR, 1, 1, 0, 0},
                        Case{BayerPattern::kGRBG, 0, 1, 1, 0}, Case{BayerPattern::kGBRG, 1, 0, 0, 1}}) {
    f.pattern = c.p;
    const ad::Tensor t = normalize_pack(f).tensor;
    EXPECT_EQ(t.shape(), (ad::Shape{1, 4, 2, 3}));
    for (std::size_t qy = 0; qy < 2; ++qy)
      for (std::size_t qx = 0; qx < 3; ++qx) {
        const double red = (((2 * qy + c.red_dy) * 6 + 2 * qx + c.red_dx) + 1) / 65535.0;
        const double blue = (((2 * qy + c.blue_dy) * 6 + 2 * qx + c.blue_dx) + 1) / 65535.0;
        EXPECT_EQ(t[(0 * 2 + qy) * 3 + qx], red) << to_string(c.p);
        EXPECT_EQ(t[(3 * 2 + qy) * 3 + qx], blue) << to_string(c.p);
      }
  }
}

TEST(NormalizePack, PackUnpackIsExactAndOrderPreserving) {
  BayerFrame f = make_frame(8, 6, 0, 100, 4000);
  for (std::size_t i = 0; i < f.samples.size(); ++i) f.samples[i] = static_cast<std::uint16_t>(100 + 80 * i);
  for (auto p : {BayerPattern::kRGGB, BayerPattern::kBGGR, BayerPattern::kGRBG, BayerPattern::kGBRG}) {
    f.pattern = p;
    const auto mosaic = normalize_mosaic(f);
    EXPECT_EQ(unpack(pack(mosaic, 8, 6, p), p), mosaic);
    for (std::size_t i = 1; i < mosaic.size(); ++i) EXPECT_LT(mosaic[i - 1], mosaic[i]);
  }
}

TEST(Synthesize, NoiselessFullExposureMatchesLinearScene) {
  SynthOptions o;
  o.width = 64;
  o.height = 48;
  o.exposure_scale = 1.0;
  o.noise = {0.0, 0.0};
  const SyntheticRaw s = synthesize_raw(3, o);
  const ad::Tensor packed = normalize_pack(s.frame).tensor;
  const double q = 1.0 / (o.white_level - o.black_level);
  for (std::size_t i = 0; i < packed.numel(); ++i) {
    EXPECT_LE(std::fabs(packed[i] - std::pow(s.scene[i], 2.2)), q);
    EXPECT_EQ(s.clean_linear[i], std::pow(s.scene[i], 2.2));
  }
}

TEST(Synthesize, LowLightIsSkewedAndDark) {
  SynthOptions o;
  o.exposure_scale = 0.05;
  for (std::uint64_t seed : {7, 1, 2, 3, 42}) {
    const ad::Tensor t = normalize_pack(synthesize_raw(seed, o).frame).tensor;
    EXPECT_GT(skewness(t.data()), 2.0) << "seed " << seed;
  }
  const ad::Tensor t = normalize_pack(synthesize_raw(7, o).frame).tensor;
  const auto pooled = histogram(t, 256).pooled();
  std::uint64_t low = 0, total = 0;
  for (std::size_t b = 0; b < 256; ++b) {
    total += pooled[b];
    if (b <= 25) low += pooled[b];
  }
  EXPECT_GT(static_cast<double>(low) / static_cast<double>(total), 0.8);
}

TEST(Synthesize, SameSeedIsBitIdentical) {
  SynthOptions o;
  o.width = 32;
  o.height = 32;
  const auto a = synthesize_raw(11, o), b = synthesize_raw(11, o), c = synthesize_raw(12, o);
  EXPECT_EQ(a.frame.samples, b.frame.samples);
  EXPECT_NE(a.frame.samples, c.frame.samples);
  EXPECT_THROW(synthesize_raw(1, SynthOptions{.exposure_scale = 0.0}), std::invalid_argument);
}

TEST(Histogram, ConstantRampAndCounts) {
  const auto h = histogram(ad::Tensor::full({1, 2, 3, 5}, 0.5), 256);
  for (const auto& ch : h.counts) EXPECT_EQ(ch[128], 15u);

  std::vector<double> ramp(101);
  for (std::size_t i = 0; i <= 100; ++i) ramp[i] = i / 100.0;
  const auto r = histogram(ad::Tensor({1, 1, 1, 101}, ramp), 2);
  EXPECT_LE(std::abs(static_cast<long>(r.counts[0][0]) - static_cast<long>(r.counts[0][1])), 1);

  const auto c = histogram(ad::Tensor({2, 1, 1, 4}, {-3.0, 0.0, 1.0, 7.0, 0.25, 0.5, 0.75, 0.999}), 4);
  EXPECT_EQ(c.counts[0], (std::vector<std::uint64_t>{2, 1, 1, 4}));
  EXPECT_THROW(histogram(ad::Tensor::full({1, 1, 2, 2}, 0.0), 1), std::invalid_argument);
}

TEST(Entropy, Examples) {
  std::vector<std::uint64_t> one(256, 0);
  one[17] = 99;
  EXPECT_EQ(entropy(one), 0.0);
  EXPECT_NEAR(entropy(std::vector<std::uint64_t>(256, 3)), 8.0, 1e-12);
  std::vector<std::uint64_t> two(256, 0);
  two[0] = two[255] = 5;
  EXPECT_NEAR(entropy(two), 1.0, 1e-15);
  EXPECT_THROW(entropy(std::vector<std::uint64_t>(4, 0)), std::invalid_argument);
}

TEST(Entropy, BoundedByLogBins) {
  SynthOptions o;
  o.width = o.height = 32;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = normalize_pack(synthesize_raw(seed, o).frame).tensor;
    for (std::size_t bins : {2, 16, 256}) {
      const double e = image_entropy(t, bins);
      EXPECT_GE(e, 0.0);
      EXPECT_LE(e, std::log2(static_cast<double>(bins)) + 1e-12);
    }
  }
}

TEST(Skewness, BernoulliOracle) {
  // Bernoulli(p): (1 - 2p) / sqrt(p (1 - p)).
  const std::vector<double> x{0, 0, 0, 1};
  EXPECT_NEAR(skewness(x), 0.5 / std::sqrt(0.25 * 0.75), 1e-14);
  EXPECT_EQ(skewness(std::vector<double>{2, 2, 2}), 0.0);
  const std::vector<double> sym{-1, 0, 1};
  EXPECT_NEAR(skewness(sym), 0.0, 1e-15);
}

TEST(WriteImage, ByteMapping) {
  for (auto b : to_bytes(std::vector<double>(4, 0.0), NormalizeMode::kClamp01)) EXPECT_EQ(b, 0);
  EXPECT_EQ(to_bytes(std::vector<double>{-1.0, 1.0}, NormalizeMode::kMinMax), (std::vector<std::uint8_t>{0, 255}));
  EXPECT_EQ(to_bytes(std::vector<double>{0.5}, NormalizeMode::kClamp01)[0], 128);
  EXPECT_EQ(to_bytes(std::vector<double>{-2.0, 3.0}, NormalizeMode::kClamp01), (std::vector<std::uint8_t>{0, 255}));

  const fs::path dir = temp_dir("write");
  write_image(std::vector<double>{0.0, 1.0, 0.5, 0.25, 1.0, 0.0}, 2, 3, dir / "x.pgm", NormalizeMode::kClamp01);
  const std::string s = slurp(dir / "x.pgm");
  EXPECT_EQ(s, std::string("P5\n3 2\n255\n") + std::string("\x00\xff\x80\x40\xff\x00", 6));
  EXPECT_THROW(write_image(std::vector<double>{0.0}, 1, 1, "/nonexistent_dir/x.pgm", NormalizeMode::kClamp01),
               IoError);
}

TEST(HistogramCsv, Header) {
  const auto h = histogram(ad::Tensor::full({1, 3, 2, 2}, 0.9), 2);
  EXPECT_EQ(histogram_csv(h), "bin_lo,bin_hi,count_c0,count_c1,count_c2\n0,0.5,0,0,0\n0.5,1,4,4,4\n");
}

}  // namespace
}  // namespace sfae::io
