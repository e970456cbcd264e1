#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sfae/gradcheck.hpp"
#include "sfae/ops.hpp"
#include "sfae/train.hpp"

namespace sfae::train {
namespace {

namespace fs = std::filesystem;

Tensor random_tensor(ad::Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Direct evaluation of the soft histogram entropy for one sample, written
// independently of the fused op (no shared helpers, natural-log form).
double soft_entropy_oracle(std::span<const double> values) {
  const int K = 64;
  const double h = 1.0 / K, sigma = 1.5 * h;
  std::vector<double> P(K, 0.0);
  for (double raw : values) {
    const double v = std::min(std::max(raw, 0.0), 1.0);
    std::vector<double> w(K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      w[k] = std::exp(-std::pow(v - (k + 0.5) * h, 2) / (2 * sigma * sigma));
      s += w[k];
    }
    for (int k = 0; k < K; ++k) P[k] += w[k] / s / static_cast<double>(values.size());
  }
  double H = 0.0;
  for (double p : P)
    if (p > 0) H -= p * std::log(p);
  return H / std::log(2.0);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.image_size = 16;
  c.n_bands = 3;
  c.dataset_size = 4;
  c.batch_size = 2;
  c.steps = 6;
  return c;
}

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / ("sfae_test_" + name)).string(); }

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TEST(TonemapTarget, FixedPointsAndSpotValue) {
  const Tensor t = tonemap_target(Tensor({4}, {0.0, 1.0, 0.5, 0.25}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 1.0);
  EXPECT_NEAR(t[2], 0.7297, 5e-5);
  EXPECT_NEAR(t[2], std::pow(0.5, 1 / 2.2), 1e-15);
  EXPECT_LT(t[3], t[2]);
}

TEST(SoftEntropy, MatchesDirectEvaluation) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 2, 5, 5}, rng, -0.1, 1.1);
  double expect = 0.0;
  for (std::size_t b = 0; b < 3; ++b) expect += soft_entropy_oracle(x.data().subspan(b * 50, 50));
  EXPECT_NEAR(soft_entropy(x).item(), expect / 3, 1e-12);
}

TEST(SoftEntropy, ConstantIsTheKernelEntropyAndSpreadIsHigher) {
  // A constant output puts one kernel's worth of mass in the histogram; with
  // a 1.5-bin bandwidth that is about 2.6 bits, not zero.
  const Tensor c = Tensor::full({1, 1, 8, 8}, 0.5);
  const double single[1] = {0.5};
  EXPECT_NEAR(soft_entropy(c).item(), soft_entropy_oracle(single), 1e-12);
  const double gaussian_bits = std::log2(1.5 * std::sqrt(2 * std::numbers::pi * std::numbers::e));
  EXPECT_NEAR(soft_entropy(c).item(), gaussian_bits, 0.05);

  Rng rng(2);
  const Tensor spread = random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0);
  EXPECT_GT(soft_entropy(spread).item(), soft_entropy(c).item() + 2.0);
  for (double v : {0.0, 0.123, 0.5, 0.99}) {
    EXPECT_LE(soft_entropy(Tensor::full({1, 1, 4, 4}, v)).item(), soft_entropy(spread).item());
  }
}

TEST(SoftEntropy, Gradcheck) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 1, 4, 4}, rng, 0.02, 0.98, true);
  const auto r = ad::gradcheck("soft_entropy", [&](const auto&) { return soft_entropy(x); }, {x}, {.tolerance = 1e-3});
  EXPECT_TRUE(r.passed) << ad::format_report(r);
}

TEST(SoftEntropy, ClampedValuesGetNoGradient) {
  const Tensor x({1, 4}, {-0.5, 0.3, 1.5, 0.7}, true);
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    tape.backward(soft_entropy(x));
  }
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
  EXPECT_NE(x.grad()[1], 0.0);
}

TEST(Loss, ZeroWhenOutputMatchesTargetWithoutEntropy) {
  Rng rng(4);
  pipeline::EnhanceOutput out;
  out.enhanced = random_tensor({2, 4, 4, 4}, rng, 0.0, 1.0);
  const LossTerms t = loss(out, out.enhanced.detach(), {1.0, 0.0});
  EXPECT_EQ(t.total.item(), 0.0);
  EXPECT_EQ(t.l1.item(), 0.0);
  EXPECT_THROW(loss(out, Tensor::zeros({1, 4, 4, 4}), {}), ad::ShapeError);
}

TEST(Loss, Gradcheck) {
  Rng rng(5);
  pipeline::EnhanceOutput out;
  out.enhanced = random_tensor({2, 1, 4, 4}, rng, 0.05, 0.95, true);
  const Tensor target = random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0);
  const auto r = ad::gradcheck(
      "loss", [&](const auto&) { return loss(out, target, {1.0, 0.05}).total; }, {out.enhanced}, {.tolerance = 1e-3});
  EXPECT_TRUE(r.passed) << ad::format_report(r);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p({3}, {1.0, -2.0, 3.0}, true);
  p.grad_buffer();
  Adam opt({{"p", p}}, {});
  opt.step();
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(p[2], 3.0);
  Tensor q({2}, {0.5, 0.5}, true);  // never reached by backward
  Adam opt2({{"q", q}}, {});
  opt2.step();
  EXPECT_EQ(q[0], 0.5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m_hat = g and v_hat = g^2 after one step, so the update is lr g / (|g| + eps).
  Tensor p = Tensor::zeros({5}, true);
  for (auto& g : p.grad_buffer()) g = 1.0;
  Adam opt({{"p", p}}, {.lr = 1e-3});
  opt.step();
  for (double v : p.data()) EXPECT_NEAR(v, -1e-3 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  Tensor p({1}, {0.3}, true);
  Adam opt({{"p", p}}, {.lr = 0.01, .beta1 = 0.8, .beta2 = 0.9, .eps = 1e-6});
  double x = 0.3, m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2 * p[0];  // d/dp p^2
    p.zero_grad();
    p.grad_buffer()[0] = g;
    opt.step();
    m = 0.8 * m + 0.2 * g;
    v = 0.9 * v + 0.1 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.9, t))) + 1e-6);
    EXPECT_DOUBLE_EQ(p[0], x);
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor a = Tensor::zeros({2}, true), b = Tensor::zeros({2}, true);
  a.grad_buffer()[0] = 1.0;
  b.grad_buffer()[1] = std::nan("");
  Adam opt({{"a", a}, {"spatial.0.conv1.weight", b}}, {});
  try {
    opt.step();
    FAIL() << "expected NonFiniteGradientError";
  } catch (const NonFiniteGradientError& e) {
    EXPECT_EQ(e.param(), "spatial.0.conv1.weight");
    EXPECT_NE(std::string(e.what()).find("spatial.0.conv1.weight"), std::string::npos);
  }
  EXPECT_EQ(a[0], 0.0);  // nothing applied
  EXPECT_EQ(opt.steps_taken(), 0u);
}

TEST(TrainConfig, KeyValueRoundTripAndValidation) {
  TrainConfig c = tiny_config();
  c.learning_rate = 3e-4;
  const TrainConfig back = TrainConfig::from_kv(KeyValues::parse(c.to_kv().to_text()));
  EXPECT_EQ(back.to_kv().to_text(), c.to_kv().to_text());
  EXPECT_EQ(back.learning_rate, 3e-4);

  EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("learnig_rate = 1e-3")), KeyError);
  EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("learning_rate = 0")), net::ConfigError);
  EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("beta1 = 1")), net::ConfigError);
  EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("image_size = 60")), net::ConfigError);
  EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("steps = -3")), KeyError);
}

TEST(Dataset, DeterministicLowLightSamples) {
  const TrainConfig c = tiny_config();
  const auto a = make_dataset(c), b = make_dataset(c);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.shape(), (ad::Shape{1, 4, 16, 16}));
    EXPECT_EQ(a[i].bands.shape(), (ad::Shape{1, 12, 16, 16}));
    for (std::size_t k = 0; k < a[i].image.numel(); ++k) EXPECT_EQ(a[i].image[k], b[i].image[k]);
    double mean = 0.0, target_mean = 0.0;
    for (double v : a[i].image.data()) mean += v;
    for (double v : a[i].target.data()) target_mean += v;
    EXPECT_LT(mean / a[i].image.numel(), 0.1);
    EXPECT_GT(target_mean, 2 * mean);
  }
}

TEST(Trainer, DeterministicLogsAndCheckpoints) {
  std::ostringstream la, lb;
  Trainer a(tiny_config()), b(tiny_config());
  a.run(&la);
  b.run(&lb);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(encode_archive({"", a.checkpoint().tensors}), encode_archive({"", b.checkpoint().tensors}));
  const std::string log = la.str();
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 6);
}

TEST(Trainer, ResumeIsBitExact) {
  const std::string path = temp_path("resume.ckpt");
  std::ostringstream full_log, first_log, second_log;
  Trainer full(tiny_config());
  full.run(&full_log);

  TrainConfig half = tiny_config();
  half.steps = 3;
  Trainer first(half);
  first.run(&first_log);
  Checkpoint ck = first.checkpoint();
  ck.config.steps = 6;
  save_checkpoint(ck, path);
  Trainer second = Trainer::resume(load_checkpoint(path));
  EXPECT_EQ(second.steps_done(), 3u);
  second.run(&second_log);

  EXPECT_EQ(first_log.str() + second_log.str(), full_log.str());
  const auto pf = full.params().named(), ps = second.params().named();
  for (std::size_t j = 0; j < pf.size(); ++j)
    for (std::size_t i = 0; i < pf[j].second.numel(); ++i) ASSERT_EQ(pf[j].second[i], ps[j].second[i]) << pf[j].first;
  fs::remove(path);
}

TEST(Trainer, EveryParameterMoves) {
  Trainer t(tiny_config());
  const net::NetParams before = t.params().clone();
  t.run();
  const auto a = before.named(), b = t.params().named();
  for (std::size_t j = 0; j < a.size(); ++j) {
    double d = 0.0;
    for (std::size_t i = 0; i < a[j].second.numel(); ++i) d += std::fabs(a[j].second[i] - b[j].second[i]);
    EXPECT_GT(d, 0.0) << a[j].first;
  }
}

TEST(Trainer, DivergenceReportsStep) {
  TrainConfig c = tiny_config();
  Trainer t(c);
  t.step();
  // Poison one head weight so the next forward produces NaN.
  Tensor w = t.params().head_orig.fc1.weight;
  w.mutable_data()[0] = std::nan("");
  try {
    t.step();
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 2u);
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const std::string path = temp_path("rt.ckpt");
  Trainer t(tiny_config());
  t.step();
  const Checkpoint c = t.checkpoint();
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.step, 1u);
  EXPECT_EQ(back.rng_state, c.rng_state);
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  for (std::size_t j = 0; j < c.tensors.size(); ++j) {
    EXPECT_EQ(back.tensors[j].first, c.tensors[j].first);
    ASSERT_EQ(back.tensors[j].second.shape(), c.tensors[j].second.shape());
    EXPECT_EQ(std::memcmp(back.tensors[j].second.data().data(), c.tensors[j].second.data().data(),
                          8 * c.tensors[j].second.numel()),
              0);
  }
  save_checkpoint(back, path + "2");
  EXPECT_EQ(read_bytes(path), read_bytes(path + "2"));
  EXPECT_EQ(c.tensors.front().first.rfind("param/", 0), 0u);
  fs::remove(path);
  fs::remove(path + "2");
}

TEST(Checkpoint, LayoutHeader) {
  const auto bytes = encode_archive({"k = v\n", {{"t", Tensor({2}, {1.0, -0.5})}}});
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SFAE");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  // prefix 16 + header (4 + 6) + count 4 + name (4 + 1) + rank 4 + dim 4 + 2 doubles + crc 4
  EXPECT_EQ(bytes.size(), 16u + 10 + 4 + 5 + 4 + 4 + 16 + 4);
  const Archive back = decode_archive(bytes);
  EXPECT_EQ(back.header, "k = v\n");
  EXPECT_EQ(back.records[0].second[1], -0.5);
}

TEST(Checkpoint, DistinctLoadErrors) {
  const auto good = encode_archive({"h", {{"t", Tensor({3}, {1.0, 2.0, 3.0})}}});

  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_archive(magic), BadMagicError);

  auto version = good;
  version[4] = 2;
  EXPECT_THROW(decode_archive(version), VersionError);

  auto sum = good;
  sum.back() ^= 0x01;
  EXPECT_THROW(decode_archive(sum), ChecksumError);
  auto payload = good;
  payload[payload.size() - 10] ^= 0x40;
  EXPECT_THROW(decode_archive(payload), ChecksumError);

  for (std::size_t cut : {2, 10, 20, 40}) {
    const std::vector<std::uint8_t> t(good.begin(), good.end() - static_cast<long>(good.size() - cut));
    EXPECT_THROW(decode_archive(t), TruncatedError) << cut;
  }
  const std::vector<std::uint8_t> short_tail(good.begin(), good.end() - 1);
  EXPECT_THROW(decode_archive(short_tail), TruncatedError);
}

TEST(Checkpoint, ParamsFromCheckpointChecksShapes) {
  Trainer t(tiny_config());
  Checkpoint c = t.checkpoint();
  const net::NetParams p = params_from_checkpoint(c);
  EXPECT_EQ(p.named()[3].second[0], t.params().named()[3].second[0]);
  c.tensors[0].second = Tensor::zeros({1});
  EXPECT_THROW(params_from_checkpoint(c), CheckpointError);
}

}  // namespace
}  // namespace sfae::train
