#include "sfae/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>

#include "sfae/freq_decomp.hpp"
#include "sfae/ops.hpp"
#include "sfae/raw_io.hpp"

namespace sfae::train {

namespace {

constexpr double kDisplayGamma = 2.2;
constexpr std::uint64_t kBatchStream = 0x9E3779B97F4A7C15ull;

std::size_t get_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  const long long v = kv.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw KeyError(key, key + " must be non-negative, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.numel());
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw net::ConfigError("train config: " + what); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (image_size == 0 || image_size % 8 != 0) fail("image_size must be a positive multiple of 8");
  if (n_bands == 0) fail("n_bands must be >= 1");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (dataset_size < batch_size) fail("dataset_size must be >= batch_size");
  if (!(exposure_min > 0.0 && exposure_min <= exposure_max && exposure_max <= 1.0)) {
    fail("exposure range must satisfy 0 < min <= max <= 1");
  }
  if (!(lambda_recon >= 0.0) || !(lambda_entropy >= 0.0)) fail("loss weights must be non-negative");
  net_config().validate();
}

net::NetConfig TrainConfig::net_config() const {
  net::NetConfig c;
  c.n_bands = n_bands;
  c.height = c.width = image_size;
  return c;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  static const char* const kKeys[] = {"seed",         "steps",         "batch_size",   "learning_rate",
                                      "beta1",        "beta2",         "adam_eps",     "image_size",
                                      "n_bands",      "lambda_recon",  "lambda_entropy", "dataset_size",
                                      "exposure_min", "exposure_max"};
  for (const auto& [key, value] : kv.entries()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) ==
        std::end(kKeys)) {
      throw KeyError(key, "unknown train config key '" + key + "'");
    }
  }
  TrainConfig c;
  c.seed = get_size(kv, "seed", c.seed);
  c.steps = get_size(kv, "steps", c.steps);
  c.batch_size = get_size(kv, "batch_size", c.batch_size);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.image_size = get_size(kv, "image_size", c.image_size);
  c.n_bands = get_size(kv, "n_bands", c.n_bands);
  c.lambda_recon = kv.get_double("lambda_recon", c.lambda_recon);
  c.lambda_entropy = kv.get_double("lambda_entropy", c.lambda_entropy);
  c.dataset_size = get_size(kv, "dataset_size", c.dataset_size);
  c.exposure_min = kv.get_double("exposure_min", c.exposure_min);
  c.exposure_max = kv.get_double("exposure_max", c.exposure_max);
  c.validate();
  return c;
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("seed", std::to_string(seed));
  kv.set("steps", std::to_string(steps));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("learning_rate", fmt(learning_rate));
  kv.set("beta1", fmt(beta1));
  kv.set("beta2", fmt(beta2));
  kv.set("adam_eps", fmt(adam_eps));
  kv.set("image_size", std::to_string(image_size));
  kv.set("n_bands", std::to_string(n_bands));
  kv.set("lambda_recon", fmt(lambda_recon));
  kv.set("lambda_entropy", fmt(lambda_entropy));
  kv.set("dataset_size", std::to_string(dataset_size));
  kv.set("exposure_min", fmt(exposure_min));
  kv.set("exposure_max", fmt(exposure_max));
  return kv;
}

Tensor tonemap_target(const Tensor& clean_linear) {
  std::vector<double> out(clean_linear.numel());
  auto x = clean_linear.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(x[i], 1.0 / kDisplayGamma);
  return Tensor(clean_linear.shape(), std::move(out));
}

Tensor soft_entropy(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) == 0 || x.numel() == 0) throw ad::ShapeError("soft_entropy needs a non-empty batch");
  constexpr std::size_t K = kSoftHistBins;
  constexpr double width = 1.0 / static_cast<double>(K);
  constexpr double sigma = kSoftHistBandwidth * width;
  constexpr double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  const std::size_t B = x.dim(0), n = x.numel() / B;
  auto xs = x.data();

  // Soft assignment of one value; w receives normalized weights.
  auto assign = [&](double v, double* w) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double d = v - (static_cast<double>(k) + 0.5) * width;
      w[k] = std::exp(-d * d * inv_two_var);
      total += w[k];
    }
    for (std::size_t k = 0; k < K; ++k) w[k] /= total;
  };

  // Per-sample histograms are kept for the backward pass.
  std::vector<double> hist(B * K, 0.0);
  double w[K];
  double h_sum = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double* P = &hist[b * K];
    for (std::size_t i = 0; i < n; ++i) {
      assign(std::clamp(xs[b * n + i], 0.0, 1.0), w);
      for (std::size_t k = 0; k < K; ++k) P[k] += w[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
      P[k] /= static_cast<double>(n);
      if (P[k] > 0.0) h_sum -= P[k] * std::log2(P[k]);
    }
  }

  return ad::make_result(
      "soft_entropy", {}, {h_sum / static_cast<double>(B)}, {x},
      [x, hist = std::move(hist), B, n, assign](std::span<const double> g, std::span<const double>) {
        if (!x.requires_grad()) return;
        auto xs = x.data();
        auto gx = x.grad_buffer();
        const double scale = g[0] / static_cast<double>(B * n);
        double w[K], G[K];
        for (std::size_t b = 0; b < B; ++b) {
          const double* P = &hist[b * K];
          for (std::size_t k = 0; k < K; ++k) G[k] = P[k] > 0.0 ? -(std::log2(P[k]) + std::numbers::log2e) : 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double v = xs[b * n + i];
            if (v < 0.0 || v > 1.0) continue;
            assign(v, w);
            // d w_k / dv = w_k (a_k - sum_j w_j a_j) with a_k = -(v - c_k) / sigma^2
            double a_bar = 0.0, ga = 0.0, gw = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
              const double a = -(v - (static_cast<double>(k) + 0.5) * width) * 2.0 * inv_two_var;
              a_bar += w[k] * a;
              ga += G[k] * w[k] * a;
              gw += G[k] * w[k];
            }
            gx[b * n + i] += scale * (ga - gw * a_bar);
          }
        }
      });
}

LossTerms loss(const pipeline::EnhanceOutput& output, const Tensor& target, const LossWeights& weights) {
  if (output.enhanced.shape() != target.shape()) {
    throw ad::ShapeError("loss: output " + ad::to_string(output.enhanced.shape()) + " vs target " +
                         ad::to_string(target.shape()));
  }
  LossTerms t;
  t.l1 = ad::mean(ad::abs(ad::sub(output.enhanced, target)));
  t.entropy_bits = soft_entropy(output.enhanced);
  // Normalized to [0, 1] so the default weights keep reconstruction dominant.
  const double max_bits = std::log2(static_cast<double>(kSoftHistBins));
  t.total = ad::sub(ad::mul(t.l1, weights.recon), ad::mul(t.entropy_bits, weights.entropy / max_bits));
  return t;
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradientError(name, "non-finite gradient in parameter " + name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t j = 0; j < params_.size(); ++j) {
    Tensor& p = params_[j].second;
    auto data = p.mutable_data();
    auto grad = p.has_grad() ? p.grad() : std::span<const double>{};
    auto& m = m_[j];
    auto& v = v_[j];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      data[i] -= options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
}

std::vector<Sample> make_dataset(const TrainConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const auto bounds = freq::band_boundaries(config.n_bands);
  std::vector<Sample> data;
  data.reserve(config.dataset_size);
  for (std::size_t i = 0; i < config.dataset_size; ++i) {
    io::SynthOptions opts;
    opts.width = opts.height = 2 * config.image_size;
    const std::uint64_t image_seed = rng.next_u64();
    opts.exposure_scale = rng.uniform(config.exposure_min, config.exposure_max);
    const io::SyntheticRaw raw = io::synthesize_raw(image_seed, opts);
    Sample s;
    s.image = io::normalize_pack(raw.frame).tensor;
    s.bands = freq::decompose(s.image, bounds).concatenated();
    s.target = tonemap_target(raw.clean_linear);
    data.push_back(std::move(s));
  }
  return data;
}

std::string metrics_row(const StepMetrics& m) {
  return std::to_string(m.step) + "," + fmt(m.loss) + "," + fmt(m.l1) + "," + fmt(m.entropy_bits) + "," +
         fmt(m.gamma_orig_mean) + "," + fmt(m.gamma_freq_mean);
}

Evaluation evaluate(const net::NetParams& params, const net::NetConfig& net_config, const std::vector<Sample>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate needs at least one sample");
  ad::NoGradScope no_grad;
  Evaluation e;
  std::size_t gamma_count = 0;
  for (const Sample& s : data) {
    const pipeline::EnhanceOutput out = pipeline::enhance_with_bands(s.image, s.bands, params, net_config);
    e.l1 += mean_of(ad::abs(ad::sub(out.enhanced, s.target)));
    const Tensor shown = ad::clamp(out.enhanced, 0.0, 1.0);
    e.raw_entropy += io::image_entropy(s.image, 256);
    e.enhanced_entropy += io::image_entropy(shown, 256);
    e.raw_abs_skewness += std::fabs(io::skewness(s.image.data()));
    e.enhanced_abs_skewness += std::fabs(io::skewness(shown.data()));
    for (const Tensor* g : {&out.gammas.gamma_orig, &out.gammas.gamma_freq}) {
      for (double v : g->data()) e.gamma_abs_deviation += std::fabs(v - 1.0);
      gamma_count += g->numel();
    }
  }
  const double n = static_cast<double>(data.size());
  e.l1 /= n;
  e.raw_entropy /= n;
  e.enhanced_entropy /= n;
  e.raw_abs_skewness /= n;
  e.enhanced_abs_skewness /= n;
  e.gamma_abs_deviation /= static_cast<double>(gamma_count);
  return e;
}

Trainer::Trainer(TrainConfig config)
    : config_((config.validate(), config)),
      net_config_(config_.net_config()),
      data_(make_dataset(config_)),
      params_(net::init_params(net_config_, config_.seed)),
      adam_(params_.named(), AdamOptions{config_.learning_rate, config_.beta1, config_.beta2, config_.adam_eps}),
      rng_(config_.seed ^ kBatchStream) {}

StepMetrics Trainer::step() {
  const std::size_t n = data_.size(), B = config_.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < B; ++i) std::swap(order[i], order[i + rng_.below(n - i)]);

  std::vector<Tensor> images, bands, targets;
  for (std::size_t i = 0; i < B; ++i) {
    images.push_back(data_[order[i]].image);
    bands.push_back(data_[order[i]].bands);
    targets.push_back(data_[order[i]].target);
  }
  params_.zero_grad();
  const std::size_t step_no = adam_.steps_taken() + 1;
  StepMetrics m;
  m.step = step_no;
  {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const pipeline::EnhanceOutput out =
        pipeline::enhance_with_bands(ad::concat(images, 0), ad::concat(bands, 0), params_, net_config_);
    const LossTerms terms = loss(out, ad::concat(targets, 0), {config_.lambda_recon, config_.lambda_entropy});
    m.loss = terms.total.item();
    m.l1 = terms.l1.item();
    m.entropy_bits = terms.entropy_bits.item();
    m.gamma_orig_mean = mean_of(out.gammas.gamma_orig);
    m.gamma_freq_mean = mean_of(out.gammas.gamma_freq);
    if (!std::isfinite(m.loss)) {
      throw DivergenceError(step_no, "loss became non-finite at step " + std::to_string(step_no));
    }
    tape.backward(terms.total);
  }
  adam_.step();
  return m;
}

std::vector<StepMetrics> Trainer::run(std::ostream* log) {
  std::vector<StepMetrics> out;
  while (steps_done() < config_.steps) {
    out.push_back(step());
    if (log) *log << metrics_row(out.back()) << '\n';
  }
  return out;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config_;
  c.step = adam_.steps_taken();
  c.rng_state = rng_.state();
  const auto& named = adam_.params();
  for (const auto& [name, p] : named) c.tensors.emplace_back("param/" + name, p.detach());
  for (std::size_t j = 0; j < named.size(); ++j) {
    c.tensors.emplace_back("adam_m/" + named[j].first, Tensor(named[j].second.shape(), adam_.first_moments()[j]));
  }
  for (std::size_t j = 0; j < named.size(); ++j) {
    c.tensors.emplace_back("adam_v/" + named[j].first, Tensor(named[j].second.shape(), adam_.second_moments()[j]));
  }
  return c;
}

Trainer Trainer::resume(const Checkpoint& checkpoint) {
  Trainer t(checkpoint.config);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, tensor] : checkpoint.tensors) by_name[name] = &tensor;
  auto fetch = [&](const std::string& name, const ad::Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks record " + name);
    if (it->second->shape() != shape) {
      throw CheckpointError("record " + name + " has shape " + ad::to_string(it->second->shape()) + ", expected " +
                            ad::to_string(shape));
    }
    return *it->second;
  };
  const auto& named = t.adam_.params();
  for (std::size_t j = 0; j < named.size(); ++j) {
    const auto& [name, p] = named[j];
    const Tensor& src = fetch("param/" + name, p.shape());
    std::copy(src.data().begin(), src.data().end(), Tensor(p).mutable_data().begin());
    const Tensor& m = fetch("adam_m/" + name, p.shape());
    const Tensor& v = fetch("adam_v/" + name, p.shape());
    t.adam_.first_moments()[j].assign(m.data().begin(), m.data().end());
    t.adam_.second_moments()[j].assign(v.data().begin(), v.data().end());
  }
  t.adam_.set_steps_taken(checkpoint.step);
  t.rng_.set_state(checkpoint.rng_state);
  return t;
}

std::vector<SweepEntry> band_sweep(const TrainConfig& base, std::span<const std::size_t> band_counts) {
  std::vector<SweepEntry> out;
  for (std::size_t n : band_counts) {
    TrainConfig c = base;
    c.n_bands = n;
    Trainer t(c);
    SweepEntry e;
    e.n_bands = n;
    e.initial = evaluate(t.params(), c.net_config(), t.dataset());
    e.log = t.run();
    e.final = evaluate(t.params(), c.net_config(), t.dataset());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sfae::train
