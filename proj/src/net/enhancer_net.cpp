#include "sfae/enhancer_net.hpp"

#include <cmath>

#include "sfae/ops.hpp"
#include "sfae/random.hpp"

namespace sfae::net {

namespace {

using ad::Shape;

void ensure_finite(const char* stage, const Tensor& t) {
  if (!ad::debug_checks()) return;
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw ad::NonFiniteError(stage, std::string("non-finite activation after ") + stage);
  }
}

void require_feature(const char* what, const Tensor& x) {
  if (x.rank() != 4) throw ad::ShapeError(std::string(what) + " expects B x C x H x W, got " + ad::to_string(x.shape()));
}

Tensor mlp(const Tensor& v, const LinearParams& a, const LinearParams& b) {
  return ad::linear(ad::selu(ad::linear(v, a.weight, a.bias)), b.weight, b.bias);
}

// Parameter construction -------------------------------------------------

class Builder {
 public:
  Builder(std::uint64_t seed, InitMode mode) : rng_(seed), mode_(mode) {}

  Tensor uniform(Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = rng_.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v), true);
  }
  // Zero in standard mode, uniform otherwise.
  Tensor gate(Shape shape, std::size_t fan_in) {
    if (mode_ == InitMode::kRandomAll) return uniform(std::move(shape), fan_in);
    return Tensor::zeros(std::move(shape), true);
  }

  ConvParams conv(std::size_t out, std::size_t in, std::size_t k, std::size_t groups, bool bias) {
    const std::size_t fan_in = in / groups * k * k;
    ConvParams p{uniform({out, in / groups, k, k}, fan_in), {}};
    if (bias) p.bias = uniform({out}, fan_in);
    return p;
  }
  LinearParams linear(std::size_t in, std::size_t out) { return {uniform({in, out}, in), uniform({out}, in)}; }
  LinearParams zero_linear(std::size_t in, std::size_t out) { return {gate({in, out}, in), gate({out}, in)}; }
  NormParams norm(std::size_t n) {
    if (mode_ == InitMode::kRandomAll) {
      // Affine away from (1, 0) so a wrong broadcast cannot hide.
      NormParams p{uniform({n}, 1), uniform({n}, 1)};
      for (double& g : p.gamma.mutable_data()) g += 1.5;
      return p;
    }
    return {Tensor::full({n}, 1.0, true), Tensor::zeros({n}, true)};
  }

  CbamParams cbam(std::size_t ch) {
    const std::size_t r = std::min(kCbamMaxReduction, ch);
    const std::size_t hidden = std::max<std::size_t>(1, ch / r);
    CbamParams p;
    p.fc1 = linear(ch, hidden);
    p.fc2 = zero_linear(hidden, ch);
    const std::size_t k = kCbamSpatialKernel;
    p.spatial = {gate({1, 2, k, k}, 2 * k * k), gate({1}, 2 * k * k)};
    return p;
  }

  ResBlockParams block(std::size_t in, std::size_t out, BlockLayout layout) {
    ResBlockParams p;
    p.layout = layout;
    p.conv1 = conv(out, in, 3, layout.groups1, false);
    p.norm1 = norm(out);
    p.conv2 = conv(out, out, 3, 1, false);
    p.norm2 = norm(out);
    p.cbam = cbam(out);
    if (layout.total_stride() != 1 || in != out) p.skip = conv(out, in, 1, 1, true);
    return p;
  }

  MhaParams attention(std::size_t d) { return {linear(d, d), linear(d, d), linear(d, d), linear(d, d)}; }

 private:
  Rng rng_;
  InitMode mode_;
};

void add_conv(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name, const ConvParams& p) {
  if (p.weight.defined()) out.emplace_back(name + ".weight", p.weight);
  if (p.bias.defined()) out.emplace_back(name + ".bias", p.bias);
}
void add_linear(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name, const LinearParams& p) {
  out.emplace_back(name + ".weight", p.weight);
  out.emplace_back(name + ".bias", p.bias);
}
void add_norm(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name, const NormParams& p) {
  out.emplace_back(name + ".gamma", p.gamma);
  out.emplace_back(name + ".beta", p.beta);
}
void add_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name, const ResBlockParams& p) {
  add_conv(out, name + ".conv1", p.conv1);
  add_norm(out, name + ".norm1", p.norm1);
  add_conv(out, name + ".conv2", p.conv2);
  add_norm(out, name + ".norm2", p.norm2);
  add_linear(out, name + ".cbam.fc1", p.cbam.fc1);
  add_linear(out, name + ".cbam.fc2", p.cbam.fc2);
  add_conv(out, name + ".cbam.spatial", p.cbam.spatial);
  add_conv(out, name + ".skip", p.skip);
}
void add_mha(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name, const MhaParams& p) {
  add_linear(out, name + ".q", p.q);
  add_linear(out, name + ".k", p.k);
  add_linear(out, name + ".v", p.v);
  add_linear(out, name + ".out", p.out);
}

Tensor copy_of(const Tensor& t) {
  if (!t.defined()) return {};
  Tensor c = t.detach();
  c.set_requires_grad(true);
  return c;
}

}  // namespace

void NetConfig::validate() const {
  if (n_bands == 0) throw ConfigError("n_bands must be at least 1");
  if (in_channels == 0) throw ConfigError("in_channels must be at least 1");
  if (mha_heads == 0 || d_model() % mha_heads != 0) {
    throw ConfigError("n_bands * in_channels = " + std::to_string(d_model()) + " is not divisible by mha_heads = " +
                      std::to_string(mha_heads));
  }
  if (height == 0 || width == 0 || height % 8 || width % 8) {
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not a positive multiple of 8");
  }
  if (ffn_expansion == 0) throw ConfigError("ffn_expansion must be at least 1");
  if (!(gamma_max > 1.0) || !std::isfinite(gamma_max)) throw ConfigError("gamma_max must be finite and > 1");
}

std::vector<std::pair<std::string, Tensor>> NetParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < spatial.size(); ++i) add_block(out, "spatial." + std::to_string(i), spatial[i]);
  for (std::size_t i = 0; i < freq.size(); ++i) add_block(out, "freq." + std::to_string(i), freq[i]);
  add_norm(out, "fusion.ln_spa", fusion.ln_spa);
  add_norm(out, "fusion.ln_freq", fusion.ln_freq);
  add_mha(out, "fusion.attn_spa", fusion.attn_spa);
  add_mha(out, "fusion.attn_freq", fusion.attn_freq);
  add_norm(out, "fusion.ffn_ln_spa", fusion.ffn_ln_spa);
  add_norm(out, "fusion.ffn_ln_freq", fusion.ffn_ln_freq);
  add_linear(out, "fusion.ffn_spa1", fusion.ffn_spa1);
  add_linear(out, "fusion.ffn_spa2", fusion.ffn_spa2);
  add_linear(out, "fusion.ffn_freq1", fusion.ffn_freq1);
  add_linear(out, "fusion.ffn_freq2", fusion.ffn_freq2);
  add_linear(out, "head_orig.fc1", head_orig.fc1);
  add_linear(out, "head_orig.fc2", head_orig.fc2);
  add_linear(out, "head_freq.fc1", head_freq.fc1);
  add_linear(out, "head_freq.fc2", head_freq.fc2);
  return out;
}

std::size_t NetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

NetParams NetParams::clone() const {
  auto conv = [](const ConvParams& p) { return ConvParams{copy_of(p.weight), copy_of(p.bias)}; };
  auto lin = [](const LinearParams& p) { return LinearParams{copy_of(p.weight), copy_of(p.bias)}; };
  auto norm = [](const NormParams& p) { return NormParams{copy_of(p.gamma), copy_of(p.beta)}; };
  auto block = [&](const ResBlockParams& p) {
    return ResBlockParams{p.layout,      conv(p.conv1), norm(p.norm1), conv(p.conv2), norm(p.norm2),
                          {lin(p.cbam.fc1), lin(p.cbam.fc2), conv(p.cbam.spatial)}, conv(p.skip)};
  };
  auto attn = [&](const MhaParams& p) { return MhaParams{lin(p.q), lin(p.k), lin(p.v), lin(p.out)}; };
  NetParams c;
  for (const auto& b : spatial) c.spatial.push_back(block(b));
  for (const auto& b : freq) c.freq.push_back(block(b));
  const FusionParams& f = fusion;
  c.fusion = {norm(f.ln_spa),      norm(f.ln_freq),      attn(f.attn_spa),   attn(f.attn_freq),
              norm(f.ffn_ln_spa),  norm(f.ffn_ln_freq),  lin(f.ffn_spa1),    lin(f.ffn_spa2),
              lin(f.ffn_freq1),    lin(f.ffn_freq2)};
  c.head_orig = {lin(head_orig.fc1), lin(head_orig.fc2)};
  c.head_freq = {lin(head_freq.fc1), lin(head_freq.fc2)};
  return c;
}

void NetParams::zero_grad() const {
  for (auto& [name, t] : named()) t.zero_grad();
}

NetParams init_params(const NetConfig& config, std::uint64_t seed, InitMode mode) {
  config.validate();
  const std::size_t C = config.in_channels, N = config.n_bands, d = config.d_model();
  const std::size_t hidden = d * config.ffn_expansion;
  Builder b(seed, mode);
  NetParams p;
  p.spatial.push_back(b.block(C, d, BlockLayout::standard(2)));
  p.spatial.push_back(b.block(d, d, BlockLayout::standard(2)));
  p.spatial.push_back(b.block(d, d, BlockLayout::standard(2)));
  p.freq.push_back(b.block(d, d, BlockLayout::frequency(N)));
  p.freq.push_back(b.block(d, d, BlockLayout::standard(2)));
  FusionParams& f = p.fusion;
  f.ln_spa = b.norm(d);
  f.ln_freq = b.norm(d);
  f.attn_spa = b.attention(d);
  f.attn_freq = b.attention(d);
  f.ffn_ln_spa = b.norm(d);
  f.ffn_ln_freq = b.norm(d);
  f.ffn_spa1 = b.linear(d, hidden);
  f.ffn_spa2 = b.linear(hidden, d);
  f.ffn_freq1 = b.linear(d, hidden);
  f.ffn_freq2 = b.linear(hidden, d);
  p.head_orig = {b.linear(d, d), b.zero_linear(d, C)};
  p.head_freq = {b.linear(d, d), b.zero_linear(d, d)};
  return p;
}

// Forward ----------------------------------------------------------------

Tensor cbam(const Tensor& x, const CbamParams& p) {
  require_feature("cbam", x);
  const std::size_t B = x.dim(0), Ch = x.dim(1);
  if (Ch < 1) throw ad::ShapeError("cbam needs at least one channel");
  if (p.fc1.weight.dim(0) != Ch) {
    throw ad::ShapeError("cbam parameters expect " + std::to_string(p.fc1.weight.dim(0)) + " channels, got " +
                         std::to_string(Ch));
  }
  const Tensor avg = ad::mean(x, {2, 3});
  const Tensor mx = ad::max(x, {2, 3});
  const Tensor channel_gate = ad::sigmoid(ad::add(mlp(avg, p.fc1, p.fc2), mlp(mx, p.fc1, p.fc2)));
  const Tensor x1 = ad::mul(x, ad::reshape(channel_gate, {B, Ch, 1, 1}));

  const Tensor pooled = ad::concat({ad::mean(x1, {1}, true), ad::max(x1, {1}, true)}, 1);
  const Tensor spatial_gate =
      ad::sigmoid(ad::conv2d(pooled, p.spatial.weight, p.spatial.bias, {.padding = kCbamSpatialKernel / 2}));
  return ad::mul(x1, spatial_gate);
}

Tensor cbam_resblock(const Tensor& x, const ResBlockParams& p) {
  require_feature("cbam_resblock", x);
  const BlockLayout& l = p.layout;
  Tensor h = ad::conv2d(x, p.conv1.weight, p.conv1.bias, {.stride = l.stride1, .padding = 1, .groups = l.groups1});
  h = ad::selu(ad::instance_norm(h, p.norm1.gamma, p.norm1.beta, kNormEps));
  h = ad::conv2d(h, p.conv2.weight, p.conv2.bias, {.stride = l.stride2, .padding = 1});
  h = ad::selu(ad::instance_norm(h, p.norm2.gamma, p.norm2.beta, kNormEps));
  h = cbam(h, p.cbam);
  const Tensor skip = p.skip.weight.defined()
                          ? ad::conv2d(x, p.skip.weight, p.skip.bias, {.stride = l.total_stride()})
                          : x;
  if (skip.shape() != h.shape()) {
    throw ad::ShapeError("residual shapes differ: main " + ad::to_string(h.shape()) + ", skip " +
                         ad::to_string(skip.shape()));
  }
  return ad::add(h, skip);
}

namespace {

void require_divisible(const char* what, const Tensor& x) {
  if (x.dim(2) % 8 || x.dim(3) % 8 || x.dim(2) == 0 || x.dim(3) == 0) {
    throw ConfigError(std::string(what) + ": spatial size " + std::to_string(x.dim(2)) + "x" +
                      std::to_string(x.dim(3)) + " is not a multiple of 8");
  }
}

}  // namespace

Tensor spatial_encoder(const Tensor& image, const NetParams& p, const NetConfig& config) {
  require_feature("spatial_encoder", image);
  require_divisible("spatial_encoder", image);
  if (image.dim(1) != config.in_channels) {
    throw ad::ShapeError("spatial_encoder expects " + std::to_string(config.in_channels) + " channels, got " +
                         ad::to_string(image.shape()));
  }
  Tensor h = image;
  for (const auto& block : p.spatial) h = cbam_resblock(h, block);
  ensure_finite("spatial_encoder", h);
  return h;
}

Tensor freq_encoder(const Tensor& bands, const NetParams& p, const NetConfig& config) {
  require_feature("freq_encoder", bands);
  require_divisible("freq_encoder", bands);
  if (bands.dim(1) != config.d_model()) {
    throw ad::ShapeError("freq_encoder expects " + std::to_string(config.d_model()) + " band channels, got " +
                         ad::to_string(bands.shape()));
  }
  Tensor h = bands;
  for (const auto& block : p.freq) h = cbam_resblock(h, block);
  ensure_finite("freq_encoder", h);
  return h;
}

Tensor to_tokens(const Tensor& feature) {
  require_feature("to_tokens", feature);
  const std::size_t B = feature.dim(0), d = feature.dim(1), L = feature.dim(2) * feature.dim(3);
  return ad::transpose_last(ad::reshape(feature, {B, d, L}));
}

Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width) {
  const std::size_t B = tokens.dim(0), d = tokens.dim(2);
  if (tokens.dim(1) != height * width) throw ad::ShapeError("token count does not match feature size");
  return ad::reshape(ad::transpose_last(tokens), {B, d, height, width});
}

MhaResult mha_tokens(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, const MhaParams& p,
                     std::size_t heads) {
  if (q_in.rank() != 3 || k_in.rank() != 3 || v_in.rank() != 3) throw ad::ShapeError("mha expects B x L x d tokens");
  const std::size_t B = q_in.dim(0), Lq = q_in.dim(1), d = q_in.dim(2), Lk = k_in.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("embedding size " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (k_in.shape() != v_in.shape() || k_in.dim(0) != B || k_in.dim(2) != d) {
    throw ad::ShapeError("mha key/value shapes " + ad::to_string(k_in.shape()) + ", " + ad::to_string(v_in.shape()) +
                         " do not match query " + ad::to_string(q_in.shape()));
  }
  const std::size_t dh = d / heads;
  auto split = [&](const Tensor& t, std::size_t L) {
    return ad::permute(ad::reshape(t, {B, L, heads, dh}), {0, 2, 1, 3});
  };
  const Tensor q = split(ad::linear(q_in, p.q.weight, p.q.bias), Lq);
  const Tensor k = split(ad::linear(k_in, p.k.weight, p.k.bias), Lk);
  const Tensor v = split(ad::linear(v_in, p.v.weight, p.v.bias), Lk);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor weights = ad::softmax(ad::mul(ad::matmul(q, ad::transpose_last(k)), scale));
  const Tensor ctx = ad::reshape(ad::permute(ad::matmul(weights, v), {0, 2, 1, 3}), {B, Lq, d});
  return {ad::linear(ctx, p.out.weight, p.out.bias), weights};
}

MhaResult mha(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, const MhaParams& p, std::size_t heads) {
  require_feature("mha", q_in);
  MhaResult r = mha_tokens(to_tokens(q_in), to_tokens(k_in), to_tokens(v_in), p, heads);
  r.out = from_tokens(r.out, q_in.dim(2), q_in.dim(3));
  return r;
}

Fused cross_fusion(const Tensor& z_spa, const Tensor& z_freq, const FusionParams& p, std::size_t heads) {
  require_feature("cross_fusion", z_spa);
  if (z_spa.shape() != z_freq.shape()) {
    throw ad::ShapeError("cross_fusion inputs differ: " + ad::to_string(z_spa.shape()) + " vs " +
                         ad::to_string(z_freq.shape()));
  }
  const std::size_t h = z_spa.dim(2), w = z_spa.dim(3);
  const Tensor s = to_tokens(z_spa), f = to_tokens(z_freq);
  const Tensor s_ln = ad::layer_norm(s, p.ln_spa.gamma, p.ln_spa.beta, kNormEps);
  const Tensor f_ln = ad::layer_norm(f, p.ln_freq.gamma, p.ln_freq.beta, kNormEps);
  // Each stream queries the other domain; both keep their own skip.
  const Tensor s1 = ad::add(mha_tokens(s_ln, f_ln, f_ln, p.attn_spa, heads).out, s);
  const Tensor f1 = ad::add(mha_tokens(f_ln, s_ln, s_ln, p.attn_freq, heads).out, f);
  auto ffn = [](const Tensor& y, const NormParams& ln, const LinearParams& a, const LinearParams& b) {
    return ad::add(y, mlp(ad::layer_norm(y, ln.gamma, ln.beta, kNormEps), a, b));
  };
  Fused out{from_tokens(ffn(s1, p.ffn_ln_spa, p.ffn_spa1, p.ffn_spa2), h, w),
            from_tokens(ffn(f1, p.ffn_ln_freq, p.ffn_freq1, p.ffn_freq2), h, w)};
  ensure_finite("cross_fusion", out.z_spa);
  ensure_finite("cross_fusion", out.z_freq);
  return out;
}

GammaParams gamma_heads(const Tensor& z_spa, const Tensor& z_freq, const NetParams& p, const NetConfig& config) {
  const double log_max = std::log(config.gamma_max);
  auto head = [&](const Tensor& z, const HeadParams& hp) {
    const Tensor y = mlp(ad::mean(z, {2, 3}), hp.fc1, hp.fc2);
    const Tensor g = ad::exp(ad::mul(ad::tanh(y), log_max));
    return ad::reshape(g, {g.dim(0), g.dim(1), 1, 1});
  };
  GammaParams out{head(z_spa, p.head_orig), head(z_freq, p.head_freq)};
  ensure_finite("gamma_heads", out.gamma_orig);
  ensure_finite("gamma_heads", out.gamma_freq);
  return out;
}

namespace {

// Re-labels a non-finite failure inside `fn` with the stage name.
template <class Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const ad::NonFiniteError& e) {
    if (e.op() == name) throw;
    throw ad::NonFiniteError(name, std::string(name) + ": " + e.what());
  }
}

}  // namespace

NetOutput run_network(const Tensor& image, const Tensor& bands, const NetParams& p, const NetConfig& config) {
  NetOutput out;
  out.z_spa = stage("spatial_encoder", [&] { return spatial_encoder(image, p, config); });
  out.z_freq = stage("freq_encoder", [&] { return freq_encoder(bands, p, config); });
  if (out.z_spa.shape() != out.z_freq.shape()) {
    throw ad::ShapeError("encoder outputs differ: " + ad::to_string(out.z_spa.shape()) + " vs " +
                         ad::to_string(out.z_freq.shape()));
  }
  out.fused = stage("cross_fusion", [&] { return cross_fusion(out.z_spa, out.z_freq, p.fusion, config.mha_heads); });
  out.gammas = stage("gamma_heads", [&] { return gamma_heads(out.fused.z_spa, out.fused.z_freq, p, config); });
  return out;
}

}  // namespace sfae::net
