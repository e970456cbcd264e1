#include "sfae/pipeline.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "autodiff/broadcast.hpp"
#include "sfae/ops.hpp"

namespace sfae::pipeline {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  const std::size_t r = i % period;
  return r < n ? r : period - r;
}

std::size_t round_up8(std::size_t v) { return (v + 7) / 8 * 8; }

}  // namespace

Tensor safe_pow(const Tensor& s, const Tensor& gamma, double eps) {
  if (!(eps > 0.0)) throw std::domain_error("safe_pow: eps must be positive");
  for (double g : gamma.data()) {
    // NaN passes through so divergence is reported where the loss is checked.
    if (g <= 0.0) throw std::domain_error("safe_pow: gamma must be positive, got " + std::to_string(g));
  }
  const ad::Shape out_shape = ad::broadcast_shape(s.shape(), gamma.shape());
  ad::detail::BroadcastMap ms(s.shape(), out_shape), mg(gamma.shape(), out_shape);
  auto xs = s.data();
  auto xg = gamma.data();
  std::vector<double> out(ad::numel(out_shape));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xs[ms(i)];
    out[i] = sign_of(v) * std::pow(std::fabs(v) + eps, xg[mg(i)]);
  }
  return ad::make_result(
      "safe_pow", out_shape, std::move(out), {s, gamma},
      [s, gamma, eps, ms = std::move(ms), mg = std::move(mg)](std::span<const double> g, std::span<const double> z) {
        auto xs = s.data();
        auto xg = gamma.data();
        if (s.requires_grad()) {
          auto gs = s.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xs[ms(i)];
            if (v == 0.0) continue;
            const double a = std::fabs(v) + eps;
            gs[ms(i)] += g[i] * xg[mg(i)] * std::pow(a, xg[mg(i)] - 1.0);
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gg[mg(i)] += g[i] * z[i] * std::log(std::fabs(xs[ms(i)]) + eps);
        }
      });
}

Tensor safe_pow(const Tensor& s, double gamma, double eps) { return safe_pow(s, Tensor::scalar(gamma), eps); }

AppliedGammas apply_gammas(const Tensor& image, const freq::BandMapSet& bands, const net::GammaParams& gammas) {
  if (image.rank() != 4) throw ad::ShapeError("apply_gammas expects B x C x H x W, got " + ad::to_string(image.shape()));
  const std::size_t B = image.dim(0), C = image.dim(1);
  if (gammas.gamma_orig.shape() != ad::Shape{B, C, 1, 1}) {
    throw ad::ShapeError("gamma_orig " + ad::to_string(gammas.gamma_orig.shape()) + " does not match image " +
                         ad::to_string(image.shape()));
  }
  const std::size_t N = bands.size();
  if (gammas.gamma_freq.rank() != 4 || gammas.gamma_freq.dim(1) != N * C || gammas.gamma_freq.dim(0) != B) {
    throw ad::ShapeError("gamma_freq " + ad::to_string(gammas.gamma_freq.shape()) + " does not cover " +
                         std::to_string(N) + " bands of " + std::to_string(C) + " channels");
  }
  AppliedGammas out;
  out.enhanced_orig = safe_pow(image, gammas.gamma_orig, gammas.epsilon);
  for (std::size_t i = 0; i < N; ++i) {
    if (bands.maps[i].shape() != image.shape()) {
      throw ad::ShapeError("band " + std::to_string(i) + " shape " + ad::to_string(bands.maps[i].shape()) +
                           " differs from image " + ad::to_string(image.shape()));
    }
    out.enhanced_bands.push_back(
        safe_pow(bands.maps[i], ad::slice(gammas.gamma_freq, 1, i * C, C), gammas.epsilon));
  }
  return out;
}

EnhanceOutput recombine(const Tensor& enhanced_orig, const std::vector<Tensor>& enhanced_bands) {
  if (enhanced_bands.empty()) throw std::invalid_argument("recombine needs at least one band");
  Tensor sum = enhanced_bands.front();
  for (std::size_t i = 1; i < enhanced_bands.size(); ++i) {
    if (enhanced_bands[i].shape() != sum.shape()) throw ad::ShapeError("recombine: band shapes differ");
    sum = ad::add(sum, enhanced_bands[i]);
  }
  if (sum.shape() != enhanced_orig.shape()) {
    throw ad::ShapeError("recombine: band sum " + ad::to_string(sum.shape()) + " vs original " +
                         ad::to_string(enhanced_orig.shape()));
  }
  EnhanceOutput out;
  out.enhanced_orig = enhanced_orig;
  out.enhanced_band_sum = sum;
  out.enhanced = ad::mul(ad::add(enhanced_orig, sum), 0.5);
  return out;
}

EnhanceOutput enhance_with_bands(const Tensor& image, const Tensor& bands, const net::NetParams& params,
                                 const net::NetConfig& config) {
  const net::NetOutput net_out = net::run_network(image, bands, params, config);
  const net::GammaParams& g = net_out.gammas;
  const std::size_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  const std::size_t N = config.n_bands;
  EnhanceOutput out;
  out.gammas = g;
  out.enhanced_orig = safe_pow(image, g.gamma_orig, g.epsilon);
  const Tensor per_band = ad::reshape(safe_pow(bands, g.gamma_freq, g.epsilon), {B, N, C, H, W});
  out.enhanced_band_sum = ad::sum(per_band, {1});
  out.enhanced = ad::mul(ad::add(out.enhanced_orig, out.enhanced_band_sum), 0.5);
  return out;
}

Tensor reflect_pad(const Tensor& image, std::size_t pad_bottom, std::size_t pad_right) {
  if (image.rank() != 4) throw ad::ShapeError("reflect_pad expects B x C x H x W");
  const std::size_t P = image.dim(0) * image.dim(1), H = image.dim(2), W = image.dim(3);
  const std::size_t Ho = H + pad_bottom, Wo = W + pad_right;
  std::vector<double> out(P * Ho * Wo);
  auto x = image.data();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t r = 0; r < Ho; ++r)
      for (std::size_t c = 0; c < Wo; ++c)
        out[(p * Ho + r) * Wo + c] = x[(p * H + reflect_index(r, H)) * W + reflect_index(c, W)];
  return Tensor({image.dim(0), image.dim(1), Ho, Wo}, std::move(out));
}

EnhanceOutput enhance(const Tensor& image, const net::NetParams& params, const net::NetConfig& config) {
  if (image.rank() != 4) throw ad::ShapeError("enhance expects B x C x H x W, got " + ad::to_string(image.shape()));
  if (image.dim(1) != config.in_channels) {
    throw ad::ShapeError("image has " + std::to_string(image.dim(1)) + " channels, network expects " +
                         std::to_string(config.in_channels));
  }
  const std::size_t H = image.dim(2), W = image.dim(3);
  const std::size_t Hp = round_up8(H), Wp = round_up8(W);
  const bool padded = Hp != H || Wp != W;
  const Tensor input = padded ? reflect_pad(image.detach(), Hp - H, Wp - W) : image;

  const freq::BandMapSet bands = freq::decompose(input, freq::band_boundaries(config.n_bands));
  const net::NetOutput net_out = net::run_network(input, bands.concatenated(), params, config);
  const AppliedGammas applied = apply_gammas(input, bands, net_out.gammas);
  EnhanceOutput out = recombine(applied.enhanced_orig, applied.enhanced_bands);
  out.gammas = net_out.gammas;
  if (padded) {
    auto crop = [&](const Tensor& t) { return ad::slice(ad::slice(t, 2, 0, H), 3, 0, W); };
    out.enhanced = crop(out.enhanced);
    out.enhanced_orig = crop(out.enhanced_orig);
    out.enhanced_band_sum = crop(out.enhanced_band_sum);
  }
  return out;
}

}  // namespace sfae::pipeline
