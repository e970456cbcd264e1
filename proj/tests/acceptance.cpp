// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 9        run the listed criteria
//
// Exit status is 0 only if every selected criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "sfae/check_suite.hpp"
#include "sfae/enhancer_net.hpp"
#include "sfae/freq_decomp.hpp"
#include "sfae/ops.hpp"
#include "sfae/pipeline.hpp"
#include "sfae/raw_io.hpp"
#include "sfae/train.hpp"

namespace fs = std::filesystem;
using namespace sfae;
using ad::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_image(Rng& rng, std::size_t b, std::size_t c, std::size_t h, std::size_t w, double lo = 0.0,
                    double hi = 1.0) {
  std::vector<double> v(b * c * h * w);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor({b, c, h, w}, std::move(v));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// ---- 1 -------------------------------------------------------------------

Outcome partition_reconstruction() {
  const auto t0 = Clock::now();
  Rng rng(1);
  const std::size_t band_counts[] = {1, 2, 4, 6, 8, 10};
  // Extremes and odd sizes first, the rest random.
  std::vector<std::pair<std::size_t, std::size_t>> sizes = {{2, 2},   {128, 128}, {2, 128}, {128, 2},
                                                            {127, 3}, {3, 127},   {97, 101}, {65, 64}};
  while (sizes.size() < 200) sizes.emplace_back(2 + rng.below(127), 2 + rng.below(127));
  double worst = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto [h, w] = sizes[i];
    const Tensor img = random_image(rng, 1, 1, h, w, -1.0, 1.0);
    const auto maps = freq::decompose(img, freq::band_boundaries(band_counts[i % 6]));
    std::vector<double> sum(img.numel(), 0.0);
    for (const auto& m : maps.maps)
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += m[k];
    worst = std::max(worst, max_abs_diff(sum, img.data()));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-9 && t < 60.0, fmt("200 images, max |sum - I| = %.3e (< 1e-9), %.1f s (< 60 s)", worst, t)};
}

// ---- 2 -------------------------------------------------------------------

// Direct double-sum DFT of a real plane.
std::vector<std::complex<double>> naive_dft2(std::span<const double> x, std::size_t h, std::size_t w) {
  std::vector<std::complex<double>> out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const double ang = -2.0 * std::numbers::pi *
                             (static_cast<double>(u * r % h) / h + static_cast<double>(v * c % w) / w);
          acc += x[r * w + c] * std::polar(1.0, ang);
        }
      out[u * w + v] = acc;
    }
  return out;
}

Outcome dft_oracle() {
  Rng rng(2);
  double worst_dft = 0.0;
  // Planes below 2 x 2 are outside the transform's domain and must be rejected.
  bool rejects_degenerate = true;
  for (const ad::Shape& s : {ad::Shape{1, 1, 1, 1}, ad::Shape{1, 1, 1, 8}, ad::Shape{1, 1, 8, 1}}) {
    try {
      freq::fft2(Tensor::zeros(s));
      rejects_degenerate = false;
    } catch (const ad::ShapeError&) {
    }
  }
  for (std::size_t h = 2; h <= 8; ++h)
    for (std::size_t w = 2; w <= 8; ++w) {
      const Tensor img = random_image(rng, 1, 1, h, w, -1.0, 1.0);
      const auto spec = freq::fft2(img);
      const auto ref = naive_dft2(img.data(), h, w);
      for (std::size_t k = 0; k < ref.size(); ++k) worst_dft = std::max(worst_dft, std::abs(spec.values[k] - ref[k]));
    }
  double worst_rt = 0.0;
  const std::pair<std::size_t, std::size_t> sizes[] = {{2, 2},   {16, 16},  {31, 17}, {64, 48},  {97, 128},
                                                       {127, 2}, {128, 127}, {120, 90}, {128, 128}, {101, 103}};
  for (const auto& [h, w] : sizes) {
    const Tensor img = random_image(rng, 1, 2, h, w, -1.0, 1.0);
    worst_rt = std::max(worst_rt, max_abs_diff(freq::ifft2(freq::fft2(img)).image.data(), img.data()));
  }
  return {worst_dft < 1e-10 && worst_rt < 1e-10 && rejects_degenerate,
          fmt("naive DFT on all 49 sizes 2x2..8x8: %.3e (< 1e-10); round trip to 128x128: %.3e (< 1e-10); "
              "planes below 2x2 rejected: %s",
              worst_dft, worst_rt, rejects_degenerate ? "yes" : "no")};
}

// ---- 3 -------------------------------------------------------------------

Outcome parseval() {
  Rng rng(3);
  double worst_total = 0.0, worst_band = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t h = 2 + rng.below(80), w = 2 + rng.below(80);
    const Tensor img = random_image(rng, 1, 2, h, w, -1.0, 1.0);
    const auto spec = freq::band_boundaries(1 + i % 10);
    const auto energy = freq::band_energy(img, spec);
    const auto maps = freq::decompose(img, spec);
    double total = 0.0, spatial = 0.0;
    for (double v : img.data()) spatial += v * v;
    for (std::size_t b = 0; b < energy.size(); ++b) {
      total += energy[b];
      // Each band map's spatial energy equals its spectral energy.
      double e = 0.0;
      for (double v : maps.maps[b].data()) e += v * v;
      worst_band = std::max(worst_band, std::fabs(e - energy[b]) / spatial);
    }
    worst_total = std::max(worst_total, std::fabs(total - spatial) / spatial);
  }
  return {worst_total < 1e-9 && worst_band < 1e-9,
          fmt("50 images: |sum energy - sum x^2| / sum x^2 = %.3e, per-band spatial vs spectral %.3e (< 1e-9)",
              worst_total, worst_band)};
}

// ---- 4 -------------------------------------------------------------------

Outcome band_boundaries() {
  const auto spec = freq::band_boundaries(8, 0.5);
  bool exact = spec.bands.size() == 8 && spec.bands[0].low == 0.0;
  for (int i = 1; i <= 8; ++i) {
    const double expect = 0.5 / std::pow(2.0, 8 - i);
    exact = exact && spec.bands[i - 1].high == expect;
    if (i > 1) exact = exact && spec.bands[i - 1].low == spec.bands[i - 2].high;
  }
  std::size_t grids = 0;
  bool partition = true;
  for (std::size_t h : {2, 3, 7, 16, 33, 64, 127})
    for (std::size_t w : {2, 5, 16, 31, 64})
      for (std::size_t n : {1, 2, 4, 6, 8, 10}) {
        const auto masks = freq::radial_masks(h, w, freq::band_boundaries(n));
        for (std::size_t k = 0; k < h * w; ++k) {
          int s = 0;
          for (const auto& m : masks) s += m.values[k];
          partition = partition && s == 1;
        }
        ++grids;
      }
  return {exact && partition,
          fmt("N=8 boundaries %s f_max/2^(N-i); mask sum == 1 on %zu (H,W,N) grids: %s", exact ? "equal" : "differ from",
              grids, partition ? "yes" : "no")};
}

// ---- 5 -------------------------------------------------------------------

Outcome safe_pow_contract() {
  using pipeline::safe_pow;
  const double eps = 1e-6;
  bool zero = true, odd = true;
  double id_dev = 0.0, spot = 0.0;
  for (double g : {0.25, 0.5, 1.0, 2.2, 4.0}) zero = zero && safe_pow(Tensor::scalar(0.0), g, eps).item() == 0.0;
  Rng rng(5);
  const Tensor x = random_image(rng, 1, 3, 8, 8, 0.0, 2.0);
  const Tensor gam = random_image(rng, 1, 3, 1, 1, 0.2, 4.0);
  const Tensor a = safe_pow(x, gam, eps), b = safe_pow(ad::neg(x), gam, eps);
  for (std::size_t i = 0; i < a.numel(); ++i) odd = odd && b[i] == -a[i];
  const Tensor y = random_image(rng, 1, 1, 16, 16, -1.0, 1.0);
  const Tensor one = safe_pow(y, 1.0, eps);
  // The deviation is eps exactly in real arithmetic; |s| + eps itself rounds
  // by up to half an ulp, so that much is allowed on top.
  bool id_ok = true;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double dev = std::fabs(one[i] - y[i]);
    const double sum = std::fabs(y[i]) + eps;
    id_ok = id_ok && dev <= eps + (std::nextafter(sum, 2.0) - sum);
    id_dev = std::max(id_dev, dev);
  }
  // Spot values against direct evaluation of sign(s) (|s| + eps)^gamma.
  const double cases[][2] = {{4.0, 0.5}, {-0.25, 0.5}, {0.3, 2.2}, {-0.7, 1.0 / 2.2}, {1e-3, 3.0}};
  for (const auto& c : cases) {
    const double direct = (c[0] < 0 ? -1.0 : 1.0) * std::pow(std::fabs(c[0]) + eps, c[1]);
    spot = std::max(spot, std::fabs(safe_pow(Tensor::scalar(c[0]), c[1], eps).item() - direct));
  }
  spot = std::max(spot, std::fabs(safe_pow(Tensor::scalar(4.0), 0.5, eps).item() - 2.00000025));
  const bool pass = zero && odd && id_ok && spot < 1e-12;
  return {pass, fmt("S=0 -> 0: %s; odd: %s; gamma=1 deviation %.17g (<= eps + 1 ulp of |s|+eps: %s); spot error %.3e (< 1e-12)",
                    zero ? "yes" : "no", odd ? "yes" : "no", id_dev,
                    id_ok ? "yes" : "no", spot)};
}

// ---- 6 -------------------------------------------------------------------

Outcome identity_at_init() {
  const auto t0 = Clock::now();
  net::NetConfig c;
  c.n_bands = 8;
  c.height = c.width = 64;
  const net::NetParams p = net::init_params(c, 42);
  Rng rng(6);
  const Tensor img = random_image(rng, 1, 4, 64, 64, 0.01, 1.0);
  ad::NoGradScope no_grad;
  const auto out = pipeline::enhance(img, p, c);
  const double err = max_abs_diff(out.enhanced.data(), img.data());
  const double t = seconds_since(t0);
  return {err < 1e-4 && t < 5.0, fmt("64x64, N=8: max |enhance(I) - I| = %.3e (< 1e-4), %.2f s (< 5 s)", err, t)};
}

// ---- 7 -------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto reports = check::gradcheck_suite({.seed = 42, .network_entries = 64});
  double worst = 0.0;
  std::size_t failed = 0, checked = 0;
  std::string failures;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    if (!r.passed) {
      ++failed;
      failures += " " + r.name;
    }
    std::printf("  %s\n", ad::format_report(r).c_str());
  }
  const double t = seconds_since(t0);
  return {failed == 0 && worst < 1e-4 && t < 600.0,
          fmt("%zu checks (%zu entries, incl. full network 1x4x16x16 N=4), max rel err %.3e (< 1e-4), %.1f s%s%s",
              reports.size(), checked, worst, t, failed ? "; failed:" : "", failures.c_str())};
}

// ---- 8 -------------------------------------------------------------------

Outcome shapes() {
  Rng rng(8);
  std::size_t configs = 0;
  bool ok = true;
  double worst_row = 0.0;
  for (std::size_t n : {1, 2, 4, 8})
    for (std::size_t ch : {1, 4})
      for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{8, 8}, {16, 24}, {32, 16}}) {
        net::NetConfig c;
        c.n_bands = n;
        c.in_channels = ch;
        c.height = h;
        c.width = w;
        c.mha_heads = n * ch % 4 == 0 ? 4 : 1;
        const net::NetParams p = net::init_params(c, 1, net::InitMode::kRandomAll);
        const Tensor img = random_image(rng, 2, ch, h, w);
        const Tensor bands = freq::decompose(img, freq::band_boundaries(n)).concatenated();
        ad::NoGradScope no_grad;
        const Tensor zs = net::spatial_encoder(img, p, c), zf = net::freq_encoder(bands, p, c);
        const ad::Shape expect{2, n * ch, h / 8, w / 8};
        ok = ok && zs.shape() == expect && zf.shape() == expect;
        const auto attn = net::mha(zs, zf, zf, p.fusion.attn_spa, c.mha_heads);
        const std::size_t lk = attn.weights.dim(-1);
        for (std::size_t r = 0; r < attn.weights.numel() / lk; ++r) {
          double s = 0.0;
          for (std::size_t k = 0; k < lk; ++k) s += attn.weights[r * lk + k];
          worst_row = std::max(worst_row, std::fabs(s - 1.0));
        }
        ++configs;
      }
  return {ok && worst_row <= 1e-12,
          fmt("%zu (N,C,H,W) configs emit B x NC x H/8 x W/8: %s; max |attention row sum - 1| = %.3e (<= 1e-12)",
              configs, ok ? "yes" : "no", worst_row)};
}

// ---- 9 -------------------------------------------------------------------

train::TrainConfig acceptance_config() {
  train::TrainConfig c;  // defaults: seed 42, 20 images, 64x64, N = 8, 300 steps, lr 1e-3
  return c;
}

Outcome surrogate_training() {
  const auto t0 = Clock::now();
  const train::TrainConfig cfg = acceptance_config();
  train::Trainer t(cfg);
  const net::NetParams start = t.params().clone();
  const auto before = train::evaluate(t.params(), cfg.net_config(), t.dataset());
  const auto log = t.run();
  const auto after = train::evaluate(t.params(), cfg.net_config(), t.dataset());
  const double secs = seconds_since(t0);

  double first50 = 0.0, last50 = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    first50 += log[i].loss / 50;
    last50 += log[log.size() - 50 + i].loss / 50;
  }
  std::size_t frozen = 0;
  const auto a = start.named(), b = t.params().named();
  for (std::size_t j = 0; j < a.size(); ++j) frozen += max_abs_diff(a[j].second.data(), b[j].second.data()) == 0.0;

  const double ratio = after.l1 / before.l1;
  const double gain = after.enhanced_entropy - after.raw_entropy;
  const bool pass = ratio <= 0.5 && gain >= 1.0 && after.enhanced_abs_skewness < after.raw_abs_skewness &&
                    last50 < first50 && frozen == 0 && secs < 900.0;
  return {pass, fmt("L1 %.4f -> %.4f (ratio %.3f <= 0.5); entropy raw %.3f -> enhanced %.3f bits (gain %.3f >= 1.0); "
                    "|skew| %.3f -> %.3f; loss mean first50 %.4f > last50 %.4f; frozen params %zu; gamma |dev| %.3f; "
                    "%.0f s (< 900 s)",
                    before.l1, after.l1, ratio, after.raw_entropy, after.enhanced_entropy, gain,
                    after.raw_abs_skewness, after.enhanced_abs_skewness, first50, last50, frozen,
                    after.gamma_abs_deviation, secs)};
}

// ---- 10 ------------------------------------------------------------------

Outcome band_sweep() {
  const auto t0 = Clock::now();
  const std::size_t counts[] = {2, 4, 6, 8, 10};
  bool ok = true;
  std::string detail;
  try {
    const auto entries = train::band_sweep(acceptance_config(), counts);
    std::printf("  n_bands,initial_l1,final_l1,raw_entropy,enhanced_entropy,raw_abs_skew,enhanced_abs_skew,final_loss\n");
    for (const auto& e : entries) {
      const bool finite = std::isfinite(e.final.l1) && std::isfinite(e.log.back().loss);
      ok = ok && finite && e.log.size() == acceptance_config().steps;
      std::printf("  %zu,%.6f,%.6f,%.4f,%.4f,%.4f,%.4f,%.6f\n", e.n_bands, e.initial.l1, e.final.l1,
                  e.final.raw_entropy, e.final.enhanced_entropy, e.final.raw_abs_skewness,
                  e.final.enhanced_abs_skewness, e.log.back().loss);
    }
    detail = fmt("N in {2,4,6,8,10} trained %zu steps each without divergence: %s", acceptance_config().steps,
                 ok ? "yes" : "no");
  } catch (const train::DivergenceError& e) {
    ok = false;
    detail = std::string("diverged: ") + e.what();
  }
  return {ok, detail + fmt(", %.0f s", seconds_since(t0))};
}

// ---- 11 ------------------------------------------------------------------

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome determinism() {
  train::TrainConfig cfg = acceptance_config();
  cfg.steps = 40;
  const fs::path dir = fs::temp_directory_path() / "sfae_acceptance_11";
  fs::create_directories(dir);
  auto full_run = [&](const std::string& tag) {
    train::Trainer t(cfg);
    std::ostringstream log;
    t.run(&log);
    train::save_checkpoint(t.checkpoint(), (dir / (tag + ".sfae")).string());
    return log.str();
  };
  const std::string log_a = full_run("a"), log_b = full_run("b");
  const bool same_logs = log_a == log_b;
  const bool same_ckpt = read_all((dir / "a.sfae").string()) == read_all((dir / "b.sfae").string());

  train::TrainConfig half = cfg;
  half.steps = 17;
  std::ostringstream log_r;
  {
    train::Trainer t(half);
    t.run(&log_r);
    train::Checkpoint ck = t.checkpoint();
    ck.config.steps = cfg.steps;
    train::save_checkpoint(ck, (dir / "half.sfae").string());
  }
  train::Trainer resumed = train::Trainer::resume(train::load_checkpoint((dir / "half.sfae").string()));
  resumed.run(&log_r);
  train::save_checkpoint(resumed.checkpoint(), (dir / "resumed.sfae").string());
  const bool same_resume = log_r.str() == log_a && read_all((dir / "resumed.sfae").string()) == read_all((dir / "a.sfae").string());
  fs::remove_all(dir);
  return {same_logs && same_ckpt && same_resume,
          fmt("seed 42, %zu steps at 64x64 N=8: logs identical %s, checkpoint bytes identical %s, resume at step 17 "
              "bit-exact %s",
              cfg.steps, same_logs ? "yes" : "no", same_ckpt ? "yes" : "no", same_resume ? "yes" : "no")};
}

// ---- 12 ------------------------------------------------------------------

int run_cli(const std::string& args) {
  const int status = std::system((std::string(SFAE_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_contract() {
  const fs::path dir = fs::temp_directory_path() / "sfae_acceptance_12";
  fs::remove_all(dir);
  fs::create_directories(dir);
  io::BayerFrame f;
  f.width = 48;
  f.height = 32;
  f.samples.assign(f.width * f.height, 4321);
  f.black_level = 512;
  f.white_level = 16383;
  const std::string img = (dir / "c.pgm").string(), meta = (dir / "c.txt").string();
  io::save_raw(f, img, meta);
  const std::string in = "--input " + img + " --meta " + meta;

  const int ok_code = run_cli("decompose " + in + " --bands 8 --out " + (dir / "out").string());
  double err = 1.0;
  std::vector<double> fractions;
  if (ok_code == 0) {
    err = std::stod(read_all((dir / "out" / "reconstruction_error.txt").string()));
    std::istringstream csv(read_all((dir / "out" / "energy.csv").string()));
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) fractions.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  }
  bool frac_ok = fractions.size() == 8 && std::fabs(fractions[0] - 1.0) < 1e-12;
  for (std::size_t i = 1; i < fractions.size(); ++i) frac_ok = frac_ok && fractions[i] < 1e-12;

  const int io_code = run_cli("decompose --input " + (dir / "missing.pgm").string() + " --meta " + meta + " --out " +
                              (dir / "o2").string());
  const int usage_code = run_cli("decompose " + in + " --bands 0 --out " + (dir / "o3").string());
  const int unknown_code = run_cli("decompose " + in + " --out " + (dir / "o4").string() + " --nope");
  const bool no_partial = !fs::exists(dir / "o3") && !fs::exists(dir / "o4");
  fs::remove_all(dir);
  const bool pass = ok_code == 0 && err < 1e-9 && frac_ok && io_code == 1 && usage_code == 2 && unknown_code == 2 &&
                    no_partial;
  return {pass, fmt("constant image: exit %d, reconstruction error %.3e (< 1e-9), fractions [1,0,...] %s; missing "
                    "input exit %d (1); --bands 0 exit %d (2); unknown flag exit %d (2); no partial output %s",
                    ok_code, err, frac_ok ? "yes" : "no", io_code, usage_code, unknown_code, no_partial ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "spectral partition reconstruction", partition_reconstruction},
      {2, "DFT oracle equivalence", dft_oracle},
      {3, "Parseval per band", parseval},
      {4, "band boundary formula", band_boundaries},
      {5, "SafePow contract", safe_pow_contract},
      {6, "identity at init", identity_at_init},
      {7, "gradient correctness", gradients},
      {8, "shape contract", shapes},
      {9, "surrogate training", surrogate_training},
      {10, "band-count sweep", band_sweep},
      {11, "determinism and persistence", determinism},
      {12, "CLI contract", cli_contract},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
