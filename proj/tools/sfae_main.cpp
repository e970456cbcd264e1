// sfae: command-line front end for decomposition, enhancement, training and
// analysis. Exit codes: 0 success, 1 runtime or I/O error, 2 usage error.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sfae/check_suite.hpp"
#include "sfae/freq_decomp.hpp"
#include "sfae/ops.hpp"
#include "sfae/pipeline.hpp"
#include "sfae/raw_io.hpp"
#include "sfae/train.hpp"

namespace fs = std::filesystem;
using namespace sfae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string band_file(std::size_t i, std::size_t n) {
  const std::size_t digits = std::max<std::size_t>(2, std::to_string(n).size());
  std::string idx = std::to_string(i);
  return "band_" + std::string(digits - idx.size(), '0') + idx + ".pgm";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError(dir, "cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

struct RawInput {
  io::BayerFrame frame;
  ad::Tensor packed;
};

RawInput read_input(const std::string& image, const std::string& meta) {
  RawInput in;
  in.frame = io::load_raw(image, meta);
  in.packed = io::normalize_pack(in.frame).tensor;
  return in;
}

void write_packed(const ad::Tensor& packed, io::BayerPattern pattern, const std::string& path, io::NormalizeMode mode) {
  const std::vector<double> mosaic = io::unpack(packed, pattern);
  io::write_image(mosaic, 2 * packed.dim(2), 2 * packed.dim(3), path, mode);
}

// ---- decompose ----

struct DecomposeArgs {
  std::string input, meta, out;
  std::size_t bands = 8;
  double fmax = 0.5;
};

int run_decompose(const DecomposeArgs& a) {
  const RawInput in = read_input(a.input, a.meta);
  const freq::BandSpec spec = freq::band_boundaries(a.bands, a.fmax);
  const freq::BandMapSet maps = freq::decompose(in.packed, spec);
  ensure_dir(a.out);

  auto x = in.packed.data();
  std::vector<double> sum(x.size(), 0.0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    auto b = maps.maps[i].data();
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += b[k];
    write_packed(maps.maps[i], in.frame.pattern, join(a.out, band_file(i + 1, maps.size())), io::NormalizeMode::kMinMax);
  }
  double err = 0.0;
  for (std::size_t k = 0; k < sum.size(); ++k) err = std::max(err, std::fabs(sum[k] - x[k]));

  const std::vector<double> energy = freq::band_energy(in.packed, spec);
  double total = 0.0;
  for (double e : energy) total += e;
  std::string csv = "band,energy,fraction\n";
  for (std::size_t i = 0; i < energy.size(); ++i) {
    csv += std::to_string(i + 1) + "," + g17(energy[i]) + "," + g17(total > 0.0 ? energy[i] / total : 0.0) + "\n";
  }
  io::write_text(join(a.out, "energy.csv"), csv);
  io::write_text(join(a.out, "reconstruction_error.txt"), g17(err) + "\n");
  std::cout << "bands: " << maps.size() << "\nreconstruction error: " << g17(err) << "\n";
  return kExitOk;
}

// ---- enhance ----

struct EnhanceArgs {
  std::string input, meta, checkpoint, out;
};

int run_enhance(const EnhanceArgs& a) {
  if (!fs::exists(a.checkpoint)) throw io::IoError(a.checkpoint, "checkpoint not found: " + a.checkpoint);
  const train::Checkpoint ck = train::load_checkpoint(a.checkpoint);
  const net::NetConfig config = ck.config.net_config();
  const RawInput in = read_input(a.input, a.meta);
  if (in.packed.dim(1) != config.in_channels) {
    throw net::ConfigError("input " + ad::to_string(in.packed.shape()) + " does not match checkpoint network input " +
                           ad::to_string({1, config.in_channels, config.height, config.width}));
  }
  const net::NetParams params = train::params_from_checkpoint(ck);
  pipeline::EnhanceOutput out;
  {
    ad::NoGradScope no_grad;
    out = pipeline::enhance(in.packed, params, config);
  }
  ensure_dir(a.out);
  write_packed(out.enhanced, in.frame.pattern, join(a.out, "enhanced.pgm"), io::NormalizeMode::kClamp01);

  KeyValues header;
  header.set("kind", "enhanced");
  header.set("pattern", io::to_string(in.frame.pattern));
  header.set("n_bands", std::to_string(config.n_bands));
  train::save_archive({header.to_text(),
                       {{"enhanced", out.enhanced.detach()},
                        {"gamma_orig", out.gammas.gamma_orig.detach()},
                        {"gamma_freq", out.gammas.gamma_freq.detach()}}},
                      join(a.out, "enhanced.sfae"));

  const std::size_t C = config.in_channels;
  std::string csv = "kind,band,channel,gamma\n";
  for (std::size_t c = 0; c < C; ++c) {
    csv += "orig,0," + io::kChannelNames[c] + "," + g17(out.gammas.gamma_orig[c]) + "\n";
  }
  for (std::size_t i = 0; i < config.n_bands; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      csv += "freq," + std::to_string(i + 1) + "," + io::kChannelNames[c] + "," +
             g17(out.gammas.gamma_freq[i * C + c]) + "\n";
    }
  }
  io::write_text(join(a.out, "gammas.csv"), csv);
  std::cout << "enhanced " << ad::to_string(in.packed.shape()) << " with " << config.n_bands << " bands\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string config, out, resume;
  std::uint64_t seed = 42;
  bool seed_given = false;
  std::vector<std::size_t> sweep;
};

std::string evaluation_text(const std::string& prefix, const train::Evaluation& e) {
  return prefix + "l1 = " + g17(e.l1) + "\n" + prefix + "raw_entropy = " + g17(e.raw_entropy) + "\n" + prefix +
         "enhanced_entropy = " + g17(e.enhanced_entropy) + "\n" + prefix + "raw_abs_skewness = " +
         g17(e.raw_abs_skewness) + "\n" + prefix + "enhanced_abs_skewness = " + g17(e.enhanced_abs_skewness) +
         "\n" + prefix + "gamma_abs_deviation = " + g17(e.gamma_abs_deviation) + "\n";
}

int run_train(const TrainArgs& a) {
  train::TrainConfig config = train::TrainConfig::from_kv(KeyValues::load(a.config));
  if (a.seed_given) config.seed = a.seed;
  ensure_dir(a.out);

  if (!a.sweep.empty()) {
    const auto entries = train::band_sweep(config, a.sweep);
    std::string csv = "n_bands,initial_l1,final_l1,raw_entropy,enhanced_entropy,raw_abs_skewness,enhanced_abs_skewness,final_loss\n";
    for (const auto& e : entries) {
      std::ofstream log(join(a.out, "metrics_n" + std::to_string(e.n_bands) + ".csv"));
      log << train::kMetricsHeader << "\n";
      for (const auto& m : e.log) log << train::metrics_row(m) << "\n";
      csv += std::to_string(e.n_bands) + "," + g17(e.initial.l1) + "," + g17(e.final.l1) + "," +
             g17(e.final.raw_entropy) + "," + g17(e.final.enhanced_entropy) + "," + g17(e.final.raw_abs_skewness) +
             "," + g17(e.final.enhanced_abs_skewness) + "," + g17(e.log.empty() ? 0.0 : e.log.back().loss) + "\n";
    }
    io::write_text(join(a.out, "sweep.csv"), csv);
    std::cout << csv;
    return kExitOk;
  }

  train::Trainer trainer = a.resume.empty() ? train::Trainer(config) : [&] {
    train::Checkpoint ck = train::load_checkpoint(a.resume);
    ck.config.steps = config.steps;
    return train::Trainer::resume(ck);
  }();
  const train::Evaluation before = train::evaluate(trainer.params(), trainer.config().net_config(), trainer.dataset());

  const std::string metrics_path = join(a.out, "metrics.csv");
  const bool append = !a.resume.empty() && fs::exists(metrics_path);
  std::ofstream log(metrics_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw io::IoError(metrics_path, "cannot open " + metrics_path);
  if (!append) log << train::kMetricsHeader << "\n";
  trainer.run(&log);

  const train::Evaluation after = train::evaluate(trainer.params(), trainer.config().net_config(), trainer.dataset());
  train::save_checkpoint(trainer.checkpoint(), join(a.out, "checkpoint.sfae"));
  const std::string summary = "steps = " + std::to_string(trainer.steps_done()) + "\n" +
                              evaluation_text("initial_", before) + evaluation_text("final_", after);
  io::write_text(join(a.out, "summary.txt"), summary);
  std::cout << summary;
  return kExitOk;
}

// ---- gradcheck ----

int run_gradcheck(std::uint64_t seed, std::size_t entries) {
  bool ok = true;
  for (const auto& r : check::gradcheck_suite({.seed = seed, .network_entries = entries})) {
    std::cout << ad::format_report(r) << "\n";
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all checks passed" : "gradient check FAILED") << "\n";
  return ok ? kExitOk : kExitRuntime;
}

// ---- hist ----

struct HistArgs {
  std::string input, meta, enhanced, out;
  std::size_t bins = 256;
};

struct Stats {
  double entropy, skewness;
};

Stats write_hist(const ad::Tensor& t, std::size_t bins, const std::string& path) {
  io::write_text(path, io::histogram_csv(io::histogram(t, bins)));
  const ad::Tensor clamped = ad::clamp(t, 0.0, 1.0);
  return {io::image_entropy(clamped, bins), io::skewness(clamped.data())};
}

int run_hist(const HistArgs& a) {
  const RawInput in = read_input(a.input, a.meta);
  ensure_dir(a.out);
  const Stats raw = write_hist(in.packed, a.bins, join(a.out, "hist_raw.csv"));
  std::string summary = "image,entropy_bits,skewness\nraw," + g17(raw.entropy) + "," + g17(raw.skewness) + "\n";
  if (!a.enhanced.empty()) {
    const train::Archive dump = train::load_archive(a.enhanced);
    const ad::Tensor* enhanced = nullptr;
    for (const auto& [name, t] : dump.records)
      if (name == "enhanced") enhanced = &t;
    if (!enhanced) throw train::CheckpointError(a.enhanced + " has no 'enhanced' record");
    const Stats enh = write_hist(*enhanced, a.bins, join(a.out, "hist_enhanced.csv"));
    summary += "enhanced," + g17(enh.entropy) + "," + g17(enh.skewness) + "\n";
    summary += "delta_entropy," + g17(enh.entropy - raw.entropy) + ",\n";
  }
  io::write_text(join(a.out, "summary.csv"), summary);
  std::cout << summary;
  return kExitOk;
}

// ---- bench ----

struct BenchArgs {
  std::size_t bands = 8, size = 64, runs = 50;
  std::uint64_t seed = 42;
  std::string checkpoint;
};

int run_bench(const BenchArgs& a) {
  net::NetConfig config;
  net::NetParams params;
  if (!a.checkpoint.empty()) {
    const train::Checkpoint ck = train::load_checkpoint(a.checkpoint);
    config = ck.config.net_config();
    params = train::params_from_checkpoint(ck);
  } else {
    config.n_bands = a.bands;
    config.height = config.width = a.size;
    params = net::init_params(config, a.seed);
  }
  Rng rng(a.seed);
  std::vector<double> v(config.in_channels * a.size * a.size);
  for (auto& x : v) x = rng.uniform(0.01, 1.0);
  const ad::Tensor image({1, config.in_channels, a.size, a.size}, std::move(v));
  ad::NoGradScope no_grad;
  pipeline::enhance(image, params, config);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < a.runs; ++i) pipeline::enhance(image, params, config);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() /
                    static_cast<double>(a.runs);
  std::cout << "parameters: " << params.parameter_count() << "\n"
            << "input: " << ad::to_string(image.shape()) << ", bands " << config.n_bands << "\n"
            << "mean latency over " << a.runs << " runs: " << ms << " ms\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-band gamma enhancement for RAW images"};
  app.require_subcommand(1);

  DecomposeArgs dec;
  auto* c_dec = app.add_subcommand("decompose", "Split a RAW image into octave frequency band maps");
  c_dec->add_option("--input", dec.input, "16-bit PGM mosaic")->required();
  c_dec->add_option("--meta", dec.meta, "key=value sidecar")->required();
  c_dec->add_option("--bands", dec.bands, "number of bands")->capture_default_str()->check(CLI::Range(1, 64));
  c_dec->add_option("--fmax", dec.fmax, "upper edge of the top closed band (cycles/sample)")
      ->capture_default_str()
      ->check(CLI::Range(1e-6, 0.7071));
  c_dec->add_option("--out", dec.out, "output directory")->required();

  EnhanceArgs enh;
  auto* c_enh = app.add_subcommand("enhance", "Enhance a RAW image with a trained checkpoint");
  c_enh->add_option("--input", enh.input)->required();
  c_enh->add_option("--meta", enh.meta)->required();
  c_enh->add_option("--checkpoint", enh.checkpoint)->required();
  c_enh->add_option("--out", enh.out)->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train on synthetic low-light data from a key=value config");
  c_tr->add_option("--config", tr.config)->required();
  c_tr->add_option("--out", tr.out)->required();
  auto* seed_opt = c_tr->add_option("--seed", tr.seed, "overrides the config seed")->capture_default_str();
  c_tr->add_option("--resume", tr.resume, "continue from a checkpoint");
  c_tr->add_option("--sweep-bands", tr.sweep, "train once per band count, e.g. 2,4,6,8,10")
      ->delimiter(',')
      ->check(CLI::Range(1, 64));

  std::uint64_t gc_seed = 42;
  std::size_t gc_entries = 12;
  auto* c_gc = app.add_subcommand("gradcheck", "Run the gradient-check suite");
  c_gc->add_option("--seed", gc_seed)->capture_default_str();
  c_gc->add_option("--entries", gc_entries, "sampled entries per tensor in network checks")
      ->capture_default_str()
      ->check(CLI::Range(1, 100000));

  HistArgs hi;
  auto* c_hi = app.add_subcommand("hist", "Histogram, entropy and skewness of a RAW image (and its enhancement)");
  c_hi->add_option("--input", hi.input)->required();
  c_hi->add_option("--meta", hi.meta)->required();
  c_hi->add_option("--enhanced", hi.enhanced, "raw dump written by enhance");
  c_hi->add_option("--bins", hi.bins)->capture_default_str()->check(CLI::Range(2, 65536));
  c_hi->add_option("--out", hi.out)->required();

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Parameter count and forward latency");
  c_be->add_option("--bands", be.bands)->capture_default_str()->check(CLI::Range(1, 64));
  c_be->add_option("--size", be.size)->capture_default_str()->check(CLI::Range(8, 4096));
  c_be->add_option("--runs", be.runs)->capture_default_str()->check(CLI::Range(1, 100000));
  c_be->add_option("--seed", be.seed)->capture_default_str();
  c_be->add_option("--checkpoint", be.checkpoint);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  tr.seed_given = seed_opt->count() > 0;

  try {
    if (*c_dec) return run_decompose(dec);
    if (*c_enh) return run_enhance(enh);
    if (*c_tr) return run_train(tr);
    if (*c_gc) return run_gradcheck(gc_seed, gc_entries);
    if (*c_hi) return run_hist(hi);
    if (*c_be) return run_bench(be);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
