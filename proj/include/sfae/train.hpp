#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfae/enhancer_net.hpp"
#include "sfae/kv.hpp"
#include "sfae/pipeline.hpp"
#include "sfae/random.hpp"

namespace sfae::train {

using ad::Tensor;

struct TrainConfig {
  std::uint64_t seed = 42;
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t image_size = 64;  // packed 4-channel size; the mosaic is twice this
  std::size_t n_bands = 8;
  double lambda_recon = 1.0;
  double lambda_entropy = 0.05;
  std::size_t dataset_size = 20;
  double exposure_min = 0.03;
  double exposure_max = 0.1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  net::NetConfig net_config() const;

  /// Unknown keys are rejected so typos do not silently fall back to defaults.
  static TrainConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
};

/// clean^(1/2.2): display-referred tone mapping of the clean linear scene.
Tensor tonemap_target(const Tensor& clean_linear);

inline constexpr std::size_t kSoftHistBins = 64;
inline constexpr double kSoftHistBandwidth = 1.5;  // in bin widths

/// Differentiable histogram entropy in bits, averaged over the batch. Each
/// sample's values are clamped to [0, 1] and softly assigned to 64 bin
/// centers with a Gaussian kernel; per-value weights are normalized to 1.
Tensor soft_entropy(const Tensor& x);

struct LossWeights {
  double recon = 1.0;
  double entropy = 0.05;
};

struct LossTerms {
  Tensor total;
  Tensor l1;
  Tensor entropy_bits;
};

/// recon * mean|enhanced - target| - entropy * soft_entropy(enhanced) / log2(64).
LossTerms loss(const pipeline::EnhanceOutput& output, const Tensor& target, const LossWeights& weights);

/// A parameter's gradient contained NaN or Inf.
class NonFiniteGradientError : public std::runtime_error {
 public:
  NonFiniteGradientError(std::string param, const std::string& what)
      : std::runtime_error(what), param_(std::move(param)) {}
  const std::string& param() const noexcept { return param_; }

 private:
  std::string param_;
};

/// The loss became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of named parameters. A
/// parameter that received no gradient is treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions options);

  /// Validates every gradient before touching any parameter.
  void step();
  std::size_t steps_taken() const noexcept { return t_; }

  const std::vector<std::pair<std::string, Tensor>>& params() const noexcept { return params_; }
  std::vector<std::vector<double>>& first_moments() noexcept { return m_; }
  std::vector<std::vector<double>>& second_moments() noexcept { return v_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }
  void set_steps_taken(std::size_t t) noexcept { t_ = t; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct Sample {
  Tensor image;   // 1 x 4 x S x S, normalized RAW
  Tensor bands;   // 1 x (N 4) x S x S, band-major
  Tensor target;  // 1 x 4 x S x S
};

/// Fixed synthetic low-light dataset; image i uses a seed derived from
/// (config.seed, i) and an exposure drawn from [exposure_min, exposure_max].
std::vector<Sample> make_dataset(const TrainConfig& config);

struct StepMetrics {
  std::size_t step = 0;  // 1-based
  double loss = 0.0;
  double l1 = 0.0;
  double entropy_bits = 0.0;
  double gamma_orig_mean = 0.0;
  double gamma_freq_mean = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,loss,l1,entropy_bits,gamma_orig_mean,gamma_freq_mean";
std::string metrics_row(const StepMetrics& m);

struct Evaluation {
  double l1 = 0.0;                  // mean over the dataset
  double raw_entropy = 0.0;         // 256-bin, mean over images
  double enhanced_entropy = 0.0;    // of the [0,1]-clamped output
  double raw_abs_skewness = 0.0;    // mean |skewness|
  double enhanced_abs_skewness = 0.0;
  double gamma_abs_deviation = 0.0; // mean |gamma - 1| over all predicted gammas
};

Evaluation evaluate(const net::NetParams& params, const net::NetConfig& net_config, const std::vector<Sample>& data);

struct Checkpoint {
  TrainConfig config;
  std::uint64_t step = 0;
  std::string rng_state;
  /// Named records: param/<name>, adam_m/<name>, adam_v/<name>.
  std::vector<std::pair<std::string, Tensor>> tensors;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  // Parameters and optimizer share tensor storage, so copies would alias.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) = default;
  Trainer& operator=(Trainer&&) = default;

  static Trainer resume(const Checkpoint& checkpoint);

  /// One optimizer step on a batch drawn without replacement.
  StepMetrics step();
  /// Runs until `config().steps` steps are done, appending rows to `log`.
  std::vector<StepMetrics> run(std::ostream* log = nullptr);

  Checkpoint checkpoint() const;
  std::size_t steps_done() const noexcept { return adam_.steps_taken(); }
  const TrainConfig& config() const noexcept { return config_; }
  const net::NetParams& params() const noexcept { return params_; }
  const std::vector<Sample>& dataset() const noexcept { return data_; }

 private:
  TrainConfig config_;
  net::NetConfig net_config_;
  std::vector<Sample> data_;
  net::NetParams params_;
  Adam adam_;
  Rng rng_;
};

// ---- Binary archive (checkpoints and raw tensor dumps) ----

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

/// "SFAE", u32 version, u64 total length, u32 header length + header text,
/// u32 record count, records (u32 name length, name, u32 rank, u32 dims,
/// f64 payload), u32 CRC-32 of everything before it. All little-endian.
struct Archive {
  std::string header;
  std::vector<std::pair<std::string, Tensor>> records;
};

std::vector<std::uint8_t> encode_archive(const Archive& archive);
Archive decode_archive(std::span<const std::uint8_t> bytes);
void save_archive(const Archive& archive, const std::string& path);
Archive load_archive(const std::string& path);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Network parameters stored in a checkpoint; shapes are checked against a
/// fresh init for the checkpoint's config.
net::NetParams params_from_checkpoint(const Checkpoint& checkpoint);

struct SweepEntry {
  std::size_t n_bands = 0;
  Evaluation initial;
  Evaluation final;
  std::vector<StepMetrics> log;
};

/// Trains one model per band count with otherwise identical config.
std::vector<SweepEntry> band_sweep(const TrainConfig& base, std::span<const std::size_t> band_counts);

}  // namespace sfae::train
