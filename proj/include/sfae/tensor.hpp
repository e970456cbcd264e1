#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfae::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Thrown when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown by the debug-mode non-finite detector; the message names the op.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string op, const std::string& what)
      : std::runtime_error(what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Dense row-major tensor of doubles. Copies share storage; the data is
/// treated as immutable once an op has consumed it, except for optimizer
/// updates of leaf parameters and gradient accumulation.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Extent of dimension `d`; negative values count from the back.
  std::size_t dim(int d) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Empty span until a backward pass has reached this tensor.
  std::span<const double> grad() const;
  /// Zero-filled grad buffer, allocated on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();

  /// Deep copy with no autodiff history.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Receives the output gradient and the output values; accumulates into the
/// captured inputs' grad buffers.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

/// Define-by-run record of executed ops. Records are appended in execution
/// order, so every op's inputs precede it and a reverse sweep is a valid
/// topological traversal.
class Tape {
 public:
  void record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);
  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor.
  void backward(const Tensor& loss);
  void clear() { records_.clear(); }
  std::size_t size() const noexcept { return records_.size(); }
  const std::string& op_name(std::size_t i) const { return records_.at(i).op; }

 private:
  struct Record {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

/// Makes `tape` the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the current thread (inference, oracle evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

/// When enabled, every op output is scanned for NaN/Inf.
void set_debug_checks(bool enabled) noexcept;
bool debug_checks() noexcept;

/// Builds an op result. If a tape is active and any input requires grad, the
/// output requires grad and `backward` is recorded. Used by every op,
/// including ones defined outside this library.
Tensor make_result(const std::string& op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace sfae::ad
