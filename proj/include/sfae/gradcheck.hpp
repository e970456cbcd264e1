#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfae/tensor.hpp"

namespace sfae::ad {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Lower bound on the relative-error denominator, so entries whose true
  /// gradient is ~0 are compared absolutely at tolerance * floor.
  double denominator_floor = 1e-6;
  /// One-sided slopes differing by more than this (relative) mark a kink.
  double kink_threshold = 1e-2;
  /// 0 checks every entry; otherwise a seeded random subset per input.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0;
};

struct ExcludedPoint {
  std::size_t input = 0;
  std::size_t index = 0;
};

struct GradcheckReport {
  std::string name;
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::vector<ExcludedPoint> excluded;
  std::string diagnostic;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences (f(x+h) - f(x-h)) / 2h for every input that requires grad.
/// Entries where the one-sided slopes disagree (non-differentiable points)
/// are reported in `excluded` and do not count toward pass/fail. Inputs are
/// perturbed in place and restored.
GradcheckReport gradcheck(const std::string& name, const ScalarFn& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options = {});

std::string format_report(const GradcheckReport& report);

}  // namespace sfae::ad
