#pragma once

#include <cstdint>
#include <vector>

#include "sfae/gradcheck.hpp"

namespace sfae::check {

struct SuiteOptions {
  std::uint64_t seed = 42;
  /// Entries sampled per tensor in the network-level checks.
  std::size_t network_entries = 12;
  bool include_network = true;
};

/// Per-op checks on random inputs, then module-level and full-network
/// (1 x 4 x 16 x 16, N = 4) checks against central differences.
std::vector<ad::GradcheckReport> gradcheck_suite(const SuiteOptions& options = {});

}  // namespace sfae::check
