#pragma once

#include <cstddef>
#include <vector>

#include "sfae/tensor.hpp"

namespace sfae::ad::detail {

/// Maps flat output indices of a broadcast result back to flat indices of one
/// operand.
class BroadcastMap {
 public:
  BroadcastMap(const Shape& in, const Shape& out);
  std::size_t operator()(std::size_t out_index) const {
    return identity_ ? out_index : offsets_[out_index];
  }

 private:
  bool identity_ = true;
  std::vector<std::size_t> offsets_;
};

/// Row-major strides of `shape`.
std::vector<std::size_t> strides_of(const Shape& shape);

/// Normalizes a possibly negative dimension index against `rank`.
std::size_t normalize_dim(int d, std::size_t rank);

}  // namespace sfae::ad::detail
