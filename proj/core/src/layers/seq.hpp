#pragma once

#include <cstddef>
#include <string>

#include "hiss/errors.hpp"
#include "hiss/ndgrad/tensor.hpp"

namespace hiss::layers::detail {

// A sequence tensor is [T, C] or [batch, T, C].
struct SeqDims {
  std::size_t batch = 1;
  std::size_t length = 0;
  std::size_t channels = 0;
};

inline SeqDims seq_dims(const ndgrad::Tensor& u, const std::string& who) {
  if (u.rank() == 2) return {1, u.dim(0), u.dim(1)};
  if (u.rank() == 3) return {u.dim(0), u.dim(1), u.dim(2)};
  throw ShapeError(who + " expects [T,C] or [B,T,C], got " + ndgrad::to_string(u.shape()));
}

inline void expect_numel(const ndgrad::Tensor& t, std::size_t n, const std::string& what) {
  if (t.numel() != n) {
    throw ShapeError(what + " must hold " + std::to_string(n) + " values, has shape " +
                     ndgrad::to_string(t.shape()));
  }
}

}  // namespace hiss::layers::detail
