#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hiss {

/// Row-major T x d block of samples.
struct Series {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Series() = default;
  Series(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Series(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  bool operator==(const Series&) const = default;
};

}  // namespace hiss
