#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace hiss::layers {

using Complex = std::complex<double>;

/// The affine map x -> a*x + b. Composition is associative, which is what
/// lets a linear recurrence be evaluated as a prefix scan.
struct AffinePair {
  Complex a{1.0, 0.0};
  Complex b{0.0, 0.0};
};

/// Applies `earlier` first, then `later`.
inline AffinePair combine(const AffinePair& earlier, const AffinePair& later) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

/// x_t = a_t x_{t-1} + b_t from x_{-1} = 0, one step at a time.
std::vector<Complex> sequential_scan(std::span<const AffinePair> pairs);

/// Same recurrence through a work-efficient (Blelloch) up-sweep/down-sweep
/// over ceil(log2 T) levels, padded with identity maps to a power of two.
/// Each level may be split across `workers` threads; the combination order
/// is fixed, so results do not depend on the worker count.
std::vector<Complex> associative_scan(std::span<const AffinePair> pairs, std::size_t workers = 1);

enum class ScanMode { sequential, associative };

inline std::vector<Complex> run_scan(std::span<const AffinePair> pairs, ScanMode mode) {
  return mode == ScanMode::sequential ? sequential_scan(pairs) : associative_scan(pairs);
}

}  // namespace hiss::layers
