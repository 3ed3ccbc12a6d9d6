#include "hiss/layers/scan.hpp"

#include "hiss/parallel.hpp"

namespace hiss::layers {

namespace {

// Below this many nodes per level the thread start-up cost dominates.
constexpr std::size_t kParallelGrain = 1 << 14;

void for_level(std::size_t count, std::size_t workers,
               const std::function<void(std::size_t, std::size_t)>& fn) {
  if (workers > 1 && count >= kParallelGrain) {
    parallel_for(count, workers, fn);
  } else if (count) {
    fn(0, count);
  }
}

}  // namespace

std::vector<Complex> sequential_scan(std::span<const AffinePair> pairs) {
  std::vector<Complex> x(pairs.size());
  Complex state{0.0, 0.0};
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    state = pairs[t].a * state + pairs[t].b;
    x[t] = state;
  }
  return x;
}

std::vector<Complex> associative_scan(std::span<const AffinePair> pairs, std::size_t workers) {
  const std::size_t n = pairs.size();
  if (n == 0) return {};
  std::size_t size = 1;
  while (size < n) size <<= 1;

  std::vector<AffinePair> tree(size);
  std::copy(pairs.begin(), pairs.end(), tree.begin());

  // Up-sweep: each right node becomes the composition of its subtree.
  for (std::size_t step = 1; step < size; step <<= 1) {
    const std::size_t span2 = step * 2;
    for_level(size / span2, workers, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const std::size_t left = i * span2 + step - 1;
        const std::size_t right = i * span2 + span2 - 1;
        tree[right] = combine(tree[left], tree[right]);
      }
    });
  }

  // Down-sweep: turn subtree sums into exclusive prefixes.
  tree[size - 1] = AffinePair{};
  for (std::size_t step = size / 2; step >= 1; step >>= 1) {
    const std::size_t span2 = step * 2;
    for_level(size / span2, workers, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const std::size_t left = i * span2 + step - 1;
        const std::size_t right = i * span2 + span2 - 1;
        const AffinePair subtree = tree[left];
        tree[left] = tree[right];
        tree[right] = combine(tree[right], subtree);
      }
    });
  }

  std::vector<Complex> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = combine(tree[t], pairs[t]).b;
  return x;
}

}  // namespace hiss::layers
