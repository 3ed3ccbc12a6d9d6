#include "hiss/ndgrad/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hiss/errors.hpp"

namespace hiss::ndgrad {

std::size_t fft_size(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw ShapeError("fft length must be a power of two, got " + std::to_string(n));
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    // Twiddles are evaluated directly, not by repeated multiplication, to keep
    // round-off at the 1e-15 level for long transforms.
    std::vector<Complex> w(half);
    for (std::size_t k = 0; k < half; ++k) {
      w[k] = std::polar(1.0, ang * static_cast<double>(k));
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * w[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double s = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= s;
  }
}

std::vector<Complex> fft_real(std::span<const double> x, std::size_t min_size) {
  std::vector<Complex> a(fft_size(std::max(x.size(), min_size)));
  std::copy(x.begin(), x.end(), a.begin());
  fft_inplace(a, false);
  return a;
}

std::vector<double> ifft_real(std::span<const Complex> spectrum, std::size_t n) {
  std::vector<Complex> a(spectrum.begin(), spectrum.end());
  fft_inplace(a, true);
  std::vector<double> out(std::min(n, a.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i].real();
  return out;
}

namespace {

std::vector<double> linear_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t len = a.size() + b.size() - 1;
  auto fa = fft_real(a, len);
  auto fb = fft_real(b, len);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  return ifft_real(fa, len);
}

}  // namespace

std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("circular_convolve needs equal lengths");
  const std::size_t n = a.size();
  auto lin = linear_convolve(a, b);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < lin.size(); ++i) out[i % n] += lin[i];
  return out;
}

std::vector<double> causal_convolve(std::span<const double> kernel, std::span<const double> signal) {
  auto lin = linear_convolve(kernel, signal);
  lin.resize(signal.size(), 0.0);
  return lin;
}

std::vector<double> causal_correlate(std::span<const double> a, std::span<const double> b,
                                     std::size_t lags) {
  // r_s = sum_t a_t b_{t-s}: convolve reversed a with b and read backwards.
  if (a.empty() || b.empty()) return std::vector<double>(lags, 0.0);
  std::vector<double> ar(a.rbegin(), a.rend());
  auto lin = linear_convolve(ar, b);
  std::vector<double> r(lags, 0.0);
  const std::size_t last = a.size() - 1;
  for (std::size_t s = 0; s < lags && s <= last; ++s) r[s] = lin[last - s];
  return r;
}

}  // namespace hiss::ndgrad
