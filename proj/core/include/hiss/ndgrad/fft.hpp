#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace hiss::ndgrad {

using Complex = std::complex<double>;

/// Smallest power of two >= n (n = 0 maps to 1).
std::size_t fft_size(std::size_t n);

/// In-place iterative radix-2 transform; size must be a power of two.
/// The inverse includes the 1/n factor.
void fft_inplace(std::vector<Complex>& values, bool inverse);

/// Spectrum of a real signal zero-padded to fft_size(max(x.size(), min_size)).
std::vector<Complex> fft_real(std::span<const double> x, std::size_t min_size = 0);

/// Inverse of fft_real, truncated to the first n samples.
std::vector<double> ifft_real(std::span<const Complex> spectrum, std::size_t n);

/// Circular convolution of two equal-length sequences.
std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b);

/// First signal.size() outputs of the linear convolution kernel * signal,
/// i.e. y_t = sum_{s<=t} kernel_s signal_{t-s}. The kernel may be shorter.
std::vector<double> causal_convolve(std::span<const double> kernel, std::span<const double> signal);

/// r_s = sum_t a_t b_{t-s} for s in [0, lags): the adjoint of causal_convolve.
std::vector<double> causal_correlate(std::span<const double> a, std::span<const double> b,
                                     std::size_t lags);

}  // namespace hiss::ndgrad
