#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <random>
#include <vector>

#include "hiss/layers/scan.hpp"
#include "hiss/ndgrad/tensor.hpp"

namespace hiss::layers {

using ndgrad::Tensor;

/// Diagonal state-space layer with `channels` independent single-input
/// single-output systems of `state` conjugate-pair modes each. All matrices
/// are [channels, state]; d and log_dt are [channels].
///
/// Re(A) = -exp(a_log_neg_re) keeps every mode stable by construction.
struct SsmParams {
  Tensor a_log_neg_re;
  Tensor a_im;
  Tensor b_re, b_im;
  Tensor c_re, c_im;
  Tensor d;
  Tensor log_dt;

  std::size_t channels() const { return d.numel(); }
  std::size_t state() const { return a_im.numel() / std::max<std::size_t>(1, channels()); }
  std::vector<Tensor> tensors() const { return {a_log_neg_re, a_im, b_re, b_im, c_re, c_im, d, log_dt}; }
};

/// A_j = -1/2 + i*pi*j, B = 1, C ~ N(0, 1/2) per component, log_dt ~ U[log 1e-3, log 1e-1].
SsmParams init_ssm(std::size_t channels, std::size_t state, std::mt19937_64& rng);

/// Zero-order-hold discretization, [channels, state] each.
struct DiscreteSsm {
  std::size_t channels = 0;
  std::size_t state = 0;
  std::vector<Complex> a_bar;
  std::vector<Complex> b_bar;
};

DiscreteSsm discretize(const SsmParams& p);

/// K_t = 2 Re(C a_bar^t b_bar), returned as [T, channels].
Tensor dssm_kernel(const SsmParams& p, std::size_t length);

/// Both evaluate y_t = 2 Re(C x_t) + D u_t with x_t = a_bar x_{t-1} + b_bar u_t
/// over u of shape [T, channels] or [batch, T, channels], from a zero state.
/// The recurrent path steps the state; the convolutional path builds the
/// kernel and convolves through the FFT. Each carries its own backward.
Tensor dssm_recurrent(const SsmParams& p, const Tensor& u);
Tensor dssm_convolutional(const SsmParams& p, const Tensor& u);

enum class DssmPath { recurrent, convolutional };

inline Tensor dssm(const SsmParams& p, const Tensor& u, DssmPath path) {
  return path == DssmPath::recurrent ? dssm_recurrent(p, u) : dssm_convolutional(p, u);
}

/// Input-dependent (selective) SSM. Step size, B_t and C_t are projections of
/// the input; A is a shared diagonal with the same stable parameterization.
struct SelectiveParams {
  Tensor w_delta;  // [channels, channels]
  Tensor b_delta;  // [channels]
  Tensor w_b;      // [channels, state]
  Tensor w_c;      // [channels, state]
  Tensor a_log_neg_re;  // [channels, state]
  Tensor a_im;          // [channels, state]
  Tensor d;             // [channels]

  std::size_t channels() const { return d.numel(); }
  std::size_t state() const { return a_im.numel() / std::max<std::size_t>(1, channels()); }
  std::vector<Tensor> tensors() const { return {w_delta, b_delta, w_b, w_c, a_log_neg_re, a_im, d}; }
};

SelectiveParams init_selective(std::size_t channels, std::size_t state, std::mt19937_64& rng);

/// Recurrence core: a_t = exp(delta_t A), x_t = a_t x_{t-1} + delta_t B_t u_t,
/// y_t = sum_j C_tj Re(x_tj) + D u_t. Shapes: u, delta [.., T, channels];
/// bt, ct [.., T, state]. Both scan modes share one backward, which runs the
/// adjoint recurrence through the same scan.
Tensor selective_core(const Tensor& u, const Tensor& delta, const Tensor& bt, const Tensor& ct,
                      const Tensor& a_log_neg_re, const Tensor& a_im, const Tensor& d,
                      ScanMode mode);

/// Projections (softplus step size, B_t, C_t) followed by selective_core.
Tensor selective_scan(const SelectiveParams& p, const Tensor& u,
                      ScanMode mode = ScanMode::associative);

}  // namespace hiss::layers
