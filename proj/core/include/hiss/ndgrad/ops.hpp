#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "hiss/ndgrad/tensor.hpp"

namespace hiss::ndgrad {

enum class EwOp { add, sub, mul, div, exp, log, tanh, sigmoid, silu, softplus, neg };

std::string_view name(EwOp op);
bool is_binary(EwOp op);

/// Trailing-dimension (numpy) broadcasting; throws ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(EwOp op, const Tensor& a);
Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(EwOp::div, a, b); }
inline Tensor exp(const Tensor& a) { return elementwise(EwOp::exp, a); }
inline Tensor log(const Tensor& a) { return elementwise(EwOp::log, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(EwOp::tanh, a); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(EwOp::sigmoid, a); }
inline Tensor silu(const Tensor& a) { return elementwise(EwOp::silu, a); }
inline Tensor softplus(const Tensor& a) { return elementwise(EwOp::softplus, a); }
inline Tensor neg(const Tensor& a) { return elementwise(EwOp::neg, a); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor scale(const Tensor& a, double factor);

/// [..., m, k] x [k, n] -> [..., m, n]. Leading axes of `a` are batch rows.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Picks entries along `axis`; an index of -1 yields a zero slice.
Tensor gather(const Tensor& a, long axis, const std::vector<long>& index);

/// Normalizes over the last axis, then applies per-feature gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

}  // namespace hiss::ndgrad
