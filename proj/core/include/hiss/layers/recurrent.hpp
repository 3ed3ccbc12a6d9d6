#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "hiss/ndgrad/tensor.hpp"

namespace hiss::layers {

using ndgrad::Tensor;

/// Gate order along the 4*hidden axis: input, forget, cell, output.
struct LstmWeights {
  Tensor w_ih;  // [input, 4*hidden]
  Tensor w_hh;  // [hidden, 4*hidden]
  Tensor bias;  // [4*hidden]

  std::size_t hidden() const { return w_hh.numel() ? w_hh.dim(0) : 0; }
  std::vector<Tensor> tensors() const { return {w_ih, w_hh, bias}; }
};

LstmWeights init_lstm(std::size_t input, std::size_t hidden, std::mt19937_64& rng);

/// Recurrence over precomputed input pre-activations [.., T, 4*hidden];
/// returns the hidden sequence [.., T, hidden] from a zero initial state.
Tensor lstm_recurrence(const Tensor& gates_in, const Tensor& w_hh);

/// Input projection plus recurrence.
Tensor lstm_forward(const LstmWeights& w, const Tensor& u);

/// Single-head causal self-attention with output projection.
struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // [width, width]

  std::vector<Tensor> tensors() const { return {wq, wk, wv, wo}; }
};

AttentionWeights init_attention(std::size_t width, std::mt19937_64& rng);

/// softmax(q k^T / sqrt(d)) v with positions s > t masked out, per batch.
/// Probabilities are kept only when a gradient will be needed, so inference
/// memory stays linear in T.
Tensor causal_attention_core(const Tensor& q, const Tensor& k, const Tensor& v);

Tensor causal_attention(const AttentionWeights& w, const Tensor& u);

/// Standard sin/cos position table [T, width].
Tensor sinusoidal_positions(std::size_t length, std::size_t width);

}  // namespace hiss::layers
