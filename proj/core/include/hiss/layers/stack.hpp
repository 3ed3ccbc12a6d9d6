#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hiss/layers/recurrent.hpp"
#include "hiss/layers/scan.hpp"
#include "hiss/layers/ssm.hpp"
#include "hiss/ndgrad/tensor.hpp"

namespace hiss::layers {

/// Named parameter tensors, iterated in name order.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& all() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  /// Total number of scalar parameters.
  std::size_t count() const;
  std::size_t count_with_prefix(const std::string& prefix) const;

  /// Fresh gradient-tracking leaves over the same storage, one set per worker.
  ParameterStore bind() const;

 private:
  std::map<std::string, Tensor> tensors_;
};

enum class LayerKind { dssm, selective, lstm, attention };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerStackSpec {
  LayerKind kind = LayerKind::dssm;
  std::size_t depth = 2;
  std::size_t width = 32;
  std::size_t state = 8;  // conjugate-pair modes per channel (SSM kinds)
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  double dropout = 0.0;

  void validate() const;
};

/// Evaluation switches shared by every layer in a forward pass.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
  ScanMode scan = ScanMode::sequential;
  DssmPath dssm_path = DssmPath::recurrent;
};

/// Adds every tensor of the stack under `prefix`.
void init_stack(const LayerStackSpec& spec, const std::string& prefix, std::mt19937_64& rng,
                ParameterStore& store);

/// Closed-form scalar parameter count of a stack.
std::size_t stack_parameter_count(const LayerStackSpec& spec);

SsmParams ssm_params_at(const ParameterStore& s, const std::string& prefix);
SelectiveParams selective_params_at(const ParameterStore& s, const std::string& prefix);
LstmWeights lstm_weights_at(const ParameterStore& s, const std::string& prefix);
AttentionWeights attention_weights_at(const ParameterStore& s, const std::string& prefix);

/// Sequence core of one block (before residual and normalization).
Tensor block_core(const LayerStackSpec& spec, const ParameterStore& params, const std::string& prefix,
                  const Tensor& h, const ForwardContext& ctx);

/// Linear embedding, depth x (core + residual + layer norm + dropout), linear
/// head. Attention stacks add sinusoidal positions after the embedding and a
/// feed-forward sub-block per layer. u is [T, input] or [B, T, input].
Tensor stack_forward(const LayerStackSpec& spec, const ParameterStore& params, const std::string& prefix,
                     const Tensor& u, const ForwardContext& ctx);

}  // namespace hiss::layers
