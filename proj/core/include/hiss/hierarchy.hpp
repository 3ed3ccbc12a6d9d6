#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hiss/layers/stack.hpp"

namespace hiss::hierarchy {

using layers::ForwardContext;
using layers::LayerStackSpec;
using layers::ParameterStore;
using ndgrad::Tensor;

/// Chunk i covers sensor rows [(i+1)*stride - k, (i+1)*stride); rows before 0
/// read as zeros.
struct ChunkPlan {
  std::size_t k = 1;
  std::size_t stride = 1;

  bool overlaps() const { return k > stride; }
  bool has_gaps() const { return k < stride; }
  std::size_t chunks(std::size_t length) const;  // throws AlignmentError
  /// Row indices of every chunk, -1 for padding, chunk-major.
  std::vector<long> indices(std::size_t length) const;
  /// Last sensor row of each chunk.
  std::vector<long> tick_rows(std::size_t length) const;
  void validate() const;
};

ChunkPlan make_plan(double sensor_hz, double output_hz, std::size_t k);

/// [T, d] -> [T/stride, k, d].
Tensor chunk(const Tensor& u, const ChunkPlan& plan);

struct HissSpec {
  std::optional<LayerStackSpec> low;  // empty: the chunk feature is the raw last row
  LayerStackSpec high;
  ChunkPlan plan;

  std::size_t feature_dim(std::size_t input_dim) const { return low ? low->output_dim : input_dim; }
  void validate(std::size_t input_dim) const;
};

/// Low stack on every chunk from a zero state, last-row features, high stack.
/// Parameters live under "low." and "high.".
Tensor hiss_forward(const HissSpec& spec, const ParameterStore& params, const Tensor& u,
                    const ForwardContext& ctx = {});

/// Full-rate stack under "flat.", read out at each chunk's last row.
Tensor flat_forward(const LayerStackSpec& spec, const ParameterStore& params, const Tensor& u,
                    const ChunkPlan& plan, const ForwardContext& ctx = {});

enum class ModelKind { flat, hiss };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Either a flat stack or a two-level hierarchy mapping sensor rows to
/// output ticks.
struct ModelSpec {
  ModelKind kind = ModelKind::hiss;
  LayerStackSpec flat;
  HissSpec hiss;
  std::size_t stride = 10;

  ChunkPlan plan() const;
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  void validate() const;
  std::string describe() const;
};

void init_model(const ModelSpec& spec, std::mt19937_64& rng, ParameterStore& store);
std::size_t model_parameter_count(const ModelSpec& spec);
Tensor model_forward(const ModelSpec& spec, const ParameterStore& params, const Tensor& u,
                     const ForwardContext& ctx = {});

/// Fills input/output dims left at 0: sensor and label widths, and a low
/// level feature width equal to its stack width. Validates the result.
ModelSpec resolve_dims(ModelSpec spec, std::size_t input_dim, std::size_t output_dim);

std::string model_spec_to_json(const ModelSpec& spec);
/// Dims missing from the text stay 0 until resolve_dims.
ModelSpec model_spec_from_json(const std::string& text);

enum class CostMode { flat_ssm, hiss_ssm, flat_attn, hiss_attn_over_ssm };

std::string to_string(CostMode mode);
CostMode cost_mode_from_string(const std::string& name);

/// Leading-order operation count; stride defaults to k.
double cost_model(std::size_t length, std::size_t k, CostMode mode, std::size_t stride = 0);

}  // namespace hiss::hierarchy
