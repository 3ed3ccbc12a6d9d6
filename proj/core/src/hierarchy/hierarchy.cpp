#include "hiss/hierarchy.hpp"

#include <cmath>
#include <sstream>

#include "hiss/errors.hpp"
#include "hiss/ndgrad/ops.hpp"
#include "json_util.hpp"

namespace hiss::hierarchy {

namespace nd = hiss::ndgrad;
using detail::Json;

void ChunkPlan::validate() const {
  if (k < 1 || stride < 1) throw ConfigError("chunk size and stride must be >= 1");
}

std::size_t ChunkPlan::chunks(std::size_t length) const {
  validate();
  if (length % stride != 0) {
    throw AlignmentError("sequence length " + std::to_string(length) + " is not a multiple of stride " +
                         std::to_string(stride));
  }
  return length / stride;
}

std::vector<long> ChunkPlan::indices(std::size_t length) const {
  const std::size_t n = chunks(length);
  std::vector<long> idx;
  idx.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const long end = static_cast<long>((i + 1) * stride);
    for (long r = end - static_cast<long>(k); r < end; ++r) idx.push_back(r < 0 ? -1 : r);
  }
  return idx;
}

std::vector<long> ChunkPlan::tick_rows(std::size_t length) const {
  const std::size_t n = chunks(length);
  std::vector<long> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = static_cast<long>((i + 1) * stride) - 1;
  return rows;
}

ChunkPlan make_plan(double sensor_hz, double output_hz, std::size_t k) {
  if (!(sensor_hz > 0.0) || !(output_hz > 0.0)) throw RateError("rates must be positive");
  const double ratio = sensor_hz / output_hz;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio) {
    std::ostringstream os;
    os << "sensor rate " << sensor_hz << " Hz is not a multiple of output rate " << output_hz << " Hz";
    throw RateError(os.str());
  }
  if (k < 1) throw ConfigError("chunk size must be >= 1");
  return ChunkPlan{k, static_cast<std::size_t>(rounded)};
}

Tensor chunk(const Tensor& u, const ChunkPlan& plan) {
  if (u.rank() != 2) throw ShapeError("chunk expects [T, d], got " + nd::to_string(u.shape()));
  const std::size_t n = plan.chunks(u.dim(0));
  return nd::reshape(nd::gather(u, 0, plan.indices(u.dim(0))), {n, plan.k, u.dim(1)});
}

void HissSpec::validate(std::size_t input_dim) const {
  plan.validate();
  if (low) {
    low->validate();
    if (low->input_dim != input_dim) throw ConfigError("low level input dim does not match the sensor dim");
  }
  high.validate();
  if (high.input_dim != feature_dim(input_dim)) {
    throw ConfigError("high level input dim " + std::to_string(high.input_dim) +
                      " does not match the chunk feature dim " + std::to_string(feature_dim(input_dim)));
  }
}

Tensor hiss_forward(const HissSpec& spec, const ParameterStore& params, const Tensor& u,
                    const ForwardContext& ctx) {
  if (u.rank() != 2) throw ShapeError("hiss_forward expects [T, d], got " + nd::to_string(u.shape()));
  Tensor features;
  if (spec.low) {
    const Tensor chunks = chunk(u, spec.plan);
    const std::size_t n = chunks.dim(0);
    const Tensor low = layers::stack_forward(*spec.low, params, "low.", chunks, ctx);
    const Tensor last = nd::gather(low, 1, {static_cast<long>(spec.plan.k) - 1});
    features = nd::reshape(last, {n, spec.low->output_dim});
  } else {
    features = nd::gather(u, 0, spec.plan.tick_rows(u.dim(0)));
  }
  return layers::stack_forward(spec.high, params, "high.", features, ctx);
}

Tensor flat_forward(const LayerStackSpec& spec, const ParameterStore& params, const Tensor& u,
                    const ChunkPlan& plan, const ForwardContext& ctx) {
  if (u.rank() != 2) throw ShapeError("flat_forward expects [T, d], got " + nd::to_string(u.shape()));
  const auto rows = plan.tick_rows(u.dim(0));
  const Tensor y = layers::stack_forward(spec, params, "flat.", u, ctx);
  if (plan.stride == 1) return y;
  return nd::gather(y, 0, rows);
}

std::string to_string(ModelKind kind) { return kind == ModelKind::flat ? "flat" : "hiss"; }

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "flat") return ModelKind::flat;
  if (name == "hiss") return ModelKind::hiss;
  throw ConfigError("unknown model kind '" + name + "'");
}

ChunkPlan ModelSpec::plan() const {
  if (kind == ModelKind::hiss) return hiss.plan;
  return ChunkPlan{1, stride};
}

std::size_t ModelSpec::input_dim() const {
  if (kind == ModelKind::flat) return flat.input_dim;
  return hiss.low ? hiss.low->input_dim : hiss.high.input_dim;
}

std::size_t ModelSpec::output_dim() const {
  return kind == ModelKind::flat ? flat.output_dim : hiss.high.output_dim;
}

void ModelSpec::validate() const {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (kind == ModelKind::flat) {
    flat.validate();
    return;
  }
  if (hiss.plan.stride != stride) throw ConfigError("hierarchy stride does not match the model stride");
  hiss.validate(input_dim());
}

std::string ModelSpec::describe() const {
  std::ostringstream os;
  if (kind == ModelKind::flat) {
    os << "flat-" << layers::to_string(flat.kind) << " d" << flat.depth << " w" << flat.width;
  } else {
    os << "hiss(" << (hiss.low ? layers::to_string(hiss.low->kind) : std::string("identity")) << ","
       << layers::to_string(hiss.high.kind) << ") k" << hiss.plan.k;
  }
  os << " stride" << stride;
  return os.str();
}

void init_model(const ModelSpec& spec, std::mt19937_64& rng, ParameterStore& store) {
  spec.validate();
  if (spec.kind == ModelKind::flat) {
    layers::init_stack(spec.flat, "flat.", rng, store);
    return;
  }
  if (spec.hiss.low) layers::init_stack(*spec.hiss.low, "low.", rng, store);
  layers::init_stack(spec.hiss.high, "high.", rng, store);
}

std::size_t model_parameter_count(const ModelSpec& spec) {
  if (spec.kind == ModelKind::flat) return layers::stack_parameter_count(spec.flat);
  return (spec.hiss.low ? layers::stack_parameter_count(*spec.hiss.low) : 0) +
         layers::stack_parameter_count(spec.hiss.high);
}

Tensor model_forward(const ModelSpec& spec, const ParameterStore& params, const Tensor& u,
                     const ForwardContext& ctx) {
  if (spec.kind == ModelKind::flat) return flat_forward(spec.flat, params, u, spec.plan(), ctx);
  return hiss_forward(spec.hiss, params, u, ctx);
}

ModelSpec resolve_dims(ModelSpec spec, std::size_t input_dim, std::size_t output_dim) {
  auto fill = [](std::size_t& v, std::size_t value) {
    if (v == 0) v = value;
  };
  if (spec.kind == ModelKind::flat) {
    fill(spec.flat.input_dim, input_dim);
    fill(spec.flat.output_dim, output_dim);
  } else {
    if (spec.hiss.low) {
      fill(spec.hiss.low->input_dim, input_dim);
      fill(spec.hiss.low->output_dim, spec.hiss.low->width);
    }
    fill(spec.hiss.high.input_dim, spec.hiss.feature_dim(input_dim));
    fill(spec.hiss.high.output_dim, output_dim);
  }
  spec.validate();
  if (spec.input_dim() != input_dim || spec.output_dim() != output_dim) {
    throw ConfigError("model maps " + std::to_string(spec.input_dim()) + " -> " + std::to_string(spec.output_dim()) +
                      " dims but the data has " + std::to_string(input_dim) + " -> " + std::to_string(output_dim));
  }
  return spec;
}

namespace {

Json stack_to_json(const LayerStackSpec& s) {
  return Json{{"kind", layers::to_string(s.kind)}, {"depth", s.depth},         {"width", s.width},
              {"state", s.state},                  {"input_dim", s.input_dim}, {"output_dim", s.output_dim},
              {"dropout", s.dropout}};
}

LayerStackSpec stack_from_json(const Json& j, const std::string& where) {
  detail::reject_unknown(j, where, {"kind", "depth", "width", "state", "input_dim", "output_dim", "dropout"});
  LayerStackSpec s;
  s.kind = layers::layer_kind_from_string(detail::get_or<std::string>(j, "kind", "dssm", where));
  s.depth = detail::get_size(j, "depth", s.depth, where);
  s.width = detail::get_size(j, "width", s.width, where);
  s.state = detail::get_size(j, "state", s.state, where);
  s.input_dim = detail::get_size(j, "input_dim", 0, where);
  s.output_dim = detail::get_size(j, "output_dim", 0, where);
  s.dropout = detail::get_or<double>(j, "dropout", s.dropout, where);
  return s;
}

}  // namespace

std::string model_spec_to_json(const ModelSpec& spec) {
  Json j{{"kind", to_string(spec.kind)}, {"stride", spec.stride}};
  if (spec.kind == ModelKind::flat) {
    j["stack"] = stack_to_json(spec.flat);
  } else {
    j["k"] = spec.hiss.plan.k;
    j["low"] = spec.hiss.low ? stack_to_json(*spec.hiss.low) : Json(nullptr);
    j["high"] = stack_to_json(spec.hiss.high);
  }
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  const Json j = detail::parse_json(text, "model");
  detail::reject_unknown(j, "model", {"kind", "stride", "stack", "k", "low", "high"});
  ModelSpec spec;
  spec.kind = model_kind_from_string(detail::get_or<std::string>(j, "kind", "hiss", "model"));
  spec.stride = detail::get_size(j, "stride", spec.stride, "model");
  if (spec.kind == ModelKind::flat) {
    if (!j.contains("stack")) throw ConfigError("flat model needs a 'stack'");
    spec.flat = stack_from_json(j.at("stack"), "model.stack");
  } else {
    if (!j.contains("high")) throw ConfigError("hiss model needs a 'high' stack");
    spec.hiss.plan = ChunkPlan{detail::get_size(j, "k", spec.stride, "model"), spec.stride};
    if (j.contains("low") && !j.at("low").is_null()) spec.hiss.low = stack_from_json(j.at("low"), "model.low");
    spec.hiss.high = stack_from_json(j.at("high"), "model.high");
  }
  return spec;
}

std::string to_string(CostMode mode) {
  switch (mode) {
    case CostMode::flat_ssm: return "flat-ssm";
    case CostMode::hiss_ssm: return "hiss-ssm";
    case CostMode::flat_attn: return "flat-attn";
    case CostMode::hiss_attn_over_ssm: return "hiss-attn-over-ssm";
  }
  return "?";
}

CostMode cost_mode_from_string(const std::string& name) {
  for (CostMode m : {CostMode::flat_ssm, CostMode::hiss_ssm, CostMode::flat_attn, CostMode::hiss_attn_over_ssm})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown cost mode '" + name + "'");
}

double cost_model(std::size_t length, std::size_t k, CostMode mode, std::size_t stride) {
  const double n = static_cast<double>(length);
  const double kk = static_cast<double>(k);
  const double chunks = n / static_cast<double>(stride == 0 ? k : stride);
  switch (mode) {
    case CostMode::flat_ssm: return n;
    case CostMode::hiss_ssm: return chunks * kk + chunks;
    case CostMode::flat_attn: return n * n;
    case CostMode::hiss_attn_over_ssm: return chunks * kk + chunks * chunks;
  }
  return 0.0;
}

}  // namespace hiss::hierarchy
