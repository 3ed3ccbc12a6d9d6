#include "hiss/layers/stack.hpp"

#include <cmath>

#include "hiss/errors.hpp"
#include "hiss/ndgrad/ops.hpp"

namespace hiss::layers {

namespace nd = hiss::ndgrad;

void ParameterStore::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) {
    throw ShapeError("duplicate parameter " + name);
  }
}

void ParameterStore::set(const std::string& name, Tensor value) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ShapeError("unknown parameter " + name);
  if (it->second.shape() != value.shape()) throw ShapeError("shape change for parameter " + name);
  it->second = std::move(value);
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ShapeError("missing parameter " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [k, v] : tensors_) out.push_back(k);
  return out;
}

std::size_t ParameterStore::count() const { return count_with_prefix(""); }

std::size_t ParameterStore::count_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [k, v] : tensors_)
    if (k.compare(0, prefix.size(), prefix) == 0) n += v.numel();
  return n;
}

ParameterStore ParameterStore::bind() const {
  ParameterStore out;
  for (const auto& [k, v] : tensors_) out.tensors_.emplace(k, v.leaf(true));
  return out;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dssm: return "dssm";
    case LayerKind::selective: return "selective";
    case LayerKind::lstm: return "lstm";
    case LayerKind::attention: return "attention";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "dssm" || name == "s4") return LayerKind::dssm;
  if (name == "selective" || name == "mamba") return LayerKind::selective;
  if (name == "lstm") return LayerKind::lstm;
  if (name == "attention" || name == "attn" || name == "transformer") return LayerKind::attention;
  throw ConfigError("unknown layer kind '" + name + "'");
}

void LayerStackSpec::validate() const {
  if (depth < 1) throw ConfigError("stack depth must be >= 1");
  if (width < 1) throw ConfigError("stack width must be >= 1");
  if (input_dim < 1 || output_dim < 1) throw ConfigError("stack input/output dims must be >= 1");
  if ((kind == LayerKind::dssm || kind == LayerKind::selective) && state < 1) {
    throw ConfigError("ssm state size must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

namespace {

Tensor linear_weight(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(in * out);
  for (auto& x : v) x = dist(rng);
  return Tensor::parameter({in, out}, std::move(v));
}

Tensor zeros_param(std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 0.0)); }
Tensor ones_param(std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 1.0)); }

std::string layer_prefix(const std::string& prefix, std::size_t l) {
  return prefix + "layer" + std::to_string(l) + ".";
}

Tensor linear(const ParameterStore& s, const std::string& name, const Tensor& x) {
  return nd::add(nd::matmul(x, s.get(name + ".w")), s.get(name + ".b"));
}

Tensor norm(const ParameterStore& s, const std::string& name, const Tensor& x) {
  return nd::layer_norm(x, s.get(name + ".g"), s.get(name + ".b"));
}

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate == 0.0) return x;
  if (ctx.rng == nullptr) throw ConfigError("dropout during training needs a random generator");
  return nd::dropout(x, rate, *ctx.rng);
}

}  // namespace

void init_stack(const LayerStackSpec& spec, const std::string& prefix, std::mt19937_64& rng,
                ParameterStore& store) {
  spec.validate();
  const std::size_t w = spec.width;
  store.add(prefix + "embed.w", linear_weight(spec.input_dim, w, rng));
  store.add(prefix + "embed.b", zeros_param(w));
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const std::string p = layer_prefix(prefix, l);
    switch (spec.kind) {
      case LayerKind::dssm: {
        const auto s = init_ssm(w, spec.state, rng);
        store.add(p + "ssm.a_log_neg_re", s.a_log_neg_re);
        store.add(p + "ssm.a_im", s.a_im);
        store.add(p + "ssm.b_re", s.b_re);
        store.add(p + "ssm.b_im", s.b_im);
        store.add(p + "ssm.c_re", s.c_re);
        store.add(p + "ssm.c_im", s.c_im);
        store.add(p + "ssm.d", s.d);
        store.add(p + "ssm.log_dt", s.log_dt);
        store.add(p + "mix.w", linear_weight(w, w, rng));
        store.add(p + "mix.b", zeros_param(w));
        break;
      }
      case LayerKind::selective: {
        const auto s = init_selective(w, spec.state, rng);
        store.add(p + "sel.w_delta", s.w_delta);
        store.add(p + "sel.b_delta", s.b_delta);
        store.add(p + "sel.w_b", s.w_b);
        store.add(p + "sel.w_c", s.w_c);
        store.add(p + "sel.a_log_neg_re", s.a_log_neg_re);
        store.add(p + "sel.a_im", s.a_im);
        store.add(p + "sel.d", s.d);
        store.add(p + "mix.w", linear_weight(w, w, rng));
        store.add(p + "mix.b", zeros_param(w));
        break;
      }
      case LayerKind::lstm: {
        const auto s = init_lstm(w, w, rng);
        store.add(p + "lstm.w_ih", s.w_ih);
        store.add(p + "lstm.w_hh", s.w_hh);
        store.add(p + "lstm.bias", s.bias);
        break;
      }
      case LayerKind::attention: {
        const auto s = init_attention(w, rng);
        store.add(p + "attn.wq", s.wq);
        store.add(p + "attn.wk", s.wk);
        store.add(p + "attn.wv", s.wv);
        store.add(p + "attn.wo", s.wo);
        store.add(p + "ffn1.w", linear_weight(w, 2 * w, rng));
        store.add(p + "ffn1.b", zeros_param(2 * w));
        store.add(p + "ffn2.w", linear_weight(2 * w, w, rng));
        store.add(p + "ffn2.b", zeros_param(w));
        store.add(p + "norm2.g", ones_param(w));
        store.add(p + "norm2.b", zeros_param(w));
        break;
      }
    }
    store.add(p + "norm.g", ones_param(w));
    store.add(p + "norm.b", zeros_param(w));
  }
  store.add(prefix + "head.w", linear_weight(w, spec.output_dim, rng));
  store.add(prefix + "head.b", zeros_param(spec.output_dim));
}

std::size_t stack_parameter_count(const LayerStackSpec& spec) {
  const std::size_t w = spec.width, n = spec.state;
  std::size_t per_layer = 0;
  switch (spec.kind) {
    case LayerKind::dssm: per_layer = 6 * w * n + w * w + 5 * w; break;
    case LayerKind::selective: per_layer = 2 * w * w + 4 * w * n + 5 * w; break;
    case LayerKind::lstm: per_layer = 8 * w * w + 6 * w; break;
    case LayerKind::attention: per_layer = 8 * w * w + 7 * w; break;
  }
  return spec.input_dim * w + w + spec.depth * per_layer + w * spec.output_dim + spec.output_dim;
}

SsmParams ssm_params_at(const ParameterStore& s, const std::string& p) {
  return SsmParams{s.get(p + "a_log_neg_re"), s.get(p + "a_im"), s.get(p + "b_re"), s.get(p + "b_im"),
                   s.get(p + "c_re"),         s.get(p + "c_im"), s.get(p + "d"),    s.get(p + "log_dt")};
}

SelectiveParams selective_params_at(const ParameterStore& s, const std::string& p) {
  return SelectiveParams{s.get(p + "w_delta"),      s.get(p + "b_delta"), s.get(p + "w_b"), s.get(p + "w_c"),
                         s.get(p + "a_log_neg_re"), s.get(p + "a_im"),    s.get(p + "d")};
}

LstmWeights lstm_weights_at(const ParameterStore& s, const std::string& p) {
  return LstmWeights{s.get(p + "w_ih"), s.get(p + "w_hh"), s.get(p + "bias")};
}

AttentionWeights attention_weights_at(const ParameterStore& s, const std::string& p) {
  return AttentionWeights{s.get(p + "wq"), s.get(p + "wk"), s.get(p + "wv"), s.get(p + "wo")};
}

Tensor block_core(const LayerStackSpec& spec, const ParameterStore& params, const std::string& p,
                  const Tensor& h, const ForwardContext& ctx) {
  switch (spec.kind) {
    case LayerKind::dssm: {
      const Tensor s = dssm(ssm_params_at(params, p + "ssm."), h, ctx.dssm_path);
      return linear(params, p + "mix", nd::silu(s));
    }
    case LayerKind::selective: {
      const Tensor s = selective_scan(selective_params_at(params, p + "sel."), h, ctx.scan);
      return linear(params, p + "mix", nd::silu(s));
    }
    case LayerKind::lstm:
      return lstm_forward(lstm_weights_at(params, p + "lstm."), h);
    case LayerKind::attention:
      return causal_attention(attention_weights_at(params, p + "attn."), h);
  }
  throw ConfigError("unhandled layer kind");
}

Tensor stack_forward(const LayerStackSpec& spec, const ParameterStore& params, const std::string& prefix,
                     const Tensor& u, const ForwardContext& ctx) {
  if (u.rank() < 2 || u.dim(-1) != spec.input_dim) {
    throw ShapeError("stack expects input width " + std::to_string(spec.input_dim) + ", got " +
                     nd::to_string(u.shape()));
  }
  Tensor h = linear(params, prefix + "embed", u);
  if (spec.kind == LayerKind::attention) h = nd::add(h, sinusoidal_positions(u.dim(-2), spec.width));
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const std::string p = layer_prefix(prefix, l);
    const Tensor z = block_core(spec, params, p, h, ctx);
    h = norm(params, p + "norm", nd::add(h, maybe_dropout(z, spec.dropout, ctx)));
    if (spec.kind == LayerKind::attention) {
      const Tensor f = linear(params, p + "ffn2", nd::silu(linear(params, p + "ffn1", h)));
      h = norm(params, p + "norm2", nd::add(h, maybe_dropout(f, spec.dropout, ctx)));
    }
  }
  return linear(params, prefix + "head", h);
}

}  // namespace hiss::layers
