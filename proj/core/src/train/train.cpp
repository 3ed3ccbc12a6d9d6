#include "hiss/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "hiss/errors.hpp"
#include "hiss/ndgrad/ops.hpp"
#include "hiss/parallel.hpp"
#include "json_util.hpp"

namespace hiss::train {

namespace nd = hiss::ndgrad;
using detail::Json;

namespace {

constexpr double kDivergence = 1e6;

std::string scan_name(layers::ScanMode m) { return m == layers::ScanMode::sequential ? "sequential" : "associative"; }

layers::ScanMode scan_from(const std::string& s) {
  if (s == "sequential") return layers::ScanMode::sequential;
  if (s == "associative") return layers::ScanMode::associative;
  throw ConfigError("unknown scan mode '" + s + "'");
}

std::string path_name(layers::DssmPath p) { return p == layers::DssmPath::recurrent ? "recurrent" : "convolutional"; }

layers::DssmPath path_from(const std::string& s) {
  if (s == "recurrent") return layers::DssmPath::recurrent;
  if (s == "convolutional") return layers::DssmPath::convolutional;
  throw ConfigError("unknown dssm path '" + s + "'");
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

Tensor to_tensor(const Series& s) { return Tensor({s.rows, s.cols}, s.values); }

std::size_t resolve_workers(std::size_t configured) { return configured ? configured : max_workers(); }

layers::ForwardContext eval_context(const TrainConfig& c) {
  layers::ForwardContext ctx;
  ctx.scan = c.scan;
  ctx.dssm_path = c.dssm_path;
  return ctx;
}

std::mt19937_64 step_rng(std::uint64_t seed, std::size_t epoch, std::size_t slot) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(slot), 0x7472u};
  return std::mt19937_64(seq);
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i-- > 1;) std::swap(v[i], v[rng() % (i + 1)]);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("dataset fraction must lie in (0, 1]");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  if (preprocess.filter) {
    if (preprocess.filter->order < 1) throw ConfigError("filter order must be >= 1");
    if (!(preprocess.filter->cutoff_hz > 0.0)) throw ConfigError("filter cutoff must be positive");
  }
}

std::string TrainConfig::to_json() const {
  Json pre{{"subtract_resting", preprocess.subtract_resting},
           {"warmup", preprocess.warmup},
           {"diffs", preprocess.diffs},
           {"filter", preprocess.filter ? Json{{"order", preprocess.filter->order},
                                               {"cutoff_hz", preprocess.filter->cutoff_hz}}
                                        : Json(nullptr)}};
  Json j{{"dataset", dataset},
         {"model", Json::parse(hierarchy::model_spec_to_json(model))},
         {"epochs", epochs},
         {"lr", lr},
         {"batch_size", batch_size},
         {"seed", seed},
         {"clip_norm", clip_norm},
         {"optimizer", optimizer_name(optimizer)},
         {"split_fraction", split_fraction},
         {"split_seed", split_seed},
         {"fraction", fraction},
         {"preprocess", pre},
         {"scan", scan_name(scan)},
         {"dssm_path", path_name(dssm_path)},
         {"workers", workers}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const std::string w = "train";
  const Json j = detail::parse_json(text, w);
  detail::reject_unknown(j, w,
                         {"dataset", "model", "epochs", "lr", "batch_size", "seed", "clip_norm", "optimizer",
                          "split_fraction", "split_seed", "fraction", "preprocess", "scan", "dssm_path", "workers"});
  TrainConfig c;
  c.dataset = detail::get_or<std::string>(j, "dataset", "", w);
  if (!j.contains("model")) throw ConfigError("missing key 'model' in train");
  c.model = hierarchy::model_spec_from_json(j.at("model").dump());
  c.epochs = detail::get_size(j, "epochs", c.epochs, w);
  c.lr = detail::get_or(j, "lr", c.lr, w);
  c.batch_size = detail::get_size(j, "batch_size", c.batch_size, w);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed, w);
  c.clip_norm = detail::get_or(j, "clip_norm", c.clip_norm, w);
  c.optimizer = optimizer_from(detail::get_or<std::string>(j, "optimizer", "adam", w));
  c.split_fraction = detail::get_or(j, "split_fraction", c.split_fraction, w);
  c.split_seed = detail::get_or<std::uint64_t>(j, "split_seed", c.split_seed, w);
  c.fraction = detail::get_or(j, "fraction", c.fraction, w);
  c.scan = scan_from(detail::get_or<std::string>(j, "scan", "sequential", w));
  c.dssm_path = path_from(detail::get_or<std::string>(j, "dssm_path", "recurrent", w));
  c.workers = detail::get_size(j, "workers", 0, w);
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    const std::string pw = "train.preprocess";
    detail::reject_unknown(p, pw, {"subtract_resting", "warmup", "diffs", "filter"});
    c.preprocess.subtract_resting = detail::get_or(p, "subtract_resting", true, pw);
    c.preprocess.warmup = detail::get_size(p, "warmup", c.preprocess.warmup, pw);
    c.preprocess.diffs = detail::get_or(p, "diffs", true, pw);
    if (p.contains("filter") && !p.at("filter").is_null()) {
      const auto& f = p.at("filter");
      detail::reject_unknown(f, "train.preprocess.filter", {"order", "cutoff_hz"});
      preprocess::FilterSpec fs;
      fs.order = detail::get_or(f, "order", fs.order, "train.preprocess.filter");
      fs.cutoff_hz = detail::get_req<double>(f, "cutoff_hz", "train.preprocess.filter");
      c.preprocess.filter = fs;
    }
  }
  c.validate();
  return c;
}

Tensor mse_seq_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("prediction " + nd::to_string(pred.shape()) + " vs target " + nd::to_string(target.shape()));
  }
  const Tensor d = nd::sub(pred, target);
  return nd::mean(nd::mul(d, d));
}

double clip_global_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g) x *= s;
  }
  return norm;
}

void optimizer_step(ParameterStore& params, const GradMap& grads, OptimizerState& state,
                    const OptimizerConfig& config) {
  for (const auto& [name, g] : grads)
    for (double x : g)
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient for " + name);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (const auto& [name, g] : grads) {
    const Tensor& p = params.get(name);
    if (p.numel() != g.size()) throw ShapeError("gradient size mismatch for " + name);
    std::vector<double> w(p.data().begin(), p.data().end());
    if (config.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config.lr * g[i];
    } else {
      auto& m = state.m[name];
      auto& v = state.v[name];
      m.resize(g.size(), 0.0);
      v.resize(g.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        const double mh = m[i] / c1;
        const double vh = v[i] / c2;
        w[i] -= config.lr * mh / (std::sqrt(vh) + config.eps);
      }
    }
    params.set(name, Tensor::parameter(p.shape(), std::move(w)));
  }
}

Series prepare_sensor(const Series& sensor, double sensor_hz, const PreprocessConfig& config) {
  Series s = config.subtract_resting ? preprocess::subtract_resting(sensor, config.warmup) : sensor;
  if (config.filter) {
    preprocess::FilterSpec f = *config.filter;
    f.sample_hz = sensor_hz;
    s = preprocess::butterworth_lowpass(s, f);
  }
  if (config.diffs) s = preprocess::append_diffs(s);
  return s;
}

std::vector<Example> make_examples(const data::Dataset& dataset, const std::vector<std::string>& ids,
                                   const PreprocessConfig& config, const preprocess::NormStats& sensor_stats,
                                   const preprocess::NormStats& label_stats) {
  std::vector<Example> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto& t = dataset.get(id);
    const Series s = prepare_sensor(t.sensor, t.sensor_hz, config);
    out.push_back(Example{id, to_tensor(sensor_stats.apply(s)), to_tensor(label_stats.apply(t.label))});
  }
  return out;
}

SplitData prepare_split(const TrainConfig& config, const data::Dataset& dataset) {
  SplitData d;
  const auto assignment = data::split(dataset.manifest, config.split_fraction, config.split_seed);
  d.train_ids = data::subsample(assignment.train, config.fraction, config.split_seed);
  d.val_ids = assignment.val;

  // Statistics see the training ids only.
  std::vector<Series> sensors;
  std::vector<const Series*> sensor_ptrs, label_ptrs;
  sensors.reserve(d.train_ids.size());
  for (const auto& id : d.train_ids) {
    const auto& t = dataset.get(id);
    sensors.push_back(prepare_sensor(t.sensor, t.sensor_hz, config.preprocess));
    label_ptrs.push_back(&t.label);
  }
  for (const auto& s : sensors) sensor_ptrs.push_back(&s);
  d.sensor_stats = preprocess::NormStats::fit(sensor_ptrs);
  d.label_stats = preprocess::NormStats::fit(label_ptrs);

  std::set<std::string> train_set(d.train_ids.begin(), d.train_ids.end());
  for (const auto& id : d.val_ids)
    if (train_set.count(id)) throw SplitError("trajectory " + id + " is in both splits");

  d.train = make_examples(dataset, d.train_ids, config.preprocess, d.sensor_stats, d.label_stats);
  d.val = make_examples(dataset, d.val_ids, config.preprocess, d.sensor_stats, d.label_stats);
  return d;
}

double evaluate_mse(const ModelSpec& model, const ParameterStore& params, const std::vector<Example>& examples,
                    const layers::ForwardContext& ctx, std::size_t workers) {
  if (examples.empty()) throw LengthError("cannot evaluate on an empty split");
  std::vector<double> sse(examples.size());
  std::vector<std::size_t> count(examples.size());
  layers::ForwardContext eval = ctx;
  eval.training = false;
  parallel_for(examples.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Tensor pred = hierarchy::model_forward(model, params, examples[i].input, eval);
      if (pred.shape() != examples[i].target.shape()) {
        throw ShapeError("prediction " + nd::to_string(pred.shape()) + " vs target " +
                         nd::to_string(examples[i].target.shape()));
      }
      const auto p = pred.data();
      const auto y = examples[i].target.data();
      double acc = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) acc += (p[j] - y[j]) * (p[j] - y[j]);
      sse[i] = acc;
      count[i] = p.size();
    }
  });
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    total += sse[i];
    n += count[i];
  }
  return total / static_cast<double>(n);
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  Json tensors = Json::array();
  std::string payload;
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.params.all()) {
    tensors.push_back(Json{{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
    for (double v : t.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      char buf[8];
      std::memcpy(buf, &bits, 8);
      payload.append(buf, 8);
    }
    offset += t.numel();
  }
  Json history = Json::array();
  for (const auto& e : ckpt.history)
    history.push_back(Json{{"epoch", e.epoch}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse}});
  Json index{{"format", "hiss-checkpoint/1"},
             {"payload", "params.bin"},
             {"dtype", "float64-le"},
             {"tensors", tensors},
             {"norm", Json{{"sensor", Json::parse(ckpt.sensor_stats.to_json())},
                           {"label", Json::parse(ckpt.label_stats.to_json())}}},
             {"config", Json::parse(ckpt.config.to_json())},
             {"epoch", ckpt.epoch},
             {"steps", ckpt.steps},
             {"best_val_mse", ckpt.best_val_mse},
             {"history", history}};
  data::write_file_atomic(dir / "params.bin", payload);
  data::write_file_atomic(dir / "index.json", index.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto index_path = dir / "index.json";
  if (!std::filesystem::exists(index_path)) throw IoError("no checkpoint index at " + index_path.string());
  Json index;
  try {
    index = Json::parse(data::read_file(index_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint index: " + std::string(e.what()), 0);
  }
  const std::string payload = data::read_file(dir / index.value("payload", std::string("params.bin")));
  Checkpoint ckpt;
  try {
    if (index.at("format") != "hiss-checkpoint/1") throw ParseError("unsupported checkpoint format", 0);
    for (const auto& t : index.at("tensors")) {
      const auto shape = t.at("shape").get<nd::Shape>();
      const auto off = t.at("offset").get<std::size_t>();
      const auto cnt = t.at("count").get<std::size_t>();
      if (nd::numel(shape) != cnt || (off + cnt) * 8 > payload.size()) {
        throw ParseError("checkpoint payload too short for " + t.at("name").get<std::string>(), 0);
      }
      std::vector<double> v(cnt);
      for (std::size_t i = 0; i < cnt; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, payload.data() + (off + i) * 8, 8);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        v[i] = std::bit_cast<double>(bits);
      }
      ckpt.params.add(t.at("name").get<std::string>(), Tensor::parameter(shape, std::move(v)));
    }
    ckpt.sensor_stats = preprocess::NormStats::from_json(index.at("norm").at("sensor").dump());
    ckpt.label_stats = preprocess::NormStats::from_json(index.at("norm").at("label").dump());
    ckpt.config = TrainConfig::from_json(index.at("config").dump());
    ckpt.epoch = index.at("epoch").get<std::size_t>();
    ckpt.steps = index.value("steps", std::size_t{0});
    ckpt.best_val_mse = index.at("best_val_mse").get<double>();
    for (const auto& e : index.at("history")) {
      ckpt.history.push_back(EpochRecord{e.at("epoch").get<std::size_t>(), e.at("train_mse").get<double>(),
                                         e.at("val_mse").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint index: " + std::string(e.what()), 0);
  }
  return ckpt;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_mse,val_mse\n";
  for (const auto& e : history) os << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
  data::write_file_atomic(path, os.str());
}

Checkpoint fit(const TrainConfig& config_in, const data::Dataset& dataset, const FitOptions& options) {
  config_in.validate();
  TrainConfig config = config_in;
  SplitData split = prepare_split(config, dataset);
  config.model = hierarchy::resolve_dims(config.model, split.train.front().input.dim(1),
                                         split.train.front().target.dim(1));
  const std::size_t workers = resolve_workers(config.workers);

  ParameterStore params;
  std::mt19937_64 init_rng(config.seed);
  hierarchy::init_model(config.model, init_rng, params);

  // Same-length buckets, in first-appearance order.
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> buckets;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const std::size_t len = split.train[i].input.dim(0);
    auto it = std::find_if(buckets.begin(), buckets.end(), [&](const auto& b) { return b.first == len; });
    if (it == buckets.end()) {
      buckets.push_back({len, {}});
      it = std::prev(buckets.end());
    }
    it->second.push_back(i);
  }

  OptimizerConfig opt{config.optimizer, config.lr};
  OptimizerState state;
  Checkpoint best;
  best.config = config;
  best.sensor_stats = split.sensor_stats;
  best.label_stats = split.label_stats;
  best.best_val_mse = INFINITY;
  std::vector<EpochRecord> history;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto order_rng = step_rng(config.seed, epoch, 0xffffffffu);
    std::vector<std::vector<std::size_t>> batches;
    for (auto& [len, members] : buckets) {
      std::vector<std::size_t> m = members;
      shuffle(m, order_rng);
      for (std::size_t b = 0; b < m.size(); b += config.batch_size) {
        batches.emplace_back(m.begin() + static_cast<long>(b),
                             m.begin() + static_cast<long>(std::min(m.size(), b + config.batch_size)));
      }
    }
    std::vector<std::size_t> batch_order(batches.size());
    for (std::size_t i = 0; i < batch_order.size(); ++i) batch_order[i] = i;
    shuffle(batch_order, order_rng);

    double train_sse = 0.0;
    std::size_t train_count = 0;
    for (std::size_t bi : batch_order) {
      const auto& batch = batches[bi];
      std::vector<GradMap> grads(batch.size());
      std::vector<double> losses(batch.size());
      parallel_for(batch.size(), workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
          const Example& ex = split.train[batch[j]];
          auto rng = step_rng(config.seed, epoch, batch[j]);
          layers::ForwardContext ctx = eval_context(config);
          ctx.training = true;
          ctx.rng = &rng;
          const ParameterStore bound = params.bind();
          nd::Tape tape;
          nd::TapeScope scope(tape);
          const Tensor loss = mse_seq_loss(hierarchy::model_forward(config.model, bound, ex.input, ctx), ex.target);
          nd::backward(loss);
          losses[j] = loss.item();
          for (const auto& [name, t] : bound.all()) {
            if (t.has_grad()) grads[j][name].assign(t.grad().begin(), t.grad().end());
          }
        }
      });
      GradMap total;
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) {
        if (!std::isfinite(losses[j]) || losses[j] > kDivergence) {
          std::ostringstream os;
          os << "training loss " << losses[j] << " on " << split.train[batch[j]].id << " in epoch " << epoch;
          throw DivergenceError(os.str());
        }
        const std::size_t n = split.train[batch[j]].target.numel();
        train_sse += losses[j] * static_cast<double>(n);
        train_count += n;
        for (auto& [name, g] : grads[j]) {
          auto& acc = total[name];
          if (acc.empty()) acc.assign(g.size(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * inv;
        }
      }
      clip_global_norm(total, config.clip_norm);
      optimizer_step(params, total, state, opt);
    }

    EpochRecord rec{epoch, train_sse / static_cast<double>(train_count),
                    evaluate_mse(config.model, params, split.val, eval_context(config), workers)};
    if (!std::isfinite(rec.val_mse) || rec.val_mse > kDivergence) {
      std::ostringstream os;
      os << "validation loss " << rec.val_mse << " in epoch " << epoch;
      throw DivergenceError(os.str());
    }
    history.push_back(rec);
    if (rec.val_mse < best.best_val_mse) {
      best.best_val_mse = rec.val_mse;
      best.epoch = epoch;
      best.params = ParameterStore();
      for (const auto& [name, t] : params.all()) best.params.add(name, t.detach());
    }
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop && options.stop(rec)) break;
  }
  best.history = std::move(history);
  best.steps = state.step;
  if (options.out_dir) {
    save_checkpoint(*options.out_dir / "checkpoint", best);
    write_loss_csv(*options.out_dir / "loss.csv", best.history);
  }
  return best;
}

Checkpoint fit(const TrainConfig& config, const FitOptions& options) {
  if (config.dataset.empty()) throw ConfigError("train config names no dataset");
  return fit(config, data::load_dataset(config.dataset), options);
}

}  // namespace hiss::train
