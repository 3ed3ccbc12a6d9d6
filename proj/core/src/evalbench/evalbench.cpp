#include "hiss/evalbench.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "hiss/errors.hpp"
#include "hiss/ndgrad/tensor.hpp"
#include "hiss/parallel.hpp"
#include "json_util.hpp"

namespace hiss::evalbench {

using detail::Json;
namespace nd = hiss::ndgrad;

std::string EvalReport::to_json() const {
  return Json{{"task", task},       {"model", model}, {"seeds", seeds},
              {"per_seed", per_seed}, {"mean", mean},   {"std", stddev}}
      .dump(2);
}

EvalReport aggregate(std::string task, std::string model, std::vector<std::uint64_t> seeds,
                     std::vector<double> values) {
  if (values.empty()) throw LengthError("no per-seed values to aggregate");
  if (!seeds.empty() && seeds.size() != values.size()) throw ShapeError("seed and value counts differ");
  EvalReport r{std::move(task), std::move(model), std::move(seeds), std::move(values), 0.0, 0.0};
  const double n = static_cast<double>(r.per_seed.size());
  for (double v : r.per_seed) r.mean += v;
  r.mean /= n;
  double ss = 0.0;
  for (double v : r.per_seed) ss += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(ss / n);
  return r;
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  throw ConfigError("unknown split '" + name + "'");
}

namespace {

std::vector<std::string> split_ids(const train::TrainConfig& cfg, const data::Dataset& dataset, Split split) {
  const auto assignment = data::split(dataset.manifest, cfg.split_fraction, cfg.split_seed);
  if (split == Split::val) return assignment.val;
  return data::subsample(assignment.train, cfg.fraction, cfg.split_seed);
}

std::vector<train::Example> split_examples(const train::Checkpoint& ckpt, const data::Dataset& dataset,
                                           Split split) {
  return train::make_examples(dataset, split_ids(ckpt.config, dataset, split), ckpt.config.preprocess,
                              ckpt.sensor_stats, ckpt.label_stats);
}

}  // namespace

double evaluate(const train::Checkpoint& ckpt, const data::Dataset& dataset, Split split) {
  layers::ForwardContext ctx;
  ctx.scan = ckpt.config.scan;
  ctx.dssm_path = ckpt.config.dssm_path;
  return train::evaluate_mse(ckpt.config.model, ckpt.params, split_examples(ckpt, dataset, split), ctx,
                             ckpt.config.workers ? ckpt.config.workers : max_workers());
}

double constant_mean_mse(const train::Checkpoint& ckpt, const data::Dataset& dataset, Split split) {
  double sse = 0.0;
  std::size_t n = 0;
  for (const auto& ex : split_examples(ckpt, dataset, split)) {
    for (double y : ex.target.data()) sse += y * y;
    n += ex.target.numel();
  }
  return sse / static_cast<double>(n);
}

std::string to_string(BenchModel m) {
  switch (m) {
    case BenchModel::flat_ssm: return "flat-ssm";
    case BenchModel::flat_selective: return "flat-selective";
    case BenchModel::flat_lstm: return "flat-lstm";
    case BenchModel::flat_attn: return "flat-attn";
    case BenchModel::hiss_ssm: return "hiss-ssm";
    case BenchModel::hiss_attn_over_ssm: return "hiss-attn-over-ssm";
  }
  return "?";
}

BenchModel bench_model_from_string(const std::string& name) {
  if (name == "s4") return BenchModel::flat_ssm;
  if (name == "mamba") return BenchModel::flat_selective;
  if (name == "lstm") return BenchModel::flat_lstm;
  if (name == "attn") return BenchModel::flat_attn;
  if (name == "hiss-s4") return BenchModel::hiss_ssm;
  if (name == "hiss-attn") return BenchModel::hiss_attn_over_ssm;
  for (BenchModel m : {BenchModel::flat_ssm, BenchModel::flat_selective, BenchModel::flat_lstm, BenchModel::flat_attn,
                       BenchModel::hiss_ssm, BenchModel::hiss_attn_over_ssm})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown benchmark model '" + name + "'");
}

hierarchy::CostMode cost_mode(BenchModel m) {
  switch (m) {
    case BenchModel::flat_attn: return hierarchy::CostMode::flat_attn;
    case BenchModel::hiss_ssm: return hierarchy::CostMode::hiss_ssm;
    case BenchModel::hiss_attn_over_ssm: return hierarchy::CostMode::hiss_attn_over_ssm;
    default: return hierarchy::CostMode::flat_ssm;
  }
}

LogLogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw LengthError("log-log fit needs at least 3 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y[i]) - my);
  }
  LogLogFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = std::log(y[i]) - (f.intercept + f.slope * std::log(x[i]));
    sse += r * r;
  }
  f.stderr_slope = std::sqrt(sse / (n - 2.0) / sxx);
  const boost::math::students_t dist(n - 2.0);
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  f.lo = f.slope - t * f.stderr_slope;
  f.hi = f.slope + t * f.stderr_slope;
  return f;
}

double median_seconds(const std::function<void()>& fn, const BenchSettings& settings, std::size_t* runs) {
  using clock = std::chrono::steady_clock;
  fn();  // warmup
  std::vector<double> times;
  std::size_t target = std::max<std::size_t>(settings.reps, 1);
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  while (true) {
    while (times.size() < target) {
      const auto t0 = clock::now();
      fn();
      times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    const double med = median(times);
    const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
    if ((*hi - *lo) <= settings.spread_limit * med || target >= settings.max_reps) {
      if (runs) *runs = times.size();
      return med;
    }
    target = std::min(settings.max_reps, target * 2);
  }
}

namespace {

hierarchy::ModelSpec bench_spec(BenchModel m, const BenchSettings& s) {
  layers::LayerStackSpec stack;
  stack.depth = s.depth;
  stack.width = s.width;
  stack.state = s.state;
  stack.input_dim = s.input_dim;
  stack.output_dim = 2;
  hierarchy::ModelSpec spec;
  spec.stride = 1;
  switch (m) {
    case BenchModel::flat_ssm:
    case BenchModel::flat_selective:
    case BenchModel::flat_lstm:
    case BenchModel::flat_attn:
      spec.kind = hierarchy::ModelKind::flat;
      spec.flat = stack;
      spec.flat.kind = m == BenchModel::flat_ssm         ? layers::LayerKind::dssm
                       : m == BenchModel::flat_selective ? layers::LayerKind::selective
                       : m == BenchModel::flat_lstm      ? layers::LayerKind::lstm
                                                         : layers::LayerKind::attention;
      break;
    case BenchModel::hiss_ssm:
    case BenchModel::hiss_attn_over_ssm: {
      spec.kind = hierarchy::ModelKind::hiss;
      spec.stride = s.k;
      spec.hiss.plan = {s.k, s.k};
      auto low = stack;
      low.output_dim = s.width;
      spec.hiss.low = low;
      spec.hiss.high = stack;
      spec.hiss.high.input_dim = s.width;
      spec.hiss.high.kind =
          m == BenchModel::hiss_ssm ? layers::LayerKind::dssm : layers::LayerKind::attention;
      break;
    }
  }
  spec.validate();
  return spec;
}

nd::Tensor random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return nd::Tensor({rows, cols}, std::move(v));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

ScalingReport scaling_bench(BenchModel model, const std::vector<std::size_t>& lengths, const BenchSettings& settings) {
  if (lengths.size() < 4) throw ConfigError("scaling bench needs at least 4 lengths");
  for (std::size_t i = 1; i < lengths.size(); ++i)
    if (lengths[i] <= lengths[i - 1]) throw ConfigError("bench lengths must be strictly increasing");
  if (lengths.back() < 8 * lengths.front()) throw ConfigError("bench lengths must span at least a factor of 8");
  const auto spec = bench_spec(model, settings);
  layers::ParameterStore params;
  std::mt19937_64 rng(settings.seed);
  hierarchy::init_model(spec, rng, params);

  ScalingReport r;
  r.model = to_string(model);
  const std::size_t stride = spec.plan().stride;
  std::vector<nd::Tensor> inputs;
  for (std::size_t len : lengths) {
    const std::size_t n = std::max(stride, len / stride * stride);
    inputs.push_back(random_input(n, settings.input_dim, settings.seed + n));
    nd::reset_values_built();
    hierarchy::model_forward(spec, params, inputs.back());  // also the warmup
    r.values_built.push_back(static_cast<double>(nd::values_built()));
    r.lengths.push_back(n);
    r.predicted_cost.push_back(hierarchy::cost_model(n, settings.k, cost_mode(model)));
  }

  // Rounds visit every length once, so slow phases of the host hit all lengths alike.
  using clock = std::chrono::steady_clock;
  std::vector<std::vector<double>> times(inputs.size());
  std::size_t target = std::max<std::size_t>(settings.reps, 1);
  while (true) {
    while (times.front().size() < target) {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto t0 = clock::now();
        hierarchy::model_forward(spec, params, inputs[i]);
        times[i].push_back(std::chrono::duration<double>(clock::now() - t0).count());
      }
    }
    r.median_seconds.clear();
    bool steady = true;
    for (auto v : times) {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      const double med = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
      r.median_seconds.push_back(med);
      steady = steady && v.back() - v.front() <= settings.spread_limit * med;
    }
    if (steady || target >= settings.max_reps) break;
    target = std::min(settings.max_reps, target * 2);
  }
  r.reps.assign(inputs.size(), times.front().size());
  std::vector<double> x(r.lengths.begin(), r.lengths.end());
  const auto fit = fit_loglog(x, r.median_seconds);
  r.slope = fit.slope;
  r.slope_lo = fit.lo;
  r.slope_hi = fit.hi;
  r.predicted_slope = fit_loglog(x, r.predicted_cost).slope;
  return r;
}

double attention_core_seconds(std::size_t length, const BenchSettings& settings) {
  const nd::Tensor q = random_input(length, settings.width, settings.seed + 1);
  const nd::Tensor k = random_input(length, settings.width, settings.seed + 2);
  const nd::Tensor v = random_input(length, settings.width, settings.seed + 3);
  return median_seconds([&] { layers::causal_attention_core(q, k, v); }, settings);
}

std::string ScalingReport::to_csv() const {
  std::ostringstream os;
  os << "length,median_seconds,reps,values_built,predicted_cost\n";
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    os << lengths[i] << ',' << fmt(median_seconds[i]) << ',' << reps[i] << ',' << fmt(values_built[i]) << ','
       << fmt(predicted_cost[i]) << '\n';
  }
  return os.str();
}

std::string ScalingReport::to_json() const {
  return Json{{"model", model},
              {"lengths", lengths},
              {"median_seconds", median_seconds},
              {"reps", reps},
              {"values_built", values_built},
              {"predicted_cost", predicted_cost},
              {"slope", slope},
              {"slope_ci95", {slope_lo, slope_hi}},
              {"predicted_slope", predicted_slope}}
      .dump(2);
}

AblationKind ablation_kind_from_string(const std::string& name) {
  if (name == "chunk") return AblationKind::chunk;
  if (name == "filter") return AblationKind::filter;
  if (name == "fraction") return AblationKind::fraction;
  throw ConfigError("unknown ablation '" + name + "'");
}

namespace {

const char* kind_name(AblationKind k) {
  switch (k) {
    case AblationKind::chunk: return "chunk";
    case AblationKind::filter: return "filter";
    case AblationKind::fraction: return "fraction";
  }
  return "?";
}

const char* column_name(const std::string& kind) {
  if (kind == "chunk") return "k";
  if (kind == "filter") return "cutoff_hz";
  return "fraction";
}

}  // namespace

std::string AblationResult::to_csv() const {
  std::ostringstream os;
  os << column_name(kind) << ",seed,val_mse\n";
  for (const auto& r : rows) os << r.setting << ',' << r.seed << ',' << fmt(r.val_mse) << '\n';
  return os.str();
}

std::string AblationResult::to_json() const {
  Json rows_json = Json::array();
  for (const auto& r : rows)
    rows_json.push_back(Json{{"setting", r.setting}, {"value", r.value}, {"seed", r.seed}, {"val_mse", r.val_mse}});
  return Json{{"kind", kind}, {"rows", rows_json}, {"best_setting", best_setting}, {"best_median", best_median}}
      .dump(2);
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace

AblationResult run_ablation(AblationKind kind, RunConfig config, const std::function<void(const std::string&)>& log) {
  const data::Dataset dataset = resolve_dataset(config);
  const auto dir = std::filesystem::path(config.out) / (std::string("ablate-") + kind_name(kind));
  const auto cells = dir / "cells";
  std::filesystem::create_directories(cells);

  std::vector<std::pair<std::string, double>> settings;
  switch (kind) {
    case AblationKind::chunk:
      if (config.train.model.kind != hierarchy::ModelKind::hiss) throw ConfigError("chunk ablation needs a hiss model");
      for (auto k : config.ablation.chunks) settings.emplace_back(std::to_string(k), static_cast<double>(k));
      break;
    case AblationKind::filter:
      settings.emplace_back("none", 0.0);
      for (double c : config.ablation.cutoffs_hz) settings.emplace_back(fmt(c), c);
      break;
    case AblationKind::fraction:
      for (double f : config.ablation.fractions) settings.emplace_back(fmt(f), f);
      break;
  }

  AblationResult result;
  result.kind = kind_name(kind);
  std::map<std::string, std::vector<double>> by_setting;
  for (const auto& [name, value] : settings) {
    for (std::uint64_t seed : config.seed_list()) {
      const std::string cell = result.kind + "_" + name + "_seed" + std::to_string(seed);
      const auto cell_file = cells / (cell + ".json");
      double val = 0.0;
      if (std::filesystem::exists(cell_file)) {
        val = Json::parse(data::read_file(cell_file)).at("val_mse").get<double>();
        if (log) log("skip " + cell + " (done)");
      } else {
        train::TrainConfig tc = config.train;
        tc.seed = seed;
        if (kind == AblationKind::chunk) tc.model.hiss.plan.k = static_cast<std::size_t>(value);
        if (kind == AblationKind::filter) {
          if (value > 0.0) {
            preprocess::FilterSpec f;
            f.order = config.ablation.filter_order;
            f.cutoff_hz = value;
            tc.preprocess.filter = f;
          } else {
            tc.preprocess.filter.reset();
          }
        }
        if (kind == AblationKind::fraction) tc.fraction = value;
        if (log) log("train " + cell);
        train::FitOptions opts;
        opts.out_dir = cells / cell;
        const auto ckpt = train::fit(tc, dataset, opts);
        val = ckpt.best_val_mse;
        data::write_file_atomic(cell_file, Json{{"setting", name}, {"seed", seed}, {"val_mse", val}}.dump() + "\n");
      }
      result.rows.push_back(AblationRow{name, value, seed, val});
      by_setting[name].push_back(val);
    }
  }
  result.best_median = INFINITY;
  for (const auto& [name, value] : settings) {
    if (kind == AblationKind::filter && name == "none") continue;
    const double med = median_of(by_setting[name]);
    if (med < result.best_median) {
      result.best_median = med;
      result.best_setting = name;
    }
  }

  data::write_file_atomic(dir / "results.csv", result.to_csv());
  data::write_file_atomic(dir / "summary.json", result.to_json() + "\n");
  PlotSeries s{"median val MSE", {}, {}};
  for (const auto& [name, value] : settings) {
    if (value <= 0.0) continue;
    s.x.push_back(value);
    s.y.push_back(median_of(by_setting[name]));
  }
  data::write_file_atomic(dir / "results.svg",
                          svg_line_chart(result.kind + " ablation", column_name(result.kind), "val MSE", {s}));
  return result;
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<PlotSeries>& series, bool log_x, bool log_y) {
  const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (double v : s.x) {
      x0 = std::min(x0, tx(v));
      x1 = std::max(x1, tx(v));
    }
    for (double v : s.y) {
      y0 = std::min(y0, ty(v));
      y1 = std::max(y1, ty(v));
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label
     << (log_x ? " (log)" : "") << "</text>\n";
  os << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
     << ")\" text-anchor=\"middle\" font-size=\"12\">" << y_label << (log_y ? " (log)" : "") << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    const double vx = log_x ? std::pow(10.0, fx) : fx, vy = log_y ? std::pow(10.0, fy) : fy;
    os << "<text x=\"" << px(vx) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"10\">" << vx
       << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(vy) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << vy
       << "</text>\n";
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* c = colors[si % 6];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (si + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
       << c << "\">" << s.name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace hiss::evalbench
