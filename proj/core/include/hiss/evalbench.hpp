#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hiss/hierarchy.hpp"
#include "hiss/run_config.hpp"
#include "hiss/train.hpp"

namespace hiss::evalbench {

struct EvalReport {
  std::string task;
  std::string model;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed;
  double mean = 0.0;
  double stddev = 0.0;  // population

  std::string to_json() const;
};

/// Mean and population standard deviation of per-seed values.
EvalReport aggregate(std::string task, std::string model, std::vector<std::uint64_t> seeds,
                     std::vector<double> values);

enum class Split { train, val };

Split split_from_string(const std::string& name);

/// Rebuilds the split the checkpoint was trained on and scores it with the
/// stored statistics.
double evaluate(const train::Checkpoint& ckpt, const data::Dataset& dataset, Split split);

/// MSE of always predicting the training label mean, in normalized units.
double constant_mean_mse(const train::Checkpoint& ckpt, const data::Dataset& dataset, Split split);

enum class BenchModel { flat_ssm, flat_selective, flat_lstm, flat_attn, hiss_ssm, hiss_attn_over_ssm };

std::string to_string(BenchModel m);
BenchModel bench_model_from_string(const std::string& name);  // also accepts s4, mamba, lstm, attn
hierarchy::CostMode cost_mode(BenchModel m);

struct BenchSettings {
  std::size_t width = 32;
  std::size_t depth = 1;
  std::size_t state = 8;
  std::size_t input_dim = 8;
  std::size_t k = 10;
  std::size_t reps = 5;
  std::size_t max_reps = 40;
  double spread_limit = 0.25;  // (max - min) / median that triggers more repetitions
  std::uint64_t seed = 0;
};

struct ScalingReport {
  std::string model;
  std::vector<std::size_t> lengths;
  std::vector<double> median_seconds;
  std::vector<std::size_t> reps;
  std::vector<double> values_built;  // floats materialized per forward pass
  std::vector<double> predicted_cost;
  double slope = 0.0;
  double slope_lo = 0.0;  // 95% interval
  double slope_hi = 0.0;
  double predicted_slope = 0.0;

  std::string to_csv() const;
  std::string to_json() const;
};

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double lo = 0.0, hi = 0.0;
};

/// Least squares on (log x, log y) with a Student-t 95% interval.
LogLogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

/// Median wall clock of fn over at least `reps` runs after one discarded
/// warmup; adds runs while the spread stays above the limit.
double median_seconds(const std::function<void()>& fn, const BenchSettings& settings, std::size_t* runs = nullptr);

/// Times forward passes of a freshly initialized model at each length.
ScalingReport scaling_bench(BenchModel model, const std::vector<std::size_t>& lengths,
                            const BenchSettings& settings = {});

/// Time of the causal attention core alone at length n (width from settings).
double attention_core_seconds(std::size_t length, const BenchSettings& settings);

struct AblationRow {
  std::string setting;  // k, cutoff or fraction as text
  double value = 0.0;
  std::uint64_t seed = 0;
  double val_mse = 0.0;
};

struct AblationResult {
  std::string kind;
  std::vector<AblationRow> rows;
  std::string best_setting;  // lowest median over seeds
  double best_median = 0.0;

  std::string to_csv() const;
  std::string to_json() const;
};

enum class AblationKind { chunk, filter, fraction };

AblationKind ablation_kind_from_string(const std::string& name);

/// One training run per (setting, seed). Finished cells are read back from
/// <out>/ablate-<kind>/cells instead of retrained.
AblationResult run_ablation(AblationKind kind, RunConfig config,
                            const std::function<void(const std::string&)>& log = {});

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line chart.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<PlotSeries>& series, bool log_x = false, bool log_y = false);

}  // namespace hiss::evalbench
