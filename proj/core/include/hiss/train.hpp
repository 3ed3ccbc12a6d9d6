#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hiss/data.hpp"
#include "hiss/hierarchy.hpp"
#include "hiss/preprocess.hpp"

namespace hiss::train {

using hierarchy::ModelSpec;
using layers::ParameterStore;
using ndgrad::Tensor;

struct PreprocessConfig {
  bool subtract_resting = true;
  std::size_t warmup = preprocess::kRestingWarmup;
  std::optional<preprocess::FilterSpec> filter;  // sample_hz taken from the data
  bool diffs = true;
};

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::string dataset;  // directory holding manifest.json
  ModelSpec model;
  std::size_t epochs = 100;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  OptimizerKind optimizer = OptimizerKind::adam;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0;
  double fraction = 1.0;  // share of the train split kept
  PreprocessConfig preprocess;
  layers::ScanMode scan = layers::ScanMode::sequential;
  layers::DssmPath dssm_path = layers::DssmPath::recurrent;
  std::size_t workers = 0;  // 0: HISS_SEQ_THREADS or hardware

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// Mean of squared errors over every timestep and dimension.
Tensor mse_seq_loss(const Tensor& pred, const Tensor& target);

using GradMap = std::map<std::string, std::vector<double>>;

struct OptimizerState {
  std::size_t step = 0;
  GradMap m, v;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Scales grads in place so their joint L2 norm is at most max_norm; returns
/// the norm before scaling.
double clip_global_norm(GradMap& grads, double max_norm);

/// Replaces every parameter that has a gradient with its updated value.
/// Throws NumericalError on a non-finite gradient.
void optimizer_step(ParameterStore& params, const GradMap& grads, OptimizerState& state,
                    const OptimizerConfig& config);

/// One preprocessed trajectory ready for the model.
struct Example {
  std::string id;
  Tensor input;   // [T_s, d_in]
  Tensor target;  // [T_o, d_out], normalized
};

/// Resting subtraction, optional low-pass, optional diffs. No normalization.
Series prepare_sensor(const Series& sensor, double sensor_hz, const PreprocessConfig& config);

struct SplitData {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  preprocess::NormStats sensor_stats;
  preprocess::NormStats label_stats;
  std::vector<Example> train;
  std::vector<Example> val;
};

/// Split, subsample, fit stats on the training ids only, normalize both sides.
SplitData prepare_split(const TrainConfig& config, const data::Dataset& dataset);

/// Examples for the given ids using existing statistics.
std::vector<Example> make_examples(const data::Dataset& dataset, const std::vector<std::string>& ids,
                                   const PreprocessConfig& config, const preprocess::NormStats& sensor_stats,
                                   const preprocess::NormStats& label_stats);

/// Pooled MSE over all label entries of the examples, summed in example order.
double evaluate_mse(const ModelSpec& model, const ParameterStore& params, const std::vector<Example>& examples,
                    const layers::ForwardContext& ctx = {}, std::size_t workers = 1);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct Checkpoint {
  ParameterStore params;
  preprocess::NormStats sensor_stats;
  preprocess::NormStats label_stats;
  TrainConfig config;
  std::size_t epoch = 0;  // epoch of the stored parameters, 1-based
  double best_val_mse = 0.0;
  std::vector<EpochRecord> history;
  std::size_t steps = 0;  // optimizer steps taken over the whole run
};

/// index.json plus little-endian float64 params.bin under `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

struct FitOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoint and loss curve destination
  std::function<void(const EpochRecord&)> on_epoch;
  /// Ends training after the epoch it returns true for.
  std::function<bool(const EpochRecord&)> stop;
};

/// Trains from a seeded init, tracking the best validation epoch.
Checkpoint fit(const TrainConfig& config, const data::Dataset& dataset, const FitOptions& options = {});

/// Loads the dataset named by the config.
Checkpoint fit(const TrainConfig& config, const FitOptions& options = {});

}  // namespace hiss::train
