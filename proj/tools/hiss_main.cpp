// hiss: dataset generation, training, evaluation, benchmarks and ablations.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hiss/data.hpp"
#include "hiss/errors.hpp"
#include "hiss/evalbench.hpp"
#include "hiss/run_config.hpp"
#include "hiss/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace hiss;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Records every artifact a command writes so the output directory carries
// its own listing.
class ArtifactLog {
 public:
  ArtifactLog(fs::path out, std::string command) : out_(std::move(out)), command_(std::move(command)) {}
  void add(const fs::path& p) { files_.push_back(fs::relative(p, out_).generic_string()); }
  void write(const std::string& name, const std::string& content) {
    data::write_file_atomic(out_ / name, content);
    add(out_ / name);
  }
  void finish() {
    nlohmann::json j{{"command", command_}, {"artifacts", files_}};
    data::write_file_atomic(out_ / "artifacts.json", j.dump(2) + "\n");
  }

 private:
  fs::path out_;
  std::string command_;
  std::vector<std::string> files_;
};

std::vector<std::size_t> parse_lengths(const std::string& text) {
  std::vector<std::size_t> out;
  const auto dots = text.find("..");
  try {
    if (dots != std::string::npos) {
      std::size_t lo = std::stoul(text.substr(0, dots));
      const std::size_t hi = std::stoul(text.substr(dots + 2));
      if (lo < 1 || hi < lo) throw ConfigError("bad length range " + text);
      for (; lo <= hi; lo *= 2) out.push_back(lo);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad --lengths value '" + text + "'");
  }
  return out;
}

int run_gen(const std::string& task, std::size_t n, std::uint64_t seed, const std::string& out, double min_s,
            double max_s, bool identity, double noise, double drift, double vibration, double split) {
  data::TaskSpec spec;
  spec.kind = data::task_kind_from_string(task);
  spec.count = n;
  spec.seed = seed;
  spec.min_duration_s = min_s;
  spec.max_duration_s = max_s;
  spec.identity_mixing = identity;
  spec.noise = noise;
  spec.drift = drift;
  spec.vibration = vibration;
  if (spec.kind == data::TaskKind::slip_rotation) spec.sensor_dim = 16;
  if (spec.kind == data::TaskKind::joystick_like) spec.sensor_dim = 8;
  const auto trajectories = data::generate(spec);
  const auto manifest = data::store_dataset(out, spec, trajectories, split);
  std::cout << "wrote " << manifest.trajectories.size() << " trajectories to " << out << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& out_override) {
  RunConfig config = RunConfig::load(config_path);
  if (!out_override.empty()) config.out = out_override;
  const fs::path out = config.out;
  fs::create_directories(out);
  const data::Dataset dataset = resolve_dataset(config);
  ArtifactLog log(out, "train");
  log.write("config.json", config.to_json());

  std::vector<double> vals;
  std::string model;
  for (std::uint64_t seed : config.seed_list()) {
    train::TrainConfig tc = config.train;
    tc.seed = seed;
    const fs::path run_dir = out / ("seed" + std::to_string(seed));
    train::FitOptions opts;
    opts.out_dir = run_dir;
    opts.on_epoch = [&](const train::EpochRecord& r) {
      std::cout << "seed " << seed << " epoch " << r.epoch << " train_mse " << num(r.train_mse) << " val_mse "
                << num(r.val_mse) << "\n";
    };
    const auto ckpt = train::fit(tc, dataset, opts);
    model = ckpt.config.model.describe();
    std::cout << "seed " << seed << " best_epoch " << ckpt.epoch << " best_val_mse " << num(ckpt.best_val_mse)
              << " checkpoint " << (run_dir / "checkpoint").string() << "\n";
    vals.push_back(ckpt.best_val_mse);
    log.add(run_dir / "checkpoint" / "index.json");
    log.add(run_dir / "checkpoint" / "params.bin");
    log.add(run_dir / "loss.csv");
    evalbench::PlotSeries tr{"train", {}, {}}, va{"val", {}, {}};
    for (const auto& e : ckpt.history) {
      tr.x.push_back(static_cast<double>(e.epoch));
      tr.y.push_back(e.train_mse);
      va.x.push_back(static_cast<double>(e.epoch));
      va.y.push_back(e.val_mse);
    }
    log.write("seed" + std::to_string(seed) + "/loss.svg",
              evalbench::svg_line_chart("loss, seed " + std::to_string(seed), "epoch", "MSE", {tr, va}, false, true));
  }
  const auto report = evalbench::aggregate(dataset.manifest.task, model, config.seed_list(), vals);
  log.write("report.json", report.to_json() + "\n");
  std::cout << "val_mse mean " << num(report.mean) << " std " << num(report.stddev) << "\n";
  log.finish();
  return 0;
}

int run_eval(const std::string& ckpt_dir, const std::string& split_name, const std::string& dataset_override) {
  const auto ckpt = train::load_checkpoint(ckpt_dir);
  const auto split = evalbench::split_from_string(split_name);
  const std::string dir = dataset_override.empty() ? ckpt.config.dataset : dataset_override;
  const auto dataset = data::load_dataset(dir);
  const double mse = evalbench::evaluate(ckpt, dataset, split);
  std::cout << split_name << "_mse " << num(mse) << "\n";
  std::cout << "constant_mean_mse " << num(evalbench::constant_mean_mse(ckpt, dataset, split)) << "\n";
  return 0;
}

int run_bench(const std::string& model_name, const std::string& lengths_text, const std::string& out, std::size_t k,
              std::size_t width, std::size_t reps) {
  const auto model = evalbench::bench_model_from_string(model_name);
  evalbench::BenchSettings settings;
  settings.k = k;
  settings.width = width;
  settings.reps = reps;
  const auto report = evalbench::scaling_bench(model, parse_lengths(lengths_text), settings);
  std::cout << report.to_csv();
  std::cout << "slope " << num(report.slope) << " ci95 [" << num(report.slope_lo) << ", " << num(report.slope_hi)
            << "] predicted " << num(report.predicted_slope) << "\n";
  if (!out.empty()) {
    fs::create_directories(out);
    ArtifactLog log(out, "bench");
    const std::string base = "bench-" + report.model;
    log.write(base + ".csv", report.to_csv());
    log.write(base + ".json", report.to_json() + "\n");
    std::vector<double> x(report.lengths.begin(), report.lengths.end());
    log.write(base + ".svg", evalbench::svg_line_chart(report.model + " forward time", "length", "seconds",
                                                        {{"median", x, report.median_seconds}}, true, true));
    log.finish();
  }
  return 0;
}

int run_ablate(const std::string& kind, const std::string& config_path) {
  RunConfig config = RunConfig::load(config_path);
  fs::create_directories(config.out);
  data::write_file_atomic(fs::path(config.out) / ("config-ablate-" + kind + ".json"), config.to_json());
  const auto result = evalbench::run_ablation(evalbench::ablation_kind_from_string(kind), config,
                                              [](const std::string& line) { std::cout << line << "\n"; });
  std::cout << result.to_csv();
  std::cout << "best " << result.best_setting << " median_val_mse " << num(result.best_median) << "\n";
  return 0;
}

void print_counts(const layers::ParameterStore& params) {
  std::map<std::string, std::size_t> groups;
  for (const auto& [name, t] : params.all()) {
    const auto dot = name.find('.');
    const auto second = name.find('.', dot + 1);
    groups[name.substr(0, second)] += t.numel();
  }
  for (const auto& [g, n] : groups) std::cout << "  " << g << " " << n << "\n";
}

int run_inspect(const std::string& ckpt_dir, const std::string& config_path) {
  if (!ckpt_dir.empty()) {
    const auto ckpt = train::load_checkpoint(ckpt_dir);
    const auto& model = ckpt.config.model;
    std::cout << "model " << model.describe() << "\n";
    print_counts(ckpt.params);
    std::cout << "parameters " << ckpt.params.count() << "\n";
    std::cout << "closed_form " << hierarchy::model_parameter_count(model) << "\n";
    std::cout << "best_epoch " << ckpt.epoch << " best_val_mse " << num(ckpt.best_val_mse) << "\n";
    return 0;
  }
  RunConfig config = RunConfig::load(config_path);
  const auto& m = config.train.model;
  std::size_t in = m.input_dim(), out = m.output_dim();
  if (in == 0 || out == 0) throw ConfigError("inspect --config needs explicit input_dim and output_dim");
  const auto spec = hierarchy::resolve_dims(m, in, out);
  layers::ParameterStore params;
  std::mt19937_64 rng(0);
  hierarchy::init_model(spec, rng, params);
  std::cout << "model " << spec.describe() << "\n";
  print_counts(params);
  std::cout << "parameters " << params.count() << "\n";
  std::cout << "closed_form " << hierarchy::model_parameter_count(spec) << "\n";
  return 0;
}

int exit_code(const std::string& category) {
  if (category == "ConfigError") return 2;
  if (category == "IoError" || category == "ManifestError" || category == "ParseError") return 3;
  if (category == "NumericalError" || category == "DivergenceError") return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical state space models for continuous sequence prediction"};
  app.require_subcommand(1);

  std::string task = "drift-integrator", out, config_path, ckpt, split = "val", dataset, model, lengths = "256..16384";
  std::size_t n = 200, k = 10, width = 32, reps = 5;
  std::uint64_t seed = 7;
  double min_s = 9.0, max_s = 60.0, noise = 0.05, drift = 0.5, vibration = 0.3, split_fraction = 0.8;
  bool identity = false;
  std::string kind;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--task", task, "drift-integrator | slip-rotation | joystick-like");
  gen->add_option("--n", n, "Trajectory count");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--min-duration", min_s, "Shortest trajectory in seconds");
  gen->add_option("--max-duration", max_s, "Longest trajectory in seconds");
  gen->add_flag("--identity", identity, "Sensor channels copy the label signal");
  gen->add_option("--noise", noise, "Measurement noise");
  gen->add_option("--drift", drift, "Drift random-walk magnitude");
  gen->add_option("--vibration", vibration, "Vibration amplitude");
  gen->add_option("--split", split_fraction, "Train fraction recorded in the manifest");

  auto* tr = app.add_subcommand("train", "Train from a JSON run config");
  tr->add_option("--config", config_path, "Run config")->required();
  tr->add_option("--out", out, "Override the config's output directory");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  ev->add_option("--split", split, "train | val");
  ev->add_option("--dataset", dataset, "Dataset directory (defaults to the one trained on)");

  auto* be = app.add_subcommand("bench", "Forward-pass scaling benchmark");
  be->add_option("--model", model, "s4 | mamba | lstm | attn | hiss-s4 | hiss-attn")->required();
  be->add_option("--lengths", lengths, "LO..HI (doubling) or a comma list");
  be->add_option("--k", k, "Chunk size for hierarchical models");
  be->add_option("--width", width, "Model width");
  be->add_option("--reps", reps, "Minimum timed repetitions");
  be->add_option("--out", out, "Directory for csv/json/svg reports");

  auto* ab = app.add_subcommand("ablate", "Chunk, filter or fraction ablation");
  ab->add_option("--kind", kind, "chunk | filter | fraction")->required();
  ab->add_option("--config", config_path, "Run config")->required();

  auto* in = app.add_subcommand("inspect", "Parameter counts of a checkpoint or config");
  auto* in_ckpt = in->add_option("--ckpt", ckpt, "Checkpoint directory");
  in->add_option("--config", config_path, "Run config with explicit dims")->excludes(in_ckpt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ConfigError: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) return run_gen(task, n, seed, out, min_s, max_s, identity, noise, drift, vibration, split_fraction);
    if (*tr) return run_train(config_path, out);
    if (*ev) return run_eval(ckpt, split, dataset);
    if (*be) return run_bench(model, lengths, out, k, width, reps);
    if (*ab) return run_ablate(kind, config_path);
    if (*in) {
      if (ckpt.empty() && config_path.empty()) throw ConfigError("inspect needs --ckpt or --config");
      return run_inspect(ckpt, config_path);
    }
  } catch (const hiss::Error& e) {
    std::cerr << e.category() << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "IoError: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "Error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
