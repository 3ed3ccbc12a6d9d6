#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hiss/data.hpp"
#include "hiss/train.hpp"

namespace hiss {

struct AblationConfig {
  std::vector<std::size_t> chunks{1, 5, 10, 15};
  std::vector<double> cutoffs_hz{0.75, 2.5, 7.5};
  std::vector<double> fractions{0.3, 0.5, 1.0};
  int filter_order = 5;
};

/// Everything one invocation needs. Parsing rejects unknown keys anywhere.
struct RunConfig {
  std::optional<data::TaskSpec> task;  // generates the dataset when train.dataset is empty
  train::TrainConfig train;
  std::string out = "runs/default";
  std::vector<std::uint64_t> seeds;  // empty: just train.seed
  AblationConfig ablation;

  std::vector<std::uint64_t> seed_list() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Loads train.dataset, or generates the task into <out>/dataset (reusing an
/// existing one) and points train.dataset at it.
data::Dataset resolve_dataset(RunConfig& config);

}  // namespace hiss
