#include "hiss/run_config.hpp"

#include "hiss/errors.hpp"
#include "json_util.hpp"

namespace hiss {

using detail::Json;

std::vector<std::uint64_t> RunConfig::seed_list() const {
  if (seeds.empty()) return {train.seed};
  return seeds;
}

std::string RunConfig::to_json() const {
  Json j{{"train", Json::parse(train.to_json())},
         {"out", out},
         {"seeds", seeds},
         {"ablation", Json{{"chunks", ablation.chunks},
                           {"cutoffs_hz", ablation.cutoffs_hz},
                           {"fractions", ablation.fractions},
                           {"filter_order", ablation.filter_order}}}};
  if (task) j["task"] = Json::parse(task->to_json());
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  const std::string w = "config";
  const Json j = detail::parse_json(text, w);
  detail::reject_unknown(j, w, {"task", "train", "out", "seeds", "ablation"});
  RunConfig c;
  if (j.contains("task") && !j.at("task").is_null()) c.task = data::TaskSpec::from_json(j.at("task").dump());
  if (!j.contains("train")) throw ConfigError("missing key 'train' in config");
  c.train = train::TrainConfig::from_json(j.at("train").dump());
  c.out = detail::get_or<std::string>(j, "out", c.out, w);
  c.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds", {}, w);
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    const std::string aw = "config.ablation";
    detail::reject_unknown(a, aw, {"chunks", "cutoffs_hz", "fractions", "filter_order"});
    c.ablation.chunks = detail::get_or(a, "chunks", c.ablation.chunks, aw);
    c.ablation.cutoffs_hz = detail::get_or(a, "cutoffs_hz", c.ablation.cutoffs_hz, aw);
    c.ablation.fractions = detail::get_or(a, "fractions", c.ablation.fractions, aw);
    c.ablation.filter_order = detail::get_or(a, "filter_order", c.ablation.filter_order, aw);
  }
  if (c.train.dataset.empty() && !c.task) throw ConfigError("config needs train.dataset or a task to generate");
  for (auto k : c.ablation.chunks)
    if (k < 1) throw ConfigError("ablation chunk sizes must be >= 1");
  for (double f : c.ablation.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("ablation fractions must lie in (0, 1]");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  return from_json(data::read_file(path));
}

data::Dataset resolve_dataset(RunConfig& config) {
  if (!config.train.dataset.empty()) return data::load_dataset(config.train.dataset);
  const auto dir = std::filesystem::path(config.out) / "dataset";
  config.train.dataset = dir.string();
  if (std::filesystem::exists(dir / "manifest.json")) return data::load_dataset(dir);
  auto trajectories = data::generate(*config.task);
  data::Dataset ds;
  ds.manifest = data::store_dataset(dir, *config.task, trajectories);
  ds.trajectories = std::move(trajectories);
  return ds;
}

}  // namespace hiss
