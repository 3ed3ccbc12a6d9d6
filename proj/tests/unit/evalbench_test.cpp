#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "hiss/data.hpp"
#include "hiss/errors.hpp"
#include "hiss/evalbench.hpp"
#include "hiss/run_config.hpp"

namespace eb = hiss::evalbench;
namespace hd = hiss::data;
namespace hh = hiss::hierarchy;
namespace hl = hiss::layers;
namespace ht = hiss::train;
namespace fs = std::filesystem;

namespace {

hiss::RunConfig tiny_run(const std::string& name) {
  hiss::RunConfig rc;
  auto task = hd::noiseless_identity_task(10, 9);
  task.min_duration_s = 9;
  task.max_duration_s = 10;
  rc.task = task;
  rc.out = (fs::temp_directory_path() / ("hiss_eval_test_" + name)).string();
  fs::remove_all(rc.out);
  rc.seeds = {0, 1};
  auto& t = rc.train;
  t.epochs = 2;
  t.batch_size = 4;
  t.lr = 5e-3;
  t.workers = 1;
  t.model.kind = hh::ModelKind::hiss;
  const hl::LayerStackSpec stack{hl::LayerKind::dssm, 1, 4, 2, 0, 0, 0.0};
  t.model.hiss.low = stack;
  t.model.hiss.high = stack;
  t.model.hiss.plan = {10, 10};
  t.model.stride = 10;
  return rc;
}

}  // namespace

TEST(Aggregate, Arithmetic) {
  const auto r = eb::aggregate("t", "m", {0, 1, 2}, {1.0, 2.0, 3.0});
  EXPECT_EQ(r.mean, 2.0);
  EXPECT_NEAR(r.stddev, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_THROW(eb::aggregate("t", "m", {0}, {1.0, 2.0}), hiss::ShapeError);
}

TEST(LogLog, RecoversPowerLaw) {
  std::vector<double> x, y;
  for (double n = 256; n <= 16384; n *= 2) {
    x.push_back(n);
    y.push_back(3e-7 * std::pow(n, 1.5));
  }
  const auto f = eb::fit_loglog(x, y);
  EXPECT_NEAR(f.slope, 1.5, 1e-12);
  EXPECT_NEAR(std::exp(f.intercept), 3e-7, 1e-15);
  EXPECT_LE(f.lo, f.slope);
  EXPECT_GE(f.hi, f.slope);

  std::mt19937_64 rng(81);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (auto& v : y) v *= std::exp(noise(rng));
  const auto g = eb::fit_loglog(x, y);
  EXPECT_LT(g.lo, 1.5);
  EXPECT_GT(g.hi, 1.5);
  EXPECT_NEAR(g.hi - g.slope, g.slope - g.lo, 1e-12);
}

TEST(Timing, MedianUsesEnoughRuns) {
  eb::BenchSettings s;
  s.reps = 5;
  std::size_t calls = 0, runs = 0;
  const double m = eb::median_seconds(
      [&] {
        ++calls;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      },
      s, &runs);
  EXPECT_GE(runs, 5u);
  EXPECT_EQ(calls, runs + 1);
  EXPECT_GT(m, 0.0015);
}

TEST(Scaling, ReportContracts) {
  eb::BenchSettings s;
  s.width = 8;
  s.state = 4;
  s.reps = 5;
  const auto r = eb::scaling_bench(eb::BenchModel::hiss_ssm, {100, 200, 400, 800}, s);
  ASSERT_EQ(r.lengths.size(), 4u);
  for (std::size_t i = 0; i + 1 < r.lengths.size(); ++i) EXPECT_LT(r.lengths[i], r.lengths[i + 1]);
  for (auto n : r.reps) EXPECT_GE(n, 5u);
  // Memory proxy is linear in length for an SSM hierarchy.
  EXPECT_NEAR(r.values_built[3] / r.values_built[0], 8.0, 0.1);
  EXPECT_NEAR(r.predicted_slope, 1.0, 1e-12);
  EXPECT_NE(r.to_csv().find("length"), std::string::npos);
  EXPECT_THROW(eb::scaling_bench(eb::BenchModel::flat_ssm, {100, 200, 400}, s), hiss::ConfigError);
  EXPECT_THROW(eb::scaling_bench(eb::BenchModel::flat_ssm, {100, 400, 200, 800}, s), hiss::ConfigError);
  EXPECT_THROW(eb::scaling_bench(eb::BenchModel::flat_ssm, {100, 200, 300, 400}, s), hiss::ConfigError);
  EXPECT_EQ(eb::bench_model_from_string("s4"), eb::BenchModel::flat_ssm);
  EXPECT_EQ(eb::cost_mode(eb::BenchModel::hiss_attn_over_ssm), hh::CostMode::hiss_attn_over_ssm);
}

TEST(Evaluate, ReproducesBestAndConstantMeanOracle) {
  auto rc = tiny_run("eval");
  const auto ds = hiss::resolve_dataset(rc);
  const auto ckpt = ht::fit(rc.train, ds);
  EXPECT_EQ(eb::evaluate(ckpt, ds, eb::Split::val), ckpt.best_val_mse);

  EXPECT_NEAR(eb::constant_mean_mse(ckpt, ds, eb::Split::train), 1.0, 1e-12);

  const auto split = ht::prepare_split(ckpt.config, ds);
  const auto& st = ckpt.label_stats;
  double want = 0.0, total = 0.0;
  for (std::size_t d = 0; d < st.dims(); ++d) {
    double n = 0, m = 0, m2 = 0;
    for (const auto& id : split.val_ids) {
      const auto& lab = ds.get(id).label;
      for (std::size_t r = 0; r < lab.rows; ++r) {
        ++n;
        const double v = lab.at(r, d), delta = v - m;
        m += delta / n;
        m2 += delta * (v - m);
      }
    }
    // E[(y - mu)^2] = var + (mean - mu)^2 over the validation labels.
    want += n * (m2 / n + (m - st.mean()[d]) * (m - st.mean()[d])) / (st.stddev()[d] * st.stddev()[d]);
    total += n;
  }
  EXPECT_NEAR(eb::constant_mean_mse(ckpt, ds, eb::Split::val), want / total, 1e-12);
  fs::remove_all(rc.out);
}

TEST(Ablation, FractionRowsResumeAndIdentity) {
  auto rc = tiny_run("ablate");
  rc.ablation.fractions = {0.5, 1.0};
  const auto first = eb::run_ablation(eb::AblationKind::fraction, rc);
  ASSERT_EQ(first.rows.size(), 4u);
  const fs::path dir = fs::path(rc.out) / "ablate-fraction";
  EXPECT_TRUE(fs::exists(dir / "results.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  EXPECT_TRUE(fs::exists(dir / "results.svg"));
  const std::string csv = hd::read_file(dir / "results.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "fraction,seed,val_mse");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);

  std::vector<std::string> logs;
  const auto again = eb::run_ablation(eb::AblationKind::fraction, rc, [&](const std::string& l) { logs.push_back(l); });
  for (const auto& l : logs) EXPECT_EQ(l.rfind("skip ", 0), 0u) << l;
  EXPECT_EQ(again.to_csv(), first.to_csv());
  EXPECT_EQ(hd::read_file(dir / "results.csv"), csv);

  auto plain = rc;
  auto ds = hiss::resolve_dataset(plain);
  plain.train.seed = 1;
  const auto ckpt = ht::fit(plain.train, ds);
  bool found = false;
  for (const auto& row : first.rows)
    if (row.setting == "1" && row.seed == 1) {
      EXPECT_EQ(row.val_mse, ckpt.best_val_mse);
      found = true;
    }
  EXPECT_TRUE(found);
  fs::remove_all(rc.out);
}

TEST(Ablation, ChunkRowsPerSetting) {
  auto rc = tiny_run("chunk");
  rc.seeds = {0};
  rc.train.epochs = 1;
  rc.ablation.chunks = {1, 10, 15};
  const auto r = eb::run_ablation(eb::AblationKind::chunk, rc);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].setting, "1");
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,seed,val_mse");
  auto flat = rc;
  flat.train.model.kind = hh::ModelKind::flat;
  EXPECT_THROW(eb::run_ablation(eb::AblationKind::chunk, flat), hiss::ConfigError);
  fs::remove_all(rc.out);
}

TEST(Plot, SvgHasOnePathPerSeries) {
  const std::string svg =
      eb::svg_line_chart("t", "x", "y", {{"a", {1, 2, 3}, {1, 4, 9}}, {"b", {1, 2, 3}, {2, 3, 4}}}, true, true);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t paths = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++paths;
  EXPECT_EQ(paths, 2u);
}
