#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "hiss/data.hpp"
#include "hiss/errors.hpp"
#include "hiss/ndgrad/ops.hpp"
#include "hiss/train.hpp"
#include "testing.hpp"

namespace nd = hiss::ndgrad;
namespace ht = hiss::train;
namespace hd = hiss::data;
namespace hh = hiss::hierarchy;
namespace hl = hiss::layers;
namespace fs = std::filesystem;
using hiss::testing::random_tensor;
using nd::Tensor;

namespace {

const hd::Dataset& tiny_dataset() {
  static const hd::Dataset ds = [] {
    auto spec = hd::noiseless_identity_task(10, 4);
    spec.min_duration_s = 9;
    spec.max_duration_s = 10;
    const fs::path dir = fs::temp_directory_path() / "hiss_train_test_ds";
    fs::remove_all(dir);
    hd::store_dataset(dir, spec, hd::generate(spec));
    return hd::load_dataset(dir);
  }();
  return ds;
}

ht::TrainConfig tiny_config(hh::ModelKind kind = hh::ModelKind::hiss) {
  ht::TrainConfig c;
  c.epochs = 2;
  c.batch_size = 3;
  c.lr = 5e-3;
  c.seed = 3;
  c.workers = 2;
  c.model.kind = kind;
  c.model.stride = 10;
  const hl::LayerStackSpec stack{hl::LayerKind::dssm, 1, 4, 2, 0, 0, 0.0};
  c.model.flat = stack;
  c.model.hiss.low = stack;
  c.model.hiss.high = stack;
  c.model.hiss.plan = {10, 10};
  return c;
}

}  // namespace

TEST(Loss, ExamplesAndLoopOracle) {
  std::mt19937_64 rng(71);
  const Tensor a = random_tensor({7, 3}, rng);
  EXPECT_EQ(ht::mse_seq_loss(a, a).item(), 0.0);
  EXPECT_EQ(ht::mse_seq_loss(nd::add(a, Tensor::scalar(0.5)), a).item(), 0.25);

  const Tensor b = random_tensor({7, 3}, rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < 21; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(ht::mse_seq_loss(a, b).item(), acc / 21.0, 1e-15);
  EXPECT_THROW(ht::mse_seq_loss(a, random_tensor({3, 7}, rng)), hiss::ShapeError);
}

TEST(Loss, ScaledObjectiveScalesGradients) {
  std::mt19937_64 rng(72);
  hh::ModelSpec m = tiny_config().model;
  m = hh::resolve_dims(m, 3, 2);
  hl::ParameterStore store;
  hh::init_model(m, rng, store);
  const Tensor u = random_tensor({40, 3}, rng);
  const Tensor y = random_tensor({4, 2}, rng);
  auto grads = [&](double c) {
    const auto bound = store.bind();
    nd::Tape tape;
    nd::TapeScope scope(tape);
    const Tensor loss = ht::mse_seq_loss(hh::model_forward(m, bound, u), y);
    nd::backward(c == 1.0 ? loss : nd::scale(loss, c));
    std::map<std::string, std::vector<double>> g;
    for (const auto& [n, t] : bound.all()) g[n].assign(t.grad().begin(), t.grad().end());
    return g;
  };
  const auto g1 = grads(1.0);
  const auto g4 = grads(4.0);
  for (const auto& [name, v] : g1)
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(g4.at(name)[i], 4.0 * v[i]) << name;
}

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
  hl::ParameterStore p;
  p.add("w", Tensor::parameter({2}, {1.0, -3.0}));
  ht::OptimizerState state;
  ht::optimizer_step(p, {{"w", {0.5, 2.0}}}, state, {ht::OptimizerKind::adam, 0.0});
  EXPECT_EQ(p.get("w")[0], 1.0);
  EXPECT_EQ(p.get("w")[1], -3.0);
}

TEST(Optimizer, SingleStepDecreasesSquare) {
  hl::ParameterStore p;
  p.add("w", Tensor::parameter({1}, {1.0}));
  ht::OptimizerState state;
  ht::optimizer_step(p, {{"w", {2.0}}}, state, {});
  const double w = p.get("w")[0];
  EXPECT_LT(w * w, 1.0);
  EXPECT_NEAR(w, 1.0 - 1e-3, 1e-9);
}

TEST(Optimizer, ConvergesOnQuadratic) {
  hl::ParameterStore p;
  p.add("w", Tensor::parameter({2}, {1.5, -0.7}));
  ht::OptimizerState state;
  auto f = [](const Tensor& w) { return (w[0] - 0.3) * (w[0] - 0.3) + 4.0 * (w[1] + 0.2) * (w[1] + 0.2); };
  for (int i = 0; i < 200; ++i) {
    const Tensor& w = p.get("w");
    ht::optimizer_step(p, {{"w", {2.0 * (w[0] - 0.3), 8.0 * (w[1] + 0.2)}}}, state,
                       {ht::OptimizerKind::adam, 0.05});
  }
  EXPECT_LT(f(p.get("w")), 1e-6);
  EXPECT_EQ(state.step, 200u);
}

TEST(Optimizer, NonFiniteGradientAndClipping) {
  hl::ParameterStore p;
  p.add("w", Tensor::parameter({1}, {1.0}));
  ht::OptimizerState state;
  EXPECT_THROW(ht::optimizer_step(p, {{"w", {NAN}}}, state, {}), hiss::NumericalError);

  ht::GradMap g{{"a", {3.0}}, {"b", {4.0}}};
  EXPECT_EQ(ht::clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g["a"][0], 0.6, 1e-15);
  EXPECT_NEAR(g["b"][0], 0.8, 1e-15);
  ht::GradMap small{{"a", {0.1}}};
  ht::clip_global_norm(small, 1.0);
  EXPECT_EQ(small["a"][0], 0.1);
}

TEST(Config, ValidationAndJson) {
  auto c = tiny_config();
  c.dataset = "somewhere";
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), hiss::ConfigError);
  bad = c;
  bad.lr = 0;
  EXPECT_THROW(bad.validate(), hiss::ConfigError);
  bad = c;
  bad.fraction = 1.5;
  EXPECT_THROW(bad.validate(), hiss::ConfigError);
  c.preprocess.filter = hiss::preprocess::FilterSpec{3, 2.5, 50};
  EXPECT_EQ(ht::TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(ht::TrainConfig::from_json(R"({"epochs":3,"momentum":0.9})"), hiss::ConfigError);
}

TEST(Split, StatisticsComeFromTrainOnly) {
  auto c = tiny_config();
  const auto split = ht::prepare_split(c, tiny_dataset());
  EXPECT_EQ(split.train_ids.size(), 8u);
  EXPECT_EQ(split.val_ids.size(), 2u);
  std::vector<hiss::Series> prepared;
  std::vector<const hiss::Series*> ptrs, labels;
  for (const auto& id : split.train_ids) {
    const auto& t = tiny_dataset().get(id);
    prepared.push_back(ht::prepare_sensor(t.sensor, t.sensor_hz, c.preprocess));
    labels.push_back(&t.label);
  }
  for (const auto& s : prepared) ptrs.push_back(&s);
  EXPECT_EQ(split.sensor_stats, hiss::preprocess::NormStats::fit(ptrs));
  EXPECT_EQ(split.label_stats, hiss::preprocess::NormStats::fit(labels));

  c.fraction = 0.5;
  EXPECT_EQ(ht::prepare_split(c, tiny_dataset()).train_ids.size(), 4u);
}

TEST(Fit, OneEpochIsOnePass) {
  auto c = tiny_config();
  c.epochs = 1;
  const auto split = ht::prepare_split(c, tiny_dataset());
  std::map<std::size_t, std::size_t> buckets;
  for (const auto& ex : split.train) ++buckets[ex.input.dim(0)];
  std::size_t batches = 0;
  for (const auto& [len, n] : buckets) batches += (n + c.batch_size - 1) / c.batch_size;
  const auto ckpt = ht::fit(c, tiny_dataset());
  EXPECT_EQ(ckpt.history.size(), 1u);
  EXPECT_EQ(ckpt.steps, batches);
  EXPECT_EQ(ckpt.epoch, 1u);
}

TEST(Fit, StopHookEndsEarly) {
  auto c = tiny_config();
  c.epochs = 5;
  ht::FitOptions opts;
  opts.stop = [](const ht::EpochRecord& r) { return r.epoch == 2; };
  EXPECT_EQ(ht::fit(c, tiny_dataset(), opts).history.size(), 2u);
}

TEST(Fit, SameSeedSameCurves) {
  for (auto kind : {hh::ModelKind::flat, hh::ModelKind::hiss}) {
    auto c = tiny_config(kind);
    const auto a = ht::fit(c, tiny_dataset());
    c.workers = 1;
    const auto b = ht::fit(c, tiny_dataset());
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      EXPECT_EQ(a.history[i].train_mse, b.history[i].train_mse);
      EXPECT_EQ(a.history[i].val_mse, b.history[i].val_mse);
    }
    for (const auto& [name, t] : a.params.all())
      EXPECT_EQ(hiss::testing::max_abs_diff(t, b.params.get(name)), 0.0) << name;
  }
}

TEST(Fit, DivergenceIsReported) {
  auto c = tiny_config(hh::ModelKind::flat);
  c.optimizer = ht::OptimizerKind::sgd;
  c.clip_norm = 0.0;
  c.lr = 1e9;
  c.epochs = 5;
  EXPECT_THROW(ht::fit(c, tiny_dataset()), hiss::Error);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto ckpt = ht::fit(tiny_config(), tiny_dataset());
  const fs::path dir = fs::temp_directory_path() / "hiss_train_test_ckpt";
  fs::remove_all(dir);
  ht::save_checkpoint(dir, ckpt);
  const auto back = ht::load_checkpoint(dir);
  EXPECT_EQ(back.sensor_stats, ckpt.sensor_stats);
  EXPECT_EQ(back.label_stats, ckpt.label_stats);
  EXPECT_EQ(back.config.to_json(), ckpt.config.to_json());
  EXPECT_EQ(back.epoch, ckpt.epoch);
  EXPECT_EQ(back.best_val_mse, ckpt.best_val_mse);
  ASSERT_EQ(back.history.size(), ckpt.history.size());
  EXPECT_EQ(back.history.back().val_mse, ckpt.history.back().val_mse);

  const auto split = ht::prepare_split(ckpt.config, tiny_dataset());
  for (const auto& ex : split.val) {
    const Tensor a = hh::model_forward(ckpt.config.model, ckpt.params, ex.input);
    const Tensor b = hh::model_forward(back.config.model, back.params, ex.input);
    EXPECT_EQ(hiss::testing::max_abs_diff(a, b), 0.0);
  }
  EXPECT_EQ(ht::evaluate_mse(back.config.model, back.params, split.val), ckpt.best_val_mse);
  EXPECT_THROW(ht::load_checkpoint(dir / "absent"), hiss::IoError);
  fs::remove_all(dir);
}
