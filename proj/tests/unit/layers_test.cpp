#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "hiss/errors.hpp"
#include "hiss/layers/recurrent.hpp"
#include "hiss/layers/scan.hpp"
#include "hiss/layers/ssm.hpp"
#include "hiss/layers/stack.hpp"
#include "hiss/ndgrad/ops.hpp"
#include "testing.hpp"

namespace nd = hiss::ndgrad;
namespace hl = hiss::layers;
using hiss::testing::gradcheck;
using hiss::testing::max_abs_diff;
using hiss::testing::random_tensor;
using nd::Tensor;

namespace {

hl::SsmParams random_ssm(std::size_t channels, std::size_t state, std::mt19937_64& rng) {
  hl::SsmParams p = hl::init_ssm(channels, state, rng);
  std::uniform_real_distribution<double> log_dt(std::log(0.02), std::log(0.5));
  std::vector<double> dt(channels);
  for (auto& v : dt) v = log_dt(rng);
  p.log_dt = Tensor::parameter({channels}, dt);
  p.a_log_neg_re = random_tensor({channels, state}, rng, 0.5);
  p.b_re = random_tensor({channels, state}, rng);
  p.b_im = random_tensor({channels, state}, rng);
  p.c_re = random_tensor({channels, state}, rng);
  p.c_im = random_tensor({channels, state}, rng);
  p.d = random_tensor({channels}, rng);
  return p;
}

hl::SsmParams ssm_from(const std::vector<Tensor>& t) {
  return hl::SsmParams{t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7]};
}

hl::SsmParams scalar_ssm(double neg_re_log, double im, double log_dt, double b, double c, double d) {
  auto s = [](double v) { return Tensor({1, 1}, {v}); };
  return hl::SsmParams{s(neg_re_log), s(im), s(b), s(0.0), s(c), s(0.0), Tensor({1}, {d}), Tensor({1}, {log_dt})};
}

hl::SelectiveParams selective_from(const std::vector<Tensor>& t) {
  return hl::SelectiveParams{t[0], t[1], t[2], t[3], t[4], t[5], t[6]};
}

}  // namespace

TEST(Discretize, ClosedFormScalar) {
  const auto q = hl::discretize(scalar_ssm(0.0, 0.0, std::log(std::log(2.0)), 1.0, 1.0, 0.0));
  EXPECT_NEAR(q.a_bar[0].real(), 0.5, 1e-15);
  EXPECT_NEAR(q.a_bar[0].imag(), 0.0, 1e-15);
  EXPECT_NEAR(q.b_bar[0].real(), 0.5, 1e-15);
}

TEST(Discretize, SmallStepLimit) {
  const auto q = hl::discretize(scalar_ssm(0.3, 2.0, -40.0, 1.0, 1.0, 0.0));
  EXPECT_NEAR(std::abs(q.a_bar[0] - 1.0), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(q.b_bar[0]), 0.0, 1e-15);
}

TEST(Discretize, QuadratureOracle) {
  std::mt19937_64 rng(11);
  const auto p = random_ssm(3, 4, rng);
  const auto q = hl::discretize(p);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double dt = std::exp(p.log_dt[ch]);
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t i = ch * 4 + j;
      const std::complex<double> a{-std::exp(p.a_log_neg_re[i]), p.a_im[i]};
      const std::complex<double> b{p.b_re[i], p.b_im[i]};
      const int steps = 10000;
      const double h = dt / steps;
      std::complex<double> acc = 0.5 * (1.0 + std::exp(a * dt));
      for (int s = 1; s < steps; ++s) acc += std::exp(a * (h * s));
      const auto want = acc * h * b;
      EXPECT_LT(std::abs(q.b_bar[i] - want) / std::abs(want), 1e-6);
      EXPECT_LT(std::abs(q.a_bar[i] - std::exp(a * dt)), 1e-15);
    }
  }
}

TEST(Kernel, FirstTermAndGeometricScalar) {
  std::mt19937_64 rng(12);
  const auto p = random_ssm(2, 3, rng);
  const auto q = hl::discretize(p);
  const Tensor k = hl::dssm_kernel(p, 5);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double k0 = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const std::size_t i = ch * 3 + j;
      k0 += 2.0 * (std::complex<double>{p.c_re[i], p.c_im[i]} * q.b_bar[i]).real();
    }
    EXPECT_NEAR(k[ch], k0, 1e-14);
  }

  const auto s = scalar_ssm(std::log(0.7), 0.0, std::log(0.3), 1.5, -0.8, 0.0);
  const auto sq = hl::discretize(s);
  const Tensor ks = hl::dssm_kernel(s, 8);
  double pw = 1.0;
  for (std::size_t t = 0; t < 8; ++t) {
    EXPECT_NEAR(ks[t], 2.0 * -0.8 * pw * sq.b_bar[0].real(), 1e-14);
    pw *= sq.a_bar[0].real();
  }
}

TEST(Kernel, MatchesRecurrentImpulseResponse) {
  std::mt19937_64 rng(13);
  auto p = random_ssm(4, 8, rng);
  p.d = Tensor::zeros({4});
  const std::size_t T = 100;
  std::vector<double> impulse(T * 4, 0.0);
  for (std::size_t ch = 0; ch < 4; ++ch) impulse[ch] = 1.0;
  const Tensor y = hl::dssm_recurrent(p, Tensor({T, 4}, impulse));
  EXPECT_LT(max_abs_diff(y, hl::dssm_kernel(p, T)), 1e-10);
  EXPECT_LT(max_abs_diff(hl::dssm_convolutional(p, Tensor({T, 4}, impulse)), hl::dssm_kernel(p, T)), 1e-10);
}

TEST(Dssm, ZeroInputGivesZero) {
  std::mt19937_64 rng(14);
  const auto p = random_ssm(3, 4, rng);
  const Tensor a = hl::dssm_recurrent(p, Tensor::zeros({20, 3}));
  const Tensor b = hl::dssm_convolutional(p, Tensor::zeros({20, 3}));
  for (double v : a.data()) EXPECT_EQ(v, 0.0);
  for (double v : b.data()) EXPECT_EQ(v, 0.0);
}

TEST(Dssm, ConstantInputSteadyState) {
  std::mt19937_64 rng(15);
  auto p = random_ssm(2, 4, rng);
  p.log_dt = Tensor({2}, {std::log(0.5), std::log(0.4)});
  const std::size_t T = 400;
  const Tensor y = hl::dssm_convolutional(p, Tensor::full({T, 2}, 1.7));
  const auto q = hl::discretize(p);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double gain = p.d[ch];
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t i = ch * 4 + j;
      const std::complex<double> c{p.c_re[i], p.c_im[i]};
      gain += 2.0 * (c * q.b_bar[i] / (1.0 - q.a_bar[i])).real();
    }
    EXPECT_NEAR(y[(T - 1) * 2 + ch], 1.7 * gain, 1e-9);
  }
}

TEST(Dssm, PathsAgreeOnRandomDraws) {
  std::mt19937_64 rng(16);
  for (std::size_t T : {1u, 2u, 64u, 128u, 257u}) {
    for (int draw = 0; draw < 20; ++draw) {
      const auto p = random_ssm(3, 5, rng);
      const Tensor u = random_tensor({2, T, 3}, rng);
      EXPECT_LT(max_abs_diff(hl::dssm_recurrent(p, u), hl::dssm_convolutional(p, u)), 1e-8);
    }
  }
}

TEST(Dssm, RejectsChannelMismatch) {
  std::mt19937_64 rng(17);
  const auto p = random_ssm(3, 2, rng);
  EXPECT_THROW(hl::dssm_recurrent(p, Tensor::zeros({4, 2})), hiss::ShapeError);
}

TEST(Scan, CumulativeSumAndSingleElement) {
  std::vector<hl::AffinePair> pairs(7);
  for (std::size_t i = 0; i < 7; ++i) pairs[i] = {1.0, std::complex<double>(static_cast<double>(i), 1.0)};
  const auto seq = hl::sequential_scan(pairs);
  const auto par = hl::associative_scan(pairs);
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < 7; ++i) {
    acc += pairs[i].b;
    EXPECT_EQ(seq[i], acc);
    EXPECT_EQ(par[i], acc);
  }
  const hl::AffinePair one{{0.3, 0.1}, {2.0, -1.0}};
  EXPECT_EQ(hl::associative_scan(std::span(&one, 1))[0], one.b);
}

TEST(Scan, AssociativeMatchesSequential) {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> mag(0.0, 1.0), ang(-3.14159, 3.14159);
  std::normal_distribution<double> nrm;
  for (std::size_t T : {1u, 3u, 1000u, 1023u, 1024u, 4097u, 10000u}) {
    std::vector<hl::AffinePair> pairs(T);
    for (auto& p : pairs) p = {std::polar(mag(rng), ang(rng)), {nrm(rng), nrm(rng)}};
    const auto a = hl::sequential_scan(pairs);
    for (std::size_t workers : {1u, 3u}) {
      const auto b = hl::associative_scan(pairs, workers);
      double err = 0.0;
      for (std::size_t i = 0; i < T; ++i) err = std::max(err, std::abs(a[i] - b[i]));
      EXPECT_LT(err, 1e-10) << "T=" << T;
    }
  }
}

TEST(Selective, ZeroProjectionsReduceToSkip) {
  std::mt19937_64 rng(19);
  auto p = hl::init_selective(3, 4, rng);
  p.w_delta = Tensor::zeros({3, 3});
  p.b_delta = Tensor::zeros({3});
  p.w_b = Tensor::zeros({3, 4});
  p.w_c = Tensor::zeros({3, 4});
  p.d = Tensor({3}, {0.5, -1.0, 2.0});
  const Tensor u = random_tensor({10, 3}, rng);
  const Tensor y = hl::selective_scan(p, u, hl::ScanMode::sequential);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(y[i], p.d[i % 3] * u[i]);
}

TEST(Selective, SingleStepClosedForm) {
  const Tensor u({1, 2}, {0.7, -1.2});
  const Tensor delta({1, 2}, {0.3, 0.9});
  const Tensor bt({1, 3}, {0.5, -0.4, 1.1});
  const Tensor ct({1, 3}, {1.0, 2.0, -0.5});
  const Tensor alnr = Tensor::zeros({2, 3});
  const Tensor aim = Tensor::full({2, 3}, 0.4);
  const Tensor d({2}, {0.1, 0.2});
  const Tensor y = hl::selective_core(u, delta, bt, ct, alnr, aim, d, hl::ScanMode::associative);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double want = d[ch] * u[ch];
    for (std::size_t j = 0; j < 3; ++j) want += ct[j] * delta[ch] * bt[j] * u[ch];
    EXPECT_NEAR(y[ch], want, 1e-15);
  }
}

TEST(Selective, ScanModesAgree) {
  std::mt19937_64 rng(20);
  for (int draw = 0; draw < 20; ++draw) {
    const auto p = hl::init_selective(4, 3, rng);
    const Tensor u = random_tensor({2, static_cast<std::size_t>(37 + draw), 4}, rng);
    EXPECT_LT(max_abs_diff(hl::selective_scan(p, u, hl::ScanMode::sequential),
                           hl::selective_scan(p, u, hl::ScanMode::associative)),
              1e-8);
  }
}

TEST(Lstm, ZeroWeightsGiveZeros) {
  const hl::LstmWeights w{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::zeros({8})};
  std::mt19937_64 rng(21);
  const Tensor y = hl::lstm_forward(w, random_tensor({6, 3}, rng));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SingleStepClosedForm) {
  std::mt19937_64 rng(22);
  const auto w = hl::init_lstm(3, 2, rng);
  const Tensor u = random_tensor({1, 3}, rng);
  const Tensor y = hl::lstm_forward(w, u);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (std::size_t k = 0; k < 2; ++k) {
    double z[4];
    for (std::size_t g = 0; g < 4; ++g) {
      const std::size_t col = g * 2 + k;
      z[g] = w.bias[col];
      for (std::size_t i = 0; i < 3; ++i) z[g] += u[i] * w.w_ih[i * 8 + col];
    }
    const double c = sig(z[0]) * std::tanh(z[2]);
    EXPECT_NEAR(y[k], sig(z[3]) * std::tanh(c), 1e-15);
  }
}

TEST(Attention, SingleTokenAndUniformWeights) {
  std::mt19937_64 rng(23);
  auto w = hl::init_attention(4, rng);
  const Tensor u1 = random_tensor({1, 4}, rng);
  const Tensor want1 = nd::matmul(nd::matmul(u1, w.wv), w.wo);
  EXPECT_LT(max_abs_diff(hl::causal_attention(w, u1), want1), 1e-15);

  w.wk = Tensor::zeros({4, 4});
  const Tensor u = random_tensor({5, 4}, rng);
  const Tensor v = nd::matmul(u, w.wv);
  const Tensor core = hl::causal_attention_core(nd::matmul(u, w.wq), nd::matmul(u, w.wk), v);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = 0; i < 4; ++i) {
      double avg = 0.0;
      for (std::size_t s = 0; s <= t; ++s) avg += v[s * 4 + i];
      EXPECT_NEAR(core[t * 4 + i], avg / static_cast<double>(t + 1), 1e-14);
    }
}

TEST(Causality, EveryLayerIsPerStepCausal) {
  std::mt19937_64 rng(24);
  const std::size_t T = 40, C = 3;
  const auto ssm = random_ssm(C, 4, rng);
  const auto sel = hl::init_selective(C, 4, rng);
  const auto lstm = hl::init_lstm(C, C, rng);
  const auto attn = hl::init_attention(C, rng);
  const std::vector<std::function<Tensor(const Tensor&)>> layers = {
      [&](const Tensor& u) { return hl::dssm_recurrent(ssm, u); },
      [&](const Tensor& u) { return hl::selective_scan(sel, u, hl::ScanMode::sequential); },
      [&](const Tensor& u) { return hl::selective_scan(sel, u, hl::ScanMode::associative); },
      [&](const Tensor& u) { return hl::lstm_forward(lstm, u); },
      [&](const Tensor& u) { return hl::causal_attention(attn, u); },
  };
  const Tensor u = random_tensor({T, C}, rng);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor base = layers[l](u);
    for (std::size_t t : {0u, 1u, 17u, 39u}) {
      const Tensor moved = hiss::testing::with_value(u, t * C + 1, u[t * C + 1] + 3.0).detach();
      const Tensor y = layers[l](moved);
      for (std::size_t i = 0; i < t * C; ++i) ASSERT_EQ(y[i], base[i]) << "layer " << l << " t " << t;
    }
  }
}

TEST(Causality, ConvolutionalPathLeaksOnlyRounding) {
  std::mt19937_64 rng(31);
  const auto ssm = random_ssm(3, 4, rng);
  const Tensor u = random_tensor({64, 3}, rng);
  const Tensor base = hl::dssm_convolutional(ssm, u);
  const Tensor y = hl::dssm_convolutional(ssm, hiss::testing::with_value(u, 30 * 3, 5.0).detach());
  for (std::size_t i = 0; i < 30 * 3; ++i) EXPECT_NEAR(y[i], base[i], 1e-12);
}

TEST(Gradients, DssmBothPaths) {
  std::mt19937_64 rng(25);
  for (int draw = 0; draw < 3; ++draw) {
    const auto p = random_ssm(2, 3, rng);
    auto in = p.tensors();
    in.push_back(random_tensor({2, 9, 2}, rng));
    for (auto path : {hl::DssmPath::recurrent, hl::DssmPath::convolutional}) {
      const auto r = gradcheck([path](const auto& t) { return hl::dssm(ssm_from(t), t[8], path); }, in, rng);
      EXPECT_LT(r.max_rel_error, 1e-4);
    }
  }
}

TEST(Gradients, SelectiveBothModes) {
  std::mt19937_64 rng(26);
  for (int draw = 0; draw < 3; ++draw) {
    auto in = hl::init_selective(3, 2, rng).tensors();
    in.push_back(random_tensor({10, 3}, rng));
    for (auto mode : {hl::ScanMode::sequential, hl::ScanMode::associative}) {
      const auto r =
          gradcheck([mode](const auto& t) { return hl::selective_scan(selective_from(t), t[7], mode); }, in, rng);
      EXPECT_LT(r.max_rel_error, 1e-4);
    }
  }
}

TEST(Gradients, LstmAndAttention) {
  std::mt19937_64 rng(27);
  for (int draw = 0; draw < 3; ++draw) {
    auto lin = hl::init_lstm(3, 2, rng).tensors();
    lin.push_back(random_tensor({8, 3}, rng));
    const auto rl = gradcheck(
        [](const auto& t) { return hl::lstm_forward(hl::LstmWeights{t[0], t[1], t[2]}, t[3]); }, lin, rng);
    EXPECT_LT(rl.max_rel_error, 1e-4);

    auto ain = hl::init_attention(3, rng).tensors();
    ain.push_back(random_tensor({2, 7, 3}, rng));
    const auto ra = gradcheck(
        [](const auto& t) { return hl::causal_attention(hl::AttentionWeights{t[0], t[1], t[2], t[3]}, t[4]); },
        ain, rng);
    EXPECT_LT(ra.max_rel_error, 1e-4);
  }
}

TEST(Stack, OutputShapesForEveryKind) {
  std::mt19937_64 rng(28);
  for (auto kind : {hl::LayerKind::dssm, hl::LayerKind::selective, hl::LayerKind::lstm, hl::LayerKind::attention}) {
    hl::LayerStackSpec spec{kind, 2, 8, 4, 5, 3, 0.0};
    hl::ParameterStore store;
    hl::init_stack(spec, "m.", rng, store);
    EXPECT_EQ(store.count(), hl::stack_parameter_count(spec)) << hl::to_string(kind);
    const Tensor y = hl::stack_forward(spec, store, "m.", random_tensor({12, 5}, rng), {});
    EXPECT_EQ(y.shape(), (nd::Shape{12, 3}));
    const Tensor yb = hl::stack_forward(spec, store, "m.", random_tensor({2, 12, 5}, rng), {});
    EXPECT_EQ(yb.shape(), (nd::Shape{2, 12, 3}));
  }
}

TEST(Stack, DepthOneIsTheComposition) {
  std::mt19937_64 rng(29);
  hl::LayerStackSpec spec{hl::LayerKind::dssm, 1, 4, 3, 4, 4, 0.0};
  hl::ParameterStore store;
  hl::init_stack(spec, "", rng, store);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  store.set("embed.w", Tensor({4, 4}, eye));
  store.set("layer0.mix.w", Tensor({4, 4}, eye));
  store.set("head.w", Tensor({4, 4}, eye));
  const Tensor u = random_tensor({15, 4}, rng);
  const Tensor h = nd::add(nd::matmul(u, store.get("embed.w")), store.get("embed.b"));
  const Tensor s = hl::dssm_recurrent(hl::ssm_params_at(store, "layer0.ssm."), h);
  const Tensor z = nd::add(nd::matmul(nd::silu(s), store.get("layer0.mix.w")), store.get("layer0.mix.b"));
  const Tensor n = nd::layer_norm(nd::add(h, z), store.get("layer0.norm.g"), store.get("layer0.norm.b"));
  const Tensor want = nd::add(nd::matmul(n, store.get("head.w")), store.get("head.b"));
  EXPECT_EQ(max_abs_diff(hl::stack_forward(spec, store, "", u, {}), want), 0.0);
}

TEST(Stack, FullStackGradient) {
  std::mt19937_64 rng(30);
  for (auto kind : {hl::LayerKind::dssm, hl::LayerKind::selective}) {
    hl::LayerStackSpec spec{kind, 2, 8, 4, 3, 2, 0.0};
    hl::ParameterStore store;
    hl::init_stack(spec, "", rng, store);
    std::vector<std::string> names = store.names();
    std::vector<Tensor> in;
    for (const auto& n : names) in.push_back(store.get(n));
    in.push_back(random_tensor({16, 3}, rng));
    const auto r = gradcheck(
        [&](const auto& t) {
          hl::ParameterStore s;
          for (std::size_t i = 0; i < names.size(); ++i) s.add(names[i], t[i]);
          return hl::stack_forward(spec, s, "", t.back(), {});
        },
        in, rng, 4);
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
}

TEST(Stack, ParameterStoreContracts) {
  hl::ParameterStore s;
  s.add("a", Tensor::zeros({2}));
  EXPECT_THROW(s.add("a", Tensor::zeros({2})), hiss::ShapeError);
  EXPECT_THROW(s.set("a", Tensor::zeros({3})), hiss::ShapeError);
  EXPECT_THROW(s.get("b"), hiss::ShapeError);
  EXPECT_EQ(hl::layer_kind_from_string("mamba"), hl::LayerKind::selective);
  EXPECT_THROW(hl::layer_kind_from_string("gru"), hiss::ConfigError);
}

TEST(Stack, ClosedFormCountWidth64) {
  hl::LayerStackSpec spec{hl::LayerKind::dssm, 2, 64, 8, 6, 2, 0.0};
  const std::size_t w = 64, n = 8;
  EXPECT_EQ(hl::stack_parameter_count(spec), 6 * w + w + 2 * (6 * w * n + w * w + 5 * w) + w * 2 + 2);
}
