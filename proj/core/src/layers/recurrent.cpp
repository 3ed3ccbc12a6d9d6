#include "hiss/layers/recurrent.hpp"

#include <algorithm>
#include <cmath>

#include "hiss/errors.hpp"
#include "hiss/ndgrad/ops.hpp"
#include "seq.hpp"

namespace hiss::layers {

using ndgrad::GradFn;
using detail::seq_dims;

namespace {

double sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor uniform_param(ndgrad::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ndgrad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

bool will_record(const std::vector<Tensor>& inputs) {
  if (ndgrad::active_tape() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

}  // namespace

LstmWeights init_lstm(std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmWeights w{uniform_param({input, 4 * hidden}, bound, rng),
                uniform_param({hidden, 4 * hidden}, bound, rng), Tensor()};
  // Forget gate starts biased open.
  std::vector<double> b(4 * hidden, 0.0);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
  w.bias = Tensor::parameter({4 * hidden}, std::move(b));
  return w;
}

Tensor lstm_recurrence(const Tensor& gates_in, const Tensor& w_hh) {
  const auto dims = seq_dims(gates_in, "lstm");
  if (w_hh.rank() != 2 || w_hh.dim(1) != 4 * w_hh.dim(0) || dims.channels != w_hh.dim(1)) {
    throw ShapeError("lstm recurrent weights " + ndgrad::to_string(w_hh.shape()) +
                     " do not match gate input " + ndgrad::to_string(gates_in.shape()));
  }
  const std::size_t B = dims.batch, T = dims.length, H = w_hh.dim(0), G = 4 * H;
  const auto X = gates_in.data();
  const auto W = w_hh.data();

  // Saved per step: activated gates [i f g o] and cell state.
  auto acts = std::make_shared<std::vector<double>>(B * T * G);
  auto cells = std::make_shared<std::vector<double>>(B * T * H);
  std::vector<double> hs(B * T * H);
  std::vector<double> z(G);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* xt = X.data() + (b * T + t) * G;
      std::copy(xt, xt + G, z.begin());
      if (t > 0) {
        const double* hprev = hs.data() + (b * T + t - 1) * H;
        for (std::size_t p = 0; p < H; ++p) {
          const double hp = hprev[p];
          const double* wp = W.data() + p * G;
          for (std::size_t q = 0; q < G; ++q) z[q] += hp * wp[q];
        }
      }
      double* a = acts->data() + (b * T + t) * G;
      double* c = cells->data() + (b * T + t) * H;
      double* h = hs.data() + (b * T + t) * H;
      for (std::size_t k = 0; k < H; ++k) {
        a[k] = sigm(z[k]);
        a[H + k] = sigm(z[H + k]);
        a[2 * H + k] = std::tanh(z[2 * H + k]);
        a[3 * H + k] = sigm(z[3 * H + k]);
        const double cprev = t ? (*cells)[(b * T + t - 1) * H + k] : 0.0;
        c[k] = a[H + k] * cprev + a[k] * a[2 * H + k];
        h[k] = a[3 * H + k] * std::tanh(c[k]);
        if (!std::isfinite(h[k])) throw NumericalError("lstm diverged", t);
      }
    }
  }
  auto hs_saved = std::make_shared<std::vector<double>>(hs);
  ndgrad::Shape out_shape = gates_in.shape();
  out_shape.back() = H;

  GradFn fn = [w_hh, acts, cells, hs_saved, B, T, H, G](std::span<const double> g,
                                                        std::span<std::vector<double>* const> gin) {
    const auto W = w_hh.data();
    std::vector<double> dh_next(H), dc_next(H), dz(G);
    for (std::size_t b = 0; b < B; ++b) {
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      std::fill(dc_next.begin(), dc_next.end(), 0.0);
      for (std::size_t t = T; t-- > 0;) {
        const double* a = acts->data() + (b * T + t) * G;
        const double* c = cells->data() + (b * T + t) * H;
        for (std::size_t k = 0; k < H; ++k) {
          const double dh = g[(b * T + t) * H + k] + dh_next[k];
          const double tc = std::tanh(c[k]);
          const double i = a[k], f = a[H + k], gg = a[2 * H + k], o = a[3 * H + k];
          const double dc = dh * o * (1.0 - tc * tc) + dc_next[k];
          const double cprev = t ? (*cells)[(b * T + t - 1) * H + k] : 0.0;
          dz[k] = dc * gg * i * (1.0 - i);
          dz[H + k] = dc * cprev * f * (1.0 - f);
          dz[2 * H + k] = dc * i * (1.0 - gg * gg);
          dz[3 * H + k] = dh * tc * o * (1.0 - o);
          dc_next[k] = dc * f;
        }
        if (gin[0]) {
          double* gx = gin[0]->data() + (b * T + t) * G;
          for (std::size_t q = 0; q < G; ++q) gx[q] += dz[q];
        }
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        if (t > 0) {
          const double* hprev = hs_saved->data() + (b * T + t - 1) * H;
          for (std::size_t p = 0; p < H; ++p) {
            const double* wp = W.data() + p * G;
            double acc = 0.0;
            for (std::size_t q = 0; q < G; ++q) acc += wp[q] * dz[q];
            dh_next[p] = acc;
            if (gin[1]) {
              double* gw = gin[1]->data() + p * G;
              for (std::size_t q = 0; q < G; ++q) gw[q] += hprev[p] * dz[q];
            }
          }
        }
      }
    }
  };
  return ndgrad::finish("lstm", std::move(out_shape), std::move(hs), {gates_in, w_hh}, std::move(fn));
}

Tensor lstm_forward(const LstmWeights& w, const Tensor& u) {
  return lstm_recurrence(ndgrad::add(ndgrad::matmul(u, w.w_ih), w.bias), w.w_hh);
}

AttentionWeights init_attention(std::size_t width, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  return AttentionWeights{uniform_param({width, width}, bound, rng), uniform_param({width, width}, bound, rng),
                          uniform_param({width, width}, bound, rng), uniform_param({width, width}, bound, rng)};
}

Tensor causal_attention_core(const Tensor& q, const Tensor& k, const Tensor& v) {
  const auto dims = seq_dims(q, "causal_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("attention q/k/v shapes differ");
  }
  const std::size_t B = dims.batch, T = dims.length, D = dims.channels;
  const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(D, 1)));
  const bool keep = will_record({q, k, v});
  const auto Q = q.data();
  const auto K = k.data();
  const auto V = v.data();

  // Row t of the causal probabilities lives at offset t(t+1)/2 of its batch block.
  const std::size_t tri = T * (T + 1) / 2;
  auto probs = std::make_shared<std::vector<double>>(keep ? B * tri : 0);
  std::vector<double> y(Q.size(), 0.0);
  std::vector<double> row(T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* qt = Q.data() + (b * T + t) * D;
      double mx = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        const double* ks = K.data() + (b * T + s) * D;
        double acc = 0.0;
        for (std::size_t i = 0; i < D; ++i) acc += qt[i] * ks[i];
        row[s] = acc * scale;
        mx = std::max(mx, row[s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        row[s] = std::exp(row[s] - mx);
        z += row[s];
      }
      double* yt = y.data() + (b * T + t) * D;
      for (std::size_t s = 0; s <= t; ++s) {
        const double p = row[s] / z;
        if (keep) (*probs)[b * tri + t * (t + 1) / 2 + s] = p;
        const double* vs = V.data() + (b * T + s) * D;
        for (std::size_t i = 0; i < D; ++i) yt[i] += p * vs[i];
      }
    }
  }
  GradFn fn = [q, k, v, probs, B, T, D, scale, tri](std::span<const double> g,
                                                    std::span<std::vector<double>* const> gin) {
    const auto Q = q.data();
    const auto K = k.data();
    const auto V = v.data();
    std::vector<double> dp(T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* gt = g.data() + (b * T + t) * D;
        const double* p = probs->data() + b * tri + t * (t + 1) / 2;
        double dot = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* vs = V.data() + (b * T + s) * D;
          double acc = 0.0;
          for (std::size_t i = 0; i < D; ++i) acc += gt[i] * vs[i];
          dp[s] = acc;
          dot += p[s] * acc;
          if (gin[2]) {
            double* gv = gin[2]->data() + (b * T + s) * D;
            for (std::size_t i = 0; i < D; ++i) gv[i] += p[s] * gt[i];
          }
        }
        const double* qt = Q.data() + (b * T + t) * D;
        for (std::size_t s = 0; s <= t; ++s) {
          const double ds = p[s] * (dp[s] - dot) * scale;
          if (ds == 0.0) continue;
          const double* ks = K.data() + (b * T + s) * D;
          if (gin[0]) {
            double* gq = gin[0]->data() + (b * T + t) * D;
            for (std::size_t i = 0; i < D; ++i) gq[i] += ds * ks[i];
          }
          if (gin[1]) {
            double* gk = gin[1]->data() + (b * T + s) * D;
            for (std::size_t i = 0; i < D; ++i) gk[i] += ds * qt[i];
          }
        }
      }
    }
  };
  return ndgrad::finish("causal_attention", q.shape(), std::move(y), {q, k, v}, std::move(fn));
}

Tensor causal_attention(const AttentionWeights& w, const Tensor& u) {
  const Tensor q = ndgrad::matmul(u, w.wq);
  const Tensor k = ndgrad::matmul(u, w.wk);
  const Tensor v = ndgrad::matmul(u, w.wv);
  return ndgrad::matmul(causal_attention_core(q, k, v), w.wo);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t width) {
  std::vector<double> pe(length * width);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(t) * freq;
      pe[t * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({length, width}, std::move(pe));
}

}  // namespace hiss::layers
