#include "hiss/layers/ssm.hpp"

#include <cmath>
#include <numbers>

#include "hiss/errors.hpp"
#include "hiss/ndgrad/fft.hpp"
#include "hiss/ndgrad/ops.hpp"
#include "seq.hpp"

namespace hiss::layers {

using ndgrad::GradFn;
using ndgrad::Shape;
using detail::expect_numel;
using detail::seq_dims;

namespace {

// phi(z) = (e^z - 1)/z and its derivative, with the series near the origin
// where the closed forms cancel catastrophically.
Complex phi1(Complex z) {
  if (std::abs(z) < 0.1) {
    Complex term{1.0, 0.0}, acc{0.0, 0.0};
    for (int m = 0; m < 14; ++m) {
      acc += term;
      term *= z / static_cast<double>(m + 2);
    }
    return acc;
  }
  return (std::exp(z) - 1.0) / z;
}

Complex phi1_prime(Complex z) {
  if (std::abs(z) < 0.1) {
    // sum_{m>=1} m z^{m-1} / (m+1)!
    Complex zp{1.0, 0.0}, acc{0.0, 0.0};
    double fact = 2.0;  // (m+1)!
    for (int m = 1; m < 16; ++m) {
      acc += static_cast<double>(m) * zp / fact;
      zp *= z;
      fact *= static_cast<double>(m + 2);
    }
    return acc;
  }
  const Complex e = std::exp(z);
  return (z * e - e + 1.0) / (z * z);
}

// Continuous and discrete quantities per (channel, mode), plus what the
// backward pass needs to chain gradients to the raw parameters.
struct Prepared {
  std::size_t channels = 0, state = 0;
  std::vector<double> delta;  // [C]
  std::vector<double> d;      // [C]
  std::vector<Complex> a, b, c, a_bar, e, de_da, b_bar;  // [C*N]
};

Prepared prepare(const SsmParams& p) {
  Prepared q;
  q.channels = p.d.numel();
  const std::size_t C = q.channels;
  if (C == 0) throw ShapeError("ssm needs at least one channel");
  q.state = p.a_im.numel() / C;
  const std::size_t N = q.state;
  const std::size_t CN = C * N;
  expect_numel(p.a_log_neg_re, CN, "a_log_neg_re");
  expect_numel(p.a_im, CN, "a_im");
  expect_numel(p.b_re, CN, "b_re");
  expect_numel(p.b_im, CN, "b_im");
  expect_numel(p.c_re, CN, "c_re");
  expect_numel(p.c_im, CN, "c_im");
  expect_numel(p.log_dt, C, "log_dt");

  q.delta.resize(C);
  q.d.assign(p.d.data().begin(), p.d.data().end());
  q.a.resize(CN);
  q.b.resize(CN);
  q.c.resize(CN);
  q.a_bar.resize(CN);
  q.e.resize(CN);
  q.de_da.resize(CN);
  q.b_bar.resize(CN);
  for (std::size_t ch = 0; ch < C; ++ch) {
    const double dt = std::exp(p.log_dt[ch]);
    q.delta[ch] = dt;
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t i = ch * N + j;
      const Complex a{-std::exp(p.a_log_neg_re[i]), p.a_im[i]};
      const Complex z = dt * a;
      q.a[i] = a;
      q.b[i] = {p.b_re[i], p.b_im[i]};
      q.c[i] = {p.c_re[i], p.c_im[i]};
      q.a_bar[i] = std::exp(z);
      q.e[i] = dt * phi1(z);
      q.de_da[i] = dt * dt * phi1_prime(z);
      q.b_bar[i] = q.e[i] * q.b[i];
    }
  }
  return q;
}

// Gradients w.r.t. the discrete quantities, accumulated by either path.
struct DiscreteGrads {
  std::vector<Complex> a_bar, b_bar, c;  // [C*N]
  std::vector<double> d;                 // [C]

  explicit DiscreteGrads(std::size_t C, std::size_t N)
      : a_bar(C * N), b_bar(C * N), c(C * N), d(C, 0.0) {}
};

// Pushes discrete-level gradients through ZOH and the parameterization.
// Slots: 1 a_log_neg_re, 2 a_im, 3 b_re, 4 b_im, 5 c_re, 6 c_im, 7 d, 8 log_dt.
void chain_to_params(const Prepared& q, const DiscreteGrads& g,
                     std::span<std::vector<double>* const> gin) {
  const std::size_t N = q.state;
  for (std::size_t ch = 0; ch < q.channels; ++ch) {
    double d_delta = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t i = ch * N + j;
      const Complex g_b = std::conj(q.e[i]) * g.b_bar[i];
      const Complex g_e = std::conj(q.b[i]) * g.b_bar[i];
      const Complex g_a = std::conj(q.delta[ch] * q.a_bar[i]) * g.a_bar[i] +
                          std::conj(q.de_da[i]) * g_e;
      d_delta += (std::conj(g.a_bar[i]) * q.a[i] * q.a_bar[i]).real() +
                 (std::conj(g_e) * q.a_bar[i]).real();
      if (gin[1]) (*gin[1])[i] += g_a.real() * q.a[i].real();
      if (gin[2]) (*gin[2])[i] += g_a.imag();
      if (gin[3]) (*gin[3])[i] += g_b.real();
      if (gin[4]) (*gin[4])[i] += g_b.imag();
      if (gin[5]) (*gin[5])[i] += g.c[i].real();
      if (gin[6]) (*gin[6])[i] += g.c[i].imag();
    }
    if (gin[7]) (*gin[7])[ch] += g.d[ch];
    if (gin[8]) (*gin[8])[ch] += d_delta * q.delta[ch];
  }
}

void check_step(double v, std::size_t t, const char* who) {
  if (!std::isfinite(v)) throw NumericalError(std::string(who) + " diverged", t);
}

std::vector<Tensor> with_input(const Tensor& u, const SsmParams& p) {
  std::vector<Tensor> in{u};
  for (auto& t : p.tensors()) in.push_back(t);
  return in;
}

}  // namespace

SsmParams init_ssm(std::size_t channels, std::size_t state, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t cn = channels * state;
  std::vector<double> a_log(cn, std::log(0.5)), a_im(cn), b_re(cn, 1.0), b_im(cn, 0.0), c_re(cn),
      c_im(cn), d(channels), dt(channels);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t j = 0; j < state; ++j) a_im[ch * state + j] = std::numbers::pi * static_cast<double>(j);
  for (auto& v : c_re) v = normal(rng);
  for (auto& v : c_im) v = normal(rng);
  for (auto& v : d) v = unit(rng);
  for (auto& v : dt) v = log_dt(rng);
  const Shape m{channels, state};
  return SsmParams{Tensor::parameter(m, std::move(a_log)), Tensor::parameter(m, std::move(a_im)),
                   Tensor::parameter(m, std::move(b_re)),  Tensor::parameter(m, std::move(b_im)),
                   Tensor::parameter(m, std::move(c_re)),  Tensor::parameter(m, std::move(c_im)),
                   Tensor::parameter({channels}, std::move(d)),
                   Tensor::parameter({channels}, std::move(dt))};
}

DiscreteSsm discretize(const SsmParams& p) {
  const Prepared q = prepare(p);
  return DiscreteSsm{q.channels, q.state, q.a_bar, q.b_bar};
}

Tensor dssm_kernel(const SsmParams& p, std::size_t length) {
  const Prepared q = prepare(p);
  const std::size_t C = q.channels, N = q.state;
  std::vector<double> k(length * C, 0.0);
  for (std::size_t ch = 0; ch < C; ++ch) {
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t i = ch * N + j;
      Complex w = q.b_bar[i];
      for (std::size_t t = 0; t < length; ++t) {
        k[t * C + ch] += 2.0 * (q.c[i] * w).real();
        w *= q.a_bar[i];
      }
    }
  }
  return Tensor({length, C}, std::move(k));
}

Tensor dssm_recurrent(const SsmParams& p, const Tensor& u) {
  auto q = std::make_shared<Prepared>(prepare(p));
  const auto dims = seq_dims(u, "dssm_recurrent");
  if (dims.channels != q->channels) throw ShapeError("dssm input channels do not match parameters");
  const std::size_t B = dims.batch, T = dims.length, C = dims.channels, N = q->state;
  const auto U = u.data();
  std::vector<double> y(U.size());
  std::vector<Complex> x(N);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      std::fill(x.begin(), x.end(), Complex{});
      const Complex* ab = q->a_bar.data() + ch * N;
      const Complex* bb = q->b_bar.data() + ch * N;
      const Complex* cc = q->c.data() + ch * N;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t at = (b * T + t) * C + ch;
        const double ut = U[at];
        double acc = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          x[j] = ab[j] * x[j] + bb[j] * ut;
          acc += (cc[j] * x[j]).real();
        }
        y[at] = 2.0 * acc + q->d[ch] * ut;
        check_step(y[at], t, "dssm_recurrent");
      }
    }
  }

  GradFn fn = [q, u, B, T, C, N](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    const auto U = u.data();
    DiscreteGrads dg(C, N);
    std::vector<Complex> xs(T * N), lam(N);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const Complex* ab = q->a_bar.data() + ch * N;
        const Complex* bb = q->b_bar.data() + ch * N;
        const Complex* cc = q->c.data() + ch * N;
        for (std::size_t t = 0; t < T; ++t) {
          const double ut = U[(b * T + t) * C + ch];
          for (std::size_t j = 0; j < N; ++j) {
            const Complex prev = t ? xs[(t - 1) * N + j] : Complex{};
            xs[t * N + j] = ab[j] * prev + bb[j] * ut;
          }
        }
        std::fill(lam.begin(), lam.end(), Complex{});
        for (std::size_t t = T; t-- > 0;) {
          const std::size_t at = (b * T + t) * C + ch;
          const double gt = g[at];
          const double ut = U[at];
          double du = q->d[ch] * gt;
          for (std::size_t j = 0; j < N; ++j) {
            const std::size_t i = ch * N + j;
            lam[j] = 2.0 * gt * std::conj(cc[j]) + std::conj(ab[j]) * lam[j];
            du += (lam[j] * std::conj(bb[j])).real();
            dg.b_bar[i] += lam[j] * ut;
            if (t) dg.a_bar[i] += lam[j] * std::conj(xs[(t - 1) * N + j]);
            dg.c[i] += 2.0 * gt * std::conj(xs[t * N + j]);
          }
          dg.d[ch] += gt * ut;
          if (gin[0]) (*gin[0])[at] += du;
        }
      }
    }
    chain_to_params(*q, dg, gin);
  };
  return ndgrad::finish("dssm_recurrent", u.shape(), std::move(y), with_input(u, p), std::move(fn));
}

Tensor dssm_convolutional(const SsmParams& p, const Tensor& u) {
  auto q = std::make_shared<Prepared>(prepare(p));
  const auto dims = seq_dims(u, "dssm_convolutional");
  if (dims.channels != q->channels) throw ShapeError("dssm input channels do not match parameters");
  const std::size_t B = dims.batch, T = dims.length, C = dims.channels, N = q->state;
  const Tensor kernel = dssm_kernel(p, T);
  // Channel-major copies so each convolution reads a contiguous sequence.
  auto kern = std::make_shared<std::vector<std::vector<double>>>(C, std::vector<double>(T));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t ch = 0; ch < C; ++ch) (*kern)[ch][t] = kernel[t * C + ch];

  const auto U = u.data();
  std::vector<double> y(U.size());
  std::vector<double> seq(T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      for (std::size_t t = 0; t < T; ++t) seq[t] = U[(b * T + t) * C + ch];
      const auto conv = ndgrad::causal_convolve((*kern)[ch], seq);
      for (std::size_t t = 0; t < T; ++t) y[(b * T + t) * C + ch] = conv[t] + q->d[ch] * seq[t];
    }
  }

  GradFn fn = [q, kern, u, B, T, C, N](std::span<const double> g,
                                       std::span<std::vector<double>* const> gin) {
    const auto U = u.data();
    DiscreteGrads dg(C, N);
    std::vector<double> gs(T), us(T);
    for (std::size_t ch = 0; ch < C; ++ch) {
      std::vector<double> g_kernel(T, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
          gs[t] = g[(b * T + t) * C + ch];
          us[t] = U[(b * T + t) * C + ch];
          dg.d[ch] += gs[t] * us[t];
        }
        const auto gk = ndgrad::causal_correlate(gs, us, T);
        for (std::size_t s = 0; s < T; ++s) g_kernel[s] += gk[s];
        if (gin[0]) {
          const auto gu = ndgrad::causal_correlate(gs, (*kern)[ch], T);
          for (std::size_t t = 0; t < T; ++t) (*gin[0])[(b * T + t) * C + ch] += gu[t] + q->d[ch] * gs[t];
        }
      }
      // K_s = 2 Re(C a_bar^s b_bar).
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t i = ch * N + j;
        Complex power{1.0, 0.0};       // a_bar^s
        Complex prev_power{0.0, 0.0};  // s * a_bar^(s-1)
        for (std::size_t s = 0; s < T; ++s) {
          const Complex g_w = 2.0 * g_kernel[s] * std::conj(q->c[i]);
          const Complex w = power * q->b_bar[i];
          dg.c[i] += 2.0 * g_kernel[s] * std::conj(w);
          dg.b_bar[i] += std::conj(power) * g_w;
          dg.a_bar[i] += std::conj(prev_power * q->b_bar[i]) * g_w;
          prev_power = prev_power * q->a_bar[i] + power;
          power *= q->a_bar[i];
        }
      }
    }
    chain_to_params(*q, dg, gin);
  };
  return ndgrad::finish("dssm_convolutional", u.shape(), std::move(y), with_input(u, p), std::move(fn));
}

SelectiveParams init_selective(std::size_t channels, std::size_t state, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(channels));
  std::normal_distribution<double> proj(0.0, s);
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  std::vector<double> w_delta(channels * channels), b_delta(channels), w_b(channels * state),
      w_c(channels * state), a_log(channels * state, std::log(0.5)), a_im(channels * state),
      d(channels, 1.0);
  for (auto& v : w_delta) v = 0.1 * proj(rng);
  for (auto& v : b_delta) {
    const double dt = std::exp(log_dt(rng));
    v = std::log(std::expm1(dt));  // inverse softplus
  }
  for (auto& v : w_b) v = proj(rng);
  for (auto& v : w_c) v = proj(rng);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t j = 0; j < state; ++j) a_im[ch * state + j] = std::numbers::pi * static_cast<double>(j);
  return SelectiveParams{Tensor::parameter({channels, channels}, std::move(w_delta)),
                         Tensor::parameter({channels}, std::move(b_delta)),
                         Tensor::parameter({channels, state}, std::move(w_b)),
                         Tensor::parameter({channels, state}, std::move(w_c)),
                         Tensor::parameter({channels, state}, std::move(a_log)),
                         Tensor::parameter({channels, state}, std::move(a_im)),
                         Tensor::parameter({channels}, std::move(d))};
}

Tensor selective_core(const Tensor& u, const Tensor& delta, const Tensor& bt, const Tensor& ct,
                      const Tensor& a_log_neg_re, const Tensor& a_im, const Tensor& d,
                      ScanMode mode) {
  const auto dims = seq_dims(u, "selective_core");
  const std::size_t B = dims.batch, T = dims.length, C = dims.channels;
  if (delta.shape() != u.shape()) throw ShapeError("selective step sizes must match the input shape");
  expect_numel(d, C, "selective d");
  const std::size_t N = a_im.numel() / std::max<std::size_t>(C, 1);
  expect_numel(a_im, C * N, "selective a_im");
  expect_numel(a_log_neg_re, C * N, "selective a_log_neg_re");
  expect_numel(bt, B * T * N, "selective B_t");
  expect_numel(ct, B * T * N, "selective C_t");
  for (double v : delta.data()) {
    if (!(v > 0.0)) throw DomainError("selective step size must be positive");
  }

  auto a = std::make_shared<std::vector<Complex>>(C * N);
  for (std::size_t i = 0; i < C * N; ++i) a->at(i) = {-std::exp(a_log_neg_re[i]), a_im[i]};

  const auto U = u.data();
  const auto Dl = delta.data();
  const auto Bt = bt.data();
  const auto Ct = ct.data();
  std::vector<double> y(U.size(), 0.0);
  std::vector<AffinePair> pairs(T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      for (std::size_t j = 0; j < N; ++j) {
        const Complex aj = (*a)[ch * N + j];
        for (std::size_t t = 0; t < T; ++t) {
          const double dt = Dl[(b * T + t) * C + ch];
          pairs[t] = {std::exp(dt * aj), Complex{dt * Bt[(b * T + t) * N + j] * U[(b * T + t) * C + ch], 0.0}};
        }
        const auto x = run_scan(pairs, mode);
        for (std::size_t t = 0; t < T; ++t) y[(b * T + t) * C + ch] += Ct[(b * T + t) * N + j] * x[t].real();
      }
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t at = (b * T + t) * C + ch;
        y[at] += d[ch] * U[at];
        check_step(y[at], t, "selective_scan");
      }
    }
  }

  GradFn fn = [u, delta, bt, ct, d, a, mode, B, T, C, N](std::span<const double> g,
                                                          std::span<std::vector<double>* const> gin) {
    const auto U = u.data();
    const auto Dl = delta.data();
    const auto Bt = bt.data();
    const auto Ct = ct.data();
    std::vector<Complex> g_a(C * N);
    std::vector<AffinePair> pairs(T), adjoint(T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        for (std::size_t j = 0; j < N; ++j) {
          const Complex aj = (*a)[ch * N + j];
          for (std::size_t t = 0; t < T; ++t) {
            const double dt = Dl[(b * T + t) * C + ch];
            pairs[t] = {std::exp(dt * aj), Complex{dt * Bt[(b * T + t) * N + j] * U[(b * T + t) * C + ch], 0.0}};
          }
          const auto x = run_scan(pairs, mode);
          // lambda_t = g_t C_tj + conj(a_{t+1}) lambda_{t+1}, scanned backwards in time.
          for (std::size_t r = 0; r < T; ++r) {
            const std::size_t t = T - 1 - r;
            const Complex carry = t + 1 < T ? std::conj(pairs[t + 1].a) : Complex{};
            adjoint[r] = {carry, Complex{g[(b * T + t) * C + ch] * Ct[(b * T + t) * N + j], 0.0}};
          }
          const auto lam_rev = run_scan(adjoint, mode);
          for (std::size_t t = 0; t < T; ++t) {
            const Complex lam = lam_rev[T - 1 - t];
            const std::size_t at = (b * T + t) * C + ch;
            const std::size_t bj = (b * T + t) * N + j;
            const double dt = Dl[at];
            const Complex xprev = t ? x[t - 1] : Complex{};
            const Complex ga_t = lam * std::conj(xprev);
            g_a[ch * N + j] += std::conj(dt * pairs[t].a) * ga_t;
            if (gin[1]) {
              (*gin[1])[at] += (std::conj(ga_t) * aj * pairs[t].a).real() + lam.real() * Bt[bj] * U[at];
            }
            if (gin[2]) (*gin[2])[bj] += lam.real() * dt * U[at];
            if (gin[0]) (*gin[0])[at] += lam.real() * dt * Bt[bj];
            if (gin[3]) (*gin[3])[bj] += g[at] * x[t].real();
          }
        }
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t at = (b * T + t) * C + ch;
          if (gin[0]) (*gin[0])[at] += d[ch] * g[at];
          if (gin[6]) (*gin[6])[ch] += g[at] * U[at];
        }
      }
    }
    for (std::size_t i = 0; i < C * N; ++i) {
      if (gin[4]) (*gin[4])[i] += g_a[i].real() * (*a)[i].real();
      if (gin[5]) (*gin[5])[i] += g_a[i].imag();
    }
  };
  return ndgrad::finish("selective_scan", u.shape(), std::move(y),
                        {u, delta, bt, ct, a_log_neg_re, a_im, d}, std::move(fn));
}

Tensor selective_scan(const SelectiveParams& p, const Tensor& u, ScanMode mode) {
  const Tensor delta = ndgrad::softplus(ndgrad::add(ndgrad::matmul(u, p.w_delta), p.b_delta));
  const Tensor bt = ndgrad::matmul(u, p.w_b);
  const Tensor ct = ndgrad::matmul(u, p.w_c);
  return selective_core(u, delta, bt, ct, p.a_log_neg_re, p.a_im, p.d, mode);
}

}  // namespace hiss::layers
