#include "hiss/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>

#include "hiss/errors.hpp"

namespace hiss::ndgrad {

namespace {

double sigmoid_of(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_of(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Maps every flat output index to the flat index of a broadcast operand.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(n);
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t d = in.size(); d-- > 0;) {
    in_stride[d + off] = in[d] == 1 ? 0 : s;
    s *= in[d];
  }
  std::vector<std::size_t> counter(r, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = pos;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      pos += in_stride[d];
      if (counter[d] < out[d]) break;
      pos -= in_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

}  // namespace

std::string_view name(EwOp op) {
  switch (op) {
    case EwOp::add: return "add";
    case EwOp::sub: return "sub";
    case EwOp::mul: return "mul";
    case EwOp::div: return "div";
    case EwOp::exp: return "exp";
    case EwOp::log: return "log";
    case EwOp::tanh: return "tanh";
    case EwOp::sigmoid: return "sigmoid";
    case EwOp::silu: return "silu";
    case EwOp::softplus: return "softplus";
    case EwOp::neg: return "neg";
  }
  return "?";
}

bool is_binary(EwOp op) {
  return op == EwOp::add || op == EwOp::sub || op == EwOp::mul || op == EwOp::div;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor elementwise(EwOp op, const Tensor& a) {
  if (is_binary(op)) throw DomainError(std::string(name(op)) + " needs two operands");
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (op) {
      case EwOp::exp: y[i] = std::exp(v); break;
      case EwOp::log:
        if (!(v > 0)) throw DomainError("log of non-positive value " + std::to_string(v));
        y[i] = std::log(v);
        break;
      case EwOp::tanh: y[i] = std::tanh(v); break;
      case EwOp::sigmoid: y[i] = sigmoid_of(v); break;
      case EwOp::silu: y[i] = v * sigmoid_of(v); break;
      case EwOp::softplus: y[i] = softplus_of(v); break;
      case EwOp::neg: y[i] = -v; break;
      default: break;
    }
  }
  auto saved_y = std::make_shared<std::vector<double>>(y);
  GradFn fn = [op, a, saved_y](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    auto* ga = gin[0];
    if (!ga) return;
    const auto x = a.data();
    const auto& yv = *saved_y;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0;
      switch (op) {
        case EwOp::exp: d = yv[i]; break;
        case EwOp::log: d = 1.0 / x[i]; break;
        case EwOp::tanh: d = 1.0 - yv[i] * yv[i]; break;
        case EwOp::sigmoid: d = yv[i] * (1.0 - yv[i]); break;
        case EwOp::silu: {
          const double s = sigmoid_of(x[i]);
          d = s + x[i] * s * (1.0 - s);
          break;
        }
        case EwOp::softplus: d = sigmoid_of(x[i]); break;
        case EwOp::neg: d = -1.0; break;
        default: break;
      }
      (*ga)[i] += g[i] * d;
    }
  };
  return finish(std::string(name(op)), a.shape(), std::move(y), {a}, std::move(fn));
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  if (!is_binary(op)) throw DomainError(std::string(name(op)) + " takes one operand");
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  const auto x = a.data();
  const auto z = b.data();

  // Index maps are shared with the backward closure; identical shapes skip them.
  auto ia = std::make_shared<std::vector<std::size_t>>();
  auto ib = std::make_shared<std::vector<std::size_t>>();
  if (a.shape() != out_shape) *ia = broadcast_index(out_shape, a.shape());
  if (b.shape() != out_shape) *ib = broadcast_index(out_shape, b.shape());
  auto at = [](const std::vector<std::size_t>& m, std::size_t i) { return m.empty() ? i : m[i]; };

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[at(*ia, i)];
    const double v = z[at(*ib, i)];
    switch (op) {
      case EwOp::add: y[i] = u + v; break;
      case EwOp::sub: y[i] = u - v; break;
      case EwOp::mul: y[i] = u * v; break;
      case EwOp::div:
        if (v == 0.0) throw DomainError("division by zero");
        y[i] = u / v;
        break;
      default: break;
    }
  }
  GradFn fn = [op, a, b, ia, ib, at](std::span<const double> g,
                                     std::span<std::vector<double>* const> gin) {
    auto* ga = gin[0];
    auto* gb = gin[1];
    const auto x = a.data();
    const auto z = b.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ja = at(*ia, i);
      const std::size_t jb = at(*ib, i);
      switch (op) {
        case EwOp::add:
          if (ga) (*ga)[ja] += g[i];
          if (gb) (*gb)[jb] += g[i];
          break;
        case EwOp::sub:
          if (ga) (*ga)[ja] += g[i];
          if (gb) (*gb)[jb] -= g[i];
          break;
        case EwOp::mul:
          if (ga) (*ga)[ja] += g[i] * z[jb];
          if (gb) (*gb)[jb] += g[i] * x[ja];
          break;
        case EwOp::div:
          if (ga) (*ga)[ja] += g[i] / z[jb];
          if (gb) (*gb)[jb] -= g[i] * x[ja] / (z[jb] * z[jb]);
          break;
        default: break;
      }
    }
  };
  return finish(std::string(name(op)), std::move(out_shape), std::move(y), {a, b}, std::move(fn));
}

Tensor scale(const Tensor& a, double factor) {
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * factor;
  GradFn fn = [factor](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
  };
  return finish("scale", a.shape(), std::move(y), {a}, std::move(fn));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2) {
    throw ShapeError("matmul needs [...,m,k] x [k,n], got " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t k = a.dim(-1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimension mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t n = b.dim(1);
  const std::size_t rows = a.numel() / std::max<std::size_t>(k, 1);
  Shape out_shape = a.shape();
  out_shape.back() = n;

  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> C(rows * n, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double* ci = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  GradFn fn = [a, b, rows, k, n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    const auto A = a.data();
    const auto B = b.data();
    if (auto* ga = gin[0]) {
      // dA = dC . B^T
      for (std::size_t i = 0; i < rows; ++i) {
        const double* gi = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* bp = B.data() + p * n;
          double acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
          (*ga)[i * k + p] += acc;
        }
      }
    }
    if (auto* gb = gin[1]) {
      // dB = A^T . dC
      for (std::size_t i = 0; i < rows; ++i) {
        const double* gi = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* gbp = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbp[j] += aip * gi[j];
        }
      }
    }
  };
  return finish("matmul", std::move(out_shape), std::move(C), {a, b}, std::move(fn));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(a.shape()));
  const std::size_t m = a.dim(-2);
  const std::size_t n = a.dim(-1);
  const std::size_t batch = a.numel() / std::max<std::size_t>(m * n, 1);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) y[b * m * n + j * m + i] = x[b * m * n + i * n + j];
  GradFn fn = [batch, m, n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          (*gin[0])[b * m * n + i * n + j] += g[b * m * n + j * m + i];
  };
  return finish("transpose", std::move(out_shape), std::move(y), {a}, std::move(fn));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  std::vector<double> y(a.data().begin(), a.data().end());
  GradFn fn = [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  };
  return finish("reshape", std::move(shape), std::move(y), {a}, std::move(fn));
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v;
  GradFn fn = [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    if (!gin[0]) return;
    for (auto& v : *gin[0]) v += g[0];
  };
  return finish("sum", {}, {s}, {a}, std::move(fn));
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor gather(const Tensor& a, long axis, const std::vector<long>& index) {
  const long r = static_cast<long>(a.rank());
  const long ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw ShapeError("gather axis out of range");
  const std::size_t len = a.shape()[static_cast<std::size_t>(ax)];
  for (long i : index) {
    if (i < -1 || i >= static_cast<long>(len)) {
      throw ShapeError("gather index " + std::to_string(i) + " out of range " + std::to_string(len));
    }
  }
  std::size_t outer = 1, inner = 1;
  for (long d = 0; d < ax; ++d) outer *= a.shape()[static_cast<std::size_t>(d)];
  for (long d = ax + 1; d < r; ++d) inner *= a.shape()[static_cast<std::size_t>(d)];
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(ax)] = index.size();
  const std::size_t m = index.size();
  const auto x = a.data();
  std::vector<double> y(outer * m * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < m; ++j) {
      if (index[j] < 0) continue;
      const double* src = x.data() + (o * len + static_cast<std::size_t>(index[j])) * inner;
      std::copy(src, src + inner, y.data() + (o * m + j) * inner);
    }
  GradFn fn = [index, outer, inner, len, m](std::span<const double> g,
                                            std::span<std::vector<double>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < m; ++j) {
        if (index[j] < 0) continue;
        double* dst = gin[0]->data() + (o * len + static_cast<std::size_t>(index[j])) * inner;
        const double* src = g.data() + (o * m + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  };
  return finish("gather", std::move(out_shape), std::move(y), {a}, std::move(fn));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm gain/bias must have " + std::to_string(d) + " entries");
  }
  const std::size_t rows = x.numel() / std::max<std::size_t>(d, 1);
  const auto X = x.data();
  const auto G = gain.data();
  const auto Bv = bias.data();
  std::vector<double> y(X.size());
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mu) * is;
      (*xhat)[r * d + i] = h;
      y[r * d + i] = h * G[i] + Bv[i];
    }
  }
  GradFn fn = [gain, xhat, inv_std, rows, d](std::span<const double> g,
                                             std::span<std::vector<double>* const> gin) {
    const auto G = gain.data();
    const auto& H = *xhat;
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * d;
      double m1 = 0, m2 = 0;
      for (std::size_t i = 0; i < d; ++i) {
        dh[i] = gr[i] * G[i];
        m1 += dh[i];
        m2 += dh[i] * H[r * d + i];
        if (gin[1]) (*gin[1])[i] += gr[i] * H[r * d + i];
        if (gin[2]) (*gin[2])[i] += gr[i];
      }
      if (gin[0]) {
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        const double is = (*inv_std)[r];
        for (std::size_t i = 0; i < d; ++i) {
          (*gin[0])[r * d + i] += is * (dh[i] - m1 - H[r * d + i] * m2);
        }
      }
    }
  };
  return finish("layer_norm", x.shape(), std::move(y), {x, gain, bias}, std::move(fn));
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must lie in [0,1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = keep(rng) ? s : 0.0;
  const auto X = x.data();
  std::vector<double> y(X.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = X[i] * (*mask)[i];
  GradFn fn = [mask](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*mask)[i];
  };
  return finish("dropout", x.shape(), std::move(y), {x}, std::move(fn));
}

}  // namespace hiss::ndgrad
