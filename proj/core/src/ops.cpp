#include "posenc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

// Flat index into `in` for every flat index of `out`; empty when identical.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    stride[k + off] = in[k] == 1 ? 0 : s;
    s *= in[k];
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t f = 0; f < n; ++f) {
    idx[f] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += stride[d];
      if (counter[d] < out[d]) break;
      cur -= stride[d] * out[d];
      counter[d] = 0;
    }
  }
  return idx;
}

inline std::size_t mapped(const std::vector<std::size_t>& idx, std::size_t k) {
  return idx.empty() ? k : idx[k];
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape out = broadcast_shapes(a.shape(), b.shape(), op);
  auto ia = broadcast_index(a.shape(), out);
  auto ib = broadcast_index(b.shape(), out);
  const std::size_t n = numel(out);
  std::vector<double> v(n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t k = 0; k < n; ++k) v[k] = f(av[mapped(ia, k)], bv[mapped(ib, k)]);
  return make_result(op, std::move(out), std::move(v), {a, b},
                     [ia = std::move(ia), ib = std::move(ib), da, db](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const auto& g = self.grad;
                       for (std::size_t k = 0; k < g.size(); ++k) {
                         const std::size_t ka = mapped(ia, k);
                         const std::size_t kb = mapped(ib, k);
                         if (na.requires_grad) na.grad_buffer()[ka] += da(na.value[ka], nb.value[kb], g[k]);
                         if (nb.requires_grad) nb.grad_buffer()[kb] += db(na.value[ka], nb.value[kb], g[k]);
                       }
                     });
}

// y = f(x); dy/dx = df(x, y).
template <class F, class DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
  const auto xv = x.values();
  std::vector<double> v(xv.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = f(xv[k]);
  return make_result(op, x.shape(), std::move(v), {x}, [df](Node& self) {
    Node& in = *self.inputs[0];
    auto& gi = in.grad_buffer();
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      gi[k] += self.grad[k] * df(in.value[k], self.value[k]);
    }
  });
}

// C[m,n] += op(A) * op(B). Only the three layouts used by matmul and its
// adjoints are supported: NN, NT (B transposed) and TN (A transposed).
enum class Layout { kNN, kNT, kTN };

void gemm_acc(Layout layout, const double* A, const double* B, double* C, std::size_t m,
              std::size_t k, std::size_t n) {
  switch (layout) {
    case Layout::kNN:  // A [m,k], B [k,n]
      for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double a = A[i * k + p];
          const double* b = B + p * n;
          for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
      }
      break;
    case Layout::kNT: {  // A [m,k], B [n,k]
      // Transpose B once so the inner loop runs over contiguous columns.
      thread_local std::vector<double> bt;
      bt.resize(k * n);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = B[j * k + p];
      }
      gemm_acc(Layout::kNN, A, bt.data(), C, m, k, n);
      break;
    }
    case Layout::kTN:  // A [k,m], B [k,n]
      for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
          const double a = A[p * m + i];
          double* c = C + i * n;
          for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
      }
      break;
  }
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
    const std::size_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[k] = da == 1 ? db : da;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  return unary(
      "affine", x, [=](double v) { return scale * v + shift; },
      [=](double, double) { return scale; });
}

Tensor scale(const Tensor& x, double factor) { return affine(x, factor, 0.0); }

Tensor pow_const(const Tensor& x, double exponent) {
  return unary(
      "pow", x, [=](double v) { return std::pow(v, exponent); },
      [=](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const std::size_t n = transpose_b ? b.dim(-2) : b.dim(-1);
  if (bk != k) shape_error("matmul", a.shape(), b.shape());
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      shape_error("matmul", a.shape(), b.shape());
    }
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out(a.shape().begin(), a.shape().end() - 2);
  out.push_back(m);
  out.push_back(n);
  std::vector<double> v(batch * m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  const std::size_t b_stride = shared_b ? 0 : k * n;
  for (std::size_t t = 0; t < batch; ++t) {
    gemm_acc(transpose_b ? Layout::kNT : Layout::kNN, A + t * m * k, B + t * b_stride,
             v.data() + t * m * n, m, k, n);
  }
  return make_result("matmul", std::move(out), std::move(v), {a, b},
                     [=](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const double* G = self.grad.data();
                       for (std::size_t t = 0; t < batch; ++t) {
                         const double* g = G + t * m * n;
                         if (na.requires_grad) {
                           // dA = G B^T (or G B when B is stored transposed)
                           gemm_acc(transpose_b ? Layout::kNN : Layout::kNT,
                                    g, nb.value.data() + t * b_stride,
                                    na.grad_buffer().data() + t * m * k, m, n, k);
                         }
                         if (nb.requires_grad) {
                           double* gb = nb.grad_buffer().data() + t * b_stride;
                           if (transpose_b) {
                             gemm_acc(Layout::kTN, g, na.value.data() + t * m * k, gb, n, m, k);
                           } else {
                             gemm_acc(Layout::kTN, na.value.data() + t * m * k, g, gb, k, m, n);
                           }
                         }
                       }
                     });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    shape_error("concat_last", a.shape(), b.shape());
  }
  const std::size_t ca = a.dim(-1);
  const std::size_t cb = b.dim(-1);
  const std::size_t rows = ca ? a.numel() / ca : numel(Shape(a.shape().begin(), a.shape().end() - 1));
  Shape out = a.shape();
  out.back() = ca + cb;
  std::vector<double> v(rows * (ca + cb));
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, v.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, v.data() + r * (ca + cb) + ca);
  }
  return make_result("concat_last", std::move(out), std::move(v), {a, b}, [=](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * (ca + cb);
      if (na.requires_grad) {
        double* d = na.grad_buffer().data() + r * ca;
        for (std::size_t c = 0; c < ca; ++c) d[c] += g[c];
      }
      if (nb.requires_grad) {
        double* d = nb.grad_buffer().data() + r * cb;
        for (std::size_t c = 0; c < cb; ++c) d[c] += g[ca + c];
      }
    }
  });
}

Tensor softmax_last(const Tensor& x) {
  const std::size_t n = x.rank() ? x.dim(-1) : 1;
  const std::size_t rows = n ? x.numel() / n : 0;
  const auto xv = x.values();
  std::vector<double> v(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* out = v.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    if (mx == -std::numeric_limits<double>::infinity()) {
      std::fill(out, out + n, 0.0);
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
  }
  return make_result("softmax_last", x.shape(), std::move(v), {x}, [=](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gi[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sin(const Tensor& x) {
  return unary(
      "sin", x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(
      "cos", x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      "leaky_relu", x, [=](double v) { return v > 0 ? v : slope * v; },
      [=](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [=](double v) { return std::clamp(v, lo, hi); },
      [=](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kLeakyRelu: return "leaky";
    case Activation::kSilu: return "silu";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "leaky" || name == "leakyrelu") return Activation::kLeakyRelu;
  if (name == "silu") return Activation::kSilu;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + std::string(name) +
                    "' (expected leaky, silu or identity)");
}

Tensor activate(const Tensor& x, Activation act, double leaky_slope) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kLeakyRelu: return leaky_relu(x, leaky_slope);
    case Activation::kSilu: return silu(x);
  }
  return x;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    shape_error("layer_norm", x.shape(), gamma.shape());
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> v(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * is;
      xhat[r * d + j] = h;
      v[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(v), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (ng.requires_grad) {
            auto& gg = ng.grad_buffer();
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[j] * h[j];
          }
          if (nb.requires_grad) {
            auto& gb = nb.grad_buffer();
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[j];
          }
          if (nx.requires_grad) {
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[j] * ng.value[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            double* gx = nx.grad_buffer().data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[j] * ng.value[j];
              gx[j] += inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h);
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (!train || p == 0.0) return x;
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  const auto xv = x.values();
  std::vector<double> v(xv.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = xv[k] * mask[k];
  return make_result("dropout", x.shape(), std::move(v), {x},
                     [mask = std::move(mask)](Node& self) {
                       auto& gi = self.inputs[0]->grad_buffer();
                       for (std::size_t k = 0; k < mask.size(); ++k) gi[k] += self.grad[k] * mask[k];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> ids, const Shape& ids_shape) {
  if (table.rank() != 2 || numel(ids_shape) != ids.size()) {
    shape_error("gather_rows", table.shape(), ids_shape);
  }
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw ShapeError("gather_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
  }
  Shape out = ids_shape;
  out.push_back(d);
  std::vector<double> v(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[k]) * d, d, v.data() + k * d);
  }
  std::vector<std::int64_t> kept(ids.begin(), ids.end());
  return make_result("gather_rows", std::move(out), std::move(v), {table},
                     [=, kept = std::move(kept)](Node& self) {
                       auto& gt = self.inputs[0]->grad_buffer();
                       for (std::size_t k = 0; k < kept.size(); ++k) {
                         double* dst = gt.data() + static_cast<std::size_t>(kept[k]) * d;
                         const double* g = self.grad.data() + k * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                       }
                     });
}

Tensor masked_fill(const Tensor& x, const Tensor& keep, double fill) {
  const Shape out = broadcast_shapes(x.shape(), keep.shape(), "masked_fill");
  if (out != x.shape()) shape_error("masked_fill", x.shape(), keep.shape());
  const auto ik = broadcast_index(keep.shape(), out);
  const auto xv = x.values();
  const auto kv = keep.values();
  std::vector<double> v(xv.size());
  std::vector<unsigned char> pass(xv.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    pass[k] = kv[mapped(ik, k)] != 0.0;
    v[k] = pass[k] ? xv[k] : fill;
  }
  return make_result("masked_fill", x.shape(), std::move(v), {x},
                     [pass = std::move(pass)](Node& self) {
                       auto& gi = self.inputs[0]->grad_buffer();
                       for (std::size_t k = 0; k < pass.size(); ++k) {
                         if (pass[k]) gi[k] += self.grad[k];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result("sum", {}, {s}, {x}, [](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (auto& g : gi) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("sum_last: scalar input");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = n ? x.numel() / n : 0;
  Shape out(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> v(numel(out), 0.0);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j];
    v[r] = s;
  }
  return make_result("sum_last", std::move(out), std::move(v), {x}, [=](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) gi[r * n + j] += self.grad[r];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<double> v(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(v), {x}, [](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += self.grad[k];
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axes rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axes for " + to_string(x.shape()));
    seen[a] = true;
  }
  const Shape& in = x.shape();
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) out[k] = in[axes[k]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t k = r; k-- > 1;) in_stride[k - 1] = in_stride[k] * in[k];
  // src[f] = flat input index feeding output position f.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t f = 0; f < n; ++f) {
    src[f] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += in_stride[axes[d]];
      if (counter[d] < out[d]) break;
      cur -= in_stride[axes[d]] * out[d];
      counter[d] = 0;
    }
  }
  const auto xv = x.values();
  std::vector<double> v(n);
  for (std::size_t f = 0; f < n; ++f) v[f] = xv[src[f]];
  return make_result("permute", std::move(out), std::move(v), {x},
                     [src = std::move(src)](Node& self) {
                       auto& gi = self.inputs[0]->grad_buffer();
                       for (std::size_t f = 0; f < src.size(); ++f) gi[src[f]] += self.grad[f];
                     });
}

Tensor slice_leading(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw ShapeError("slice_leading: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " + to_string(x.shape()));
  }
  const std::size_t inner = x.dim(0) ? x.numel() / x.dim(0) : 0;
  Shape out = x.shape();
  out[0] = end - begin;
  std::vector<double> v(x.values().begin() + static_cast<std::ptrdiff_t>(begin * inner),
                        x.values().begin() + static_cast<std::ptrdiff_t>(end * inner));
  const std::size_t offset = begin * inner;
  return make_result("slice_leading", std::move(out), std::move(v), {x}, [=](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < self.grad.size(); ++k) gi[offset + k] += self.grad[k];
  });
}

Tensor index_select_last(const Tensor& x, std::span<const std::size_t> index, std::size_t m) {
  if (x.rank() < 2) throw ShapeError("index_select_last: rank < 2 for " + to_string(x.shape()));
  const std::size_t n = x.dim(-2);
  const std::size_t r = x.dim(-1);
  if (index.size() != n * m) {
    throw ShapeError("index_select_last: index table has " + std::to_string(index.size()) +
                     " entries, expected " + std::to_string(n * m));
  }
  for (auto c : index) {
    if (c >= r) throw ShapeError("index_select_last: index out of range for " + to_string(x.shape()));
  }
  const std::size_t batch = x.numel() / (n * r);
  Shape out = x.shape();
  out.back() = m;
  std::vector<double> v(batch * n * m);
  const auto xv = x.values();
  for (std::size_t t = 0; t < batch; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        v[(t * n + i) * m + j] = xv[(t * n + i) * r + index[i * m + j]];
      }
    }
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("index_select_last", std::move(out), std::move(v), {x},
                     [=, idx = std::move(idx)](Node& self) {
                       auto& gi = self.inputs[0]->grad_buffer();
                       for (std::size_t t = 0; t < batch; ++t) {
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < m; ++j) {
                             gi[(t * n + i) * r + idx[i * m + j]] += self.grad[(t * n + i) * m + j];
                           }
                         }
                       }
                     });
}

Tensor index_add_last(const Tensor& x, std::span<const std::size_t> index, std::size_t r) {
  if (x.rank() < 2) throw ShapeError("index_add_last: rank < 2 for " + to_string(x.shape()));
  const std::size_t n = x.dim(-2);
  const std::size_t m = x.dim(-1);
  if (index.size() != n * m) {
    throw ShapeError("index_add_last: index table has " + std::to_string(index.size()) +
                     " entries, expected " + std::to_string(n * m));
  }
  for (auto c : index) {
    if (c >= r) throw ShapeError("index_add_last: index out of range");
  }
  const std::size_t batch = x.numel() / (n * m);
  Shape out = x.shape();
  out.back() = r;
  std::vector<double> v(batch * n * r, 0.0);
  const auto xv = x.values();
  for (std::size_t t = 0; t < batch; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        v[(t * n + i) * r + index[i * m + j]] += xv[(t * n + i) * m + j];
      }
    }
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("index_add_last", std::move(out), std::move(v), {x},
                     [=, idx = std::move(idx)](Node& self) {
                       auto& gi = self.inputs[0]->grad_buffer();
                       for (std::size_t t = 0; t < batch; ++t) {
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < m; ++j) {
                             gi[(t * n + i) * m + j] += self.grad[(t * n + i) * r + idx[i * m + j]];
                           }
                         }
                       }
                     });
}

}  // namespace posenc
