#pragma once

// Dense row-major tensors of doubles and a reverse-mode tape over the op set
// the encoder needs. Every op records a closure that accumulates exact
// analytic gradients into its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "seqorder/common.hpp"
#include "seqorder/parallel.hpp"

namespace seqorder {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ProgrammingError(concat("tensor data length ", data_.size(), " does not match shape ", shape_str(shape_)));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }

  // Row view: all leading dimensions flattened.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() ? size() / cols() : 0; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* row(std::size_t r) { return data_.data() + r * cols(); }
  const double* row(std::size_t r) const { return data_.data() + r * cols(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const {
    if (data_.size() != 1) throw ProgrammingError(concat("item() on tensor of shape ", shape_str(shape_)));
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace kernels {

// c[m,n] (+)= a[m,k] * b[k,n]
inline void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, 16, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ai[p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  });
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
inline void matmul_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, 16, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * n + j] += s;
      }
    }
  });
}

// c[k,n] (+)= a[m,k]^T * b[m,n]; each output row is owned by one chunk.
inline void matmul_at_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(k, 16, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      const double* bi = b + i * n;
      for (std::size_t p = begin; p < end; ++p) {
        const double aip = ai[p];
        if (aip == 0.0) continue;
        double* cp = c + p * n;
        for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
      }
    }
  });
}

}  // namespace kernels

enum class GeluKind { Tanh, Erf };

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, {});
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

  // Gradient of the last backward() target w.r.t. v; zeros if v got none.
  const Tensor& grad(Var v) {
    Node& n = nodes_.at(v.id);
    ensure_grad(n);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(target)/d(target) = 1 and visits every node once, in reverse
  // execution order.
  void backward(Var target) {
    Node& t = nodes_.at(target.id);
    if (t.value.size() != 1) throw ProgrammingError("backward() target must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor();
    ensure_grad(t);
    t.grad[0] = 1.0;
    for (std::size_t i = target.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.shape().empty()) n.backward(n.grad);
    }
  }

  // Op construction. `backward` receives the output gradient and must
  // accumulate into inputs through grad_of().
  Var push(Tensor value, bool requires_grad, std::function<void(const Tensor&)> backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad ? std::move(backward) : nullptr, requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient buffer of an input, allocated on first use.
  Tensor& grad_of(Var v) {
    Node& n = nodes_.at(v.id);
    ensure_grad(n);
    return n.grad;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(const Tensor&)> backward;
    bool requires_grad = false;
  };

  static void ensure_grad(Node& n) {
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace ops {

namespace detail {

inline void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ProgrammingError("vars from different tapes");
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw ProgrammingError(concat(op, ": expected 2-d input, got ", shape_str(t.shape())));
}

template <typename... Vs>
bool any_grad(Vs... vs) {
  return (vs.tape->requires_grad(vs) || ...);
}

}  // namespace detail

// [m,k] x [k,n] -> [m,n]
inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_2d(A, "matmul");
  detail::require_2d(B, "matmul");
  if (A.dim(1) != B.dim(0))
    throw ProgrammingError(concat("matmul shape mismatch: ", shape_str(A.shape()), " x ", shape_str(B.shape())));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  kernels::matmul_acc(A.data().data(), B.data().data(), C.data().data(), m, k, n);
  Tape* tape = a.tape;
  return tape->push(std::move(C), detail::any_grad(a, b), [tape, a, b, m, k, n](const Tensor& g) {
    if (tape->requires_grad(a))
      kernels::matmul_bt_acc(g.data().data(), b.value().data().data(), tape->grad_of(a).data().data(), m, n, k);
    if (tape->requires_grad(b))
      kernels::matmul_at_acc(a.value().data().data(), g.data().data(), tape->grad_of(b).data().data(), m, k, n);
  });
}

// [m,k] x [n,k]^T -> [m,n]
inline Var matmul_bt(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_2d(A, "matmul_bt");
  detail::require_2d(B, "matmul_bt");
  if (A.dim(1) != B.dim(1))
    throw ProgrammingError(concat("matmul_bt shape mismatch: ", shape_str(A.shape()), " x ", shape_str(B.shape()), "^T"));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Tensor C({m, n});
  kernels::matmul_bt_acc(A.data().data(), B.data().data(), C.data().data(), m, k, n);
  Tape* tape = a.tape;
  return tape->push(std::move(C), detail::any_grad(a, b), [tape, a, b, m, k, n](const Tensor& g) {
    if (tape->requires_grad(a))
      kernels::matmul_acc(g.data().data(), b.value().data().data(), tape->grad_of(a).data().data(), m, n, k);
    if (tape->requires_grad(b))
      kernels::matmul_at_acc(g.data().data(), a.value().data().data(), tape->grad_of(b).data().data(), m, n, k);
  });
}

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.shape() != b.shape())
    throw ProgrammingError(concat("add shape mismatch: ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
  Tensor C = a.value();
  const auto bd = b.value().data();
  auto cd = C.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  Tape* tape = a.tape;
  return tape->push(std::move(C), detail::any_grad(a, b), [tape, a, b](const Tensor& g) {
    for (Var v : {a, b}) {
      if (!tape->requires_grad(v)) continue;
      auto gd = tape->grad_of(v).data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += g[i];
    }
  });
}

// x[m,n] + bias[n] broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  detail::check_same_tape(x, bias);
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  if (b.ndim() != 1 || b.dim(0) != X.cols())
    throw ProgrammingError(concat("add_bias shape mismatch: ", shape_str(X.shape()), " + ", shape_str(b.shape())));
  Tensor Y = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    double* y = Y.row(r);
    for (std::size_t j = 0; j < n; ++j) y[j] += b[j];
  }
  Tape* tape = x.tape;
  return tape->push(std::move(Y), detail::any_grad(x, bias), [tape, x, bias, n](const Tensor& g) {
    if (tape->requires_grad(x)) {
      auto gx = tape->grad_of(x).data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
    if (tape->requires_grad(bias)) {
      Tensor& gb = tape->grad_of(bias);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double* gr = g.row(r);
        for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
      }
    }
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.shape() != b.shape())
    throw ProgrammingError(concat("mul shape mismatch: ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
  Tensor C = a.value();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= b.value()[i];
  Tape* tape = a.tape;
  return tape->push(std::move(C), detail::any_grad(a, b), [tape, a, b](const Tensor& g) {
    if (tape->requires_grad(a)) {
      Tensor& ga = tape->grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (tape->requires_grad(b)) {
      Tensor& gb = tape->grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

inline Var scale(Var x, double s) {
  Tensor Y = x.value();
  for (auto& v : Y.data()) v *= s;
  Tape* tape = x.tape;
  return tape->push(std::move(Y), tape->requires_grad(x), [tape, x, s](const Tensor& g) {
    Tensor& gx = tape->grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

// Sum of all elements -> [1].
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  Tape* tape = x.tape;
  return tape->push(Tensor::scalar(s), tape->requires_grad(x), [tape, x](const Tensor& g) {
    for (auto& v : tape->grad_of(x).data()) v += g[0];
  });
}

inline double gelu_value(double x, GeluKind kind) {
  if (kind == GeluKind::Erf) return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x, GeluKind kind) {
  if (kind == GeluKind::Erf) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
  }
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

inline Var gelu(Var x, GeluKind kind = GeluKind::Tanh) {
  Tensor Y = x.value();
  for (auto& v : Y.data()) v = gelu_value(v, kind);
  Tape* tape = x.tape;
  return tape->push(std::move(Y), tape->requires_grad(x), [tape, x, kind](const Tensor& g) {
    Tensor& gx = tape->grad_of(x);
    const Tensor& X = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_derivative(X[i], kind);
  });
}

inline Var tanh(Var x) {
  Tensor Y = x.value();
  for (auto& v : Y.data()) v = std::tanh(v);
  Tape* tape = x.tape;
  const std::size_t out = tape->size();
  return tape->push(std::move(Y), tape->requires_grad(x), [tape, x, out](const Tensor& g) {
    Tensor& gx = tape->grad_of(x);
    const Tensor& Y = tape->value(Var{tape, out});
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - Y[i] * Y[i]);
  });
}

inline void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) z += (out[j] = std::exp(in[j] - mx));
  for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var x) {
  const Tensor& X = x.value();
  Tensor Y(X.shape());
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r) softmax_row(X.row(r), Y.row(r), n);
  Tape* tape = x.tape;
  const std::size_t out = tape->size();
  return tape->push(std::move(Y), tape->requires_grad(x), [tape, x, out, n](const Tensor& g) {
    Tensor& gx = tape->grad_of(x);
    const Tensor& Y = tape->value(Var{tape, out});
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      const double* y = Y.row(r);
      const double* gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * y[j];
      double* gxr = gx.row(r);
      for (std::size_t j = 0; j < n; ++j) gxr[j] += y[j] * (gr[j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-12;

// Normalizes each row to zero mean / unit variance, then gamma * x + beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols(), m = X.rows();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    throw ProgrammingError(concat("layer_norm shape mismatch: x ", shape_str(X.shape()), ", gamma ",
                                  shape_str(gamma.shape()), ", beta ", shape_str(beta.shape())));
  Tensor Y(X.shape());
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = X.row(r);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* h = xhat->row(r);
    double* y = Y.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      h[j] = (xr[j] - mean) * is;
      y[j] = G[j] * h[j] + B[j];
    }
  }
  Tape* tape = x.tape;
  return tape->push(std::move(Y), detail::any_grad(x, gamma, beta),
                    [tape, x, gamma, beta, xhat, inv_std, n, m](const Tensor& g) {
                      const Tensor& G = gamma.value();
                      if (tape->requires_grad(gamma) || tape->requires_grad(beta)) {
                        Tensor& gg = tape->grad_of(gamma);
                        Tensor& gb = tape->grad_of(beta);
                        for (std::size_t r = 0; r < m; ++r) {
                          const double* gr = g.row(r);
                          const double* h = xhat->row(r);
                          for (std::size_t j = 0; j < n; ++j) {
                            gg[j] += gr[j] * h[j];
                            gb[j] += gr[j];
                          }
                        }
                      }
                      if (!tape->requires_grad(x)) return;
                      Tensor& gx = tape->grad_of(x);
                      std::vector<double> dh(n);
                      for (std::size_t r = 0; r < m; ++r) {
                        const double* gr = g.row(r);
                        const double* h = xhat->row(r);
                        double mean_dh = 0.0, mean_dh_h = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          dh[j] = gr[j] * G[j];
                          mean_dh += dh[j];
                          mean_dh_h += dh[j] * h[j];
                        }
                        mean_dh /= static_cast<double>(n);
                        mean_dh_h /= static_cast<double>(n);
                        double* gxr = gx.row(r);
                        for (std::size_t j = 0; j < n; ++j)
                          gxr[j] += (*inv_std)[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                      }
                    });
}

// Inverted dropout; identity when !train or rate == 0.
inline Var dropout(Var x, double rate, Rng& rng, bool train) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw ProgrammingError("dropout rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor Y = x.value();
  for (std::size_t i = 0; i < Y.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    Y[i] *= (*mask)[i];
  }
  Tape* tape = x.tape;
  return tape->push(std::move(Y), tape->requires_grad(x), [tape, x, mask](const Tensor& g) {
    Tensor& gx = tape->grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

// Rows of table[V,d] selected by ids -> [ids.size(), d].
inline Var embedding_lookup(Var table, std::span<const TokenId> ids) {
  const Tensor& T = table.value();
  detail::require_2d(T, "embedding_lookup");
  const std::size_t d = T.dim(1);
  Tensor Y({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.dim(0))
      throw ProgrammingError(concat("embedding id ", ids[i], " out of range for table ", shape_str(T.shape())));
    std::copy_n(T.row(ids[i]), d, Y.row(i));
  }
  Tape* tape = table.tape;
  auto idx = std::make_shared<std::vector<TokenId>>(ids.begin(), ids.end());
  return tape->push(std::move(Y), tape->requires_grad(table), [tape, table, idx, d](const Tensor& g) {
    Tensor& gt = tape->grad_of(table);
    for (std::size_t i = 0; i < idx->size(); ++i) {
      double* dst = gt.row((*idx)[i]);
      const double* src = g.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// Selected rows of x[m,n] -> [rows.size(), n].
inline Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  Tensor Y({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows()) throw ProgrammingError(concat("gather_rows index ", rows[i], " out of range"));
    std::copy_n(X.row(rows[i]), n, Y.row(i));
  }
  Tape* tape = x.tape;
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return tape->push(std::move(Y), tape->requires_grad(x), [tape, x, idx, n](const Tensor& g) {
    Tensor& gx = tape->grad_of(x);
    for (std::size_t i = 0; i < idx->size(); ++i) {
      double* dst = gx.row((*idx)[i]);
      const double* src = g.row(i);
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

struct AttentionLayout {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 1;
};

// Multi-head scaled dot-product attention over q, k, v of shape
// [batch*seq, hidden]. key_valid[b*seq + s] == false excludes key s of
// example b. Dropout (train only) applies to the attention probabilities.
inline Var attention(Var q, Var k, Var v, const AttentionLayout& layout, std::span<const std::uint8_t> key_valid,
                     double dropout_rate, Rng& rng, bool train) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const std::size_t B = layout.batch, T = layout.seq, H = layout.heads;
  if (Q.shape() != K.shape() || Q.shape() != V.shape() || Q.ndim() != 2 || Q.dim(0) != B * T)
    throw ProgrammingError(concat("attention shape mismatch: q ", shape_str(Q.shape()), ", k ", shape_str(K.shape()),
                                  ", v ", shape_str(V.shape()), " for batch ", B, " x seq ", T));
  const std::size_t D = Q.dim(1);
  if (H == 0 || D % H != 0) throw ProgrammingError(concat("hidden ", D, " not divisible by heads ", H));
  if (key_valid.size() != B * T) throw ProgrammingError("attention key mask length mismatch");
  const std::size_t dh = D / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = train && dropout_rate > 0.0;
  const double keep_scale = drop ? 1.0 / (1.0 - dropout_rate) : 1.0;

  // probs[b][h][t][s] before dropout; keep[...] holds the dropout multiplier.
  auto probs = std::make_shared<std::vector<double>>(B * H * T * T, 0.0);
  auto keep = std::make_shared<std::vector<double>>(drop ? B * H * T * T : 0, keep_scale);
  Tensor O({B * T, D});
  std::vector<double> scores(T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* qt = Q.row(b * T + t) + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < T; ++s) {
          if (!key_valid[b * T + s]) continue;
          const double* ks = K.row(b * T + s) + h * dh;
          double dot = 0.0;
          for (std::size_t j = 0; j < dh; ++j) dot += qt[j] * ks[j];
          scores[s] = dot * inv_sqrt;
          mx = std::max(mx, scores[s]);
        }
        double* p = probs->data() + ((b * H + h) * T + t) * T;
        double z = 0.0;
        for (std::size_t s = 0; s < T; ++s)
          if (key_valid[b * T + s]) z += (p[s] = std::exp(scores[s] - mx));
        double* ot = O.row(b * T + t) + h * dh;
        for (std::size_t s = 0; s < T; ++s) {
          if (!key_valid[b * T + s]) continue;
          p[s] /= z;
          double w = p[s];
          if (drop) {
            double& kp = (*keep)[((b * H + h) * T + t) * T + s];
            if (rng.uniform() < dropout_rate) kp = 0.0;
            w *= kp;
          }
          const double* vs = V.row(b * T + s) + h * dh;
          for (std::size_t j = 0; j < dh; ++j) ot[j] += w * vs[j];
        }
      }
    }
  }

  Tape* tape = q.tape;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(key_valid.begin(), key_valid.end());
  return tape->push(std::move(O), detail::any_grad(q, k, v),
                    [tape, q, k, v, probs, keep, mask, B, T, H, dh, inv_sqrt, drop](const Tensor& g) {
                      const Tensor& Q = q.value();
                      const Tensor& K = k.value();
                      const Tensor& V = v.value();
                      Tensor& gq = tape->grad_of(q);
                      Tensor& gk = tape->grad_of(k);
                      Tensor& gv = tape->grad_of(v);
                      std::vector<double> dp(T);
                      for (std::size_t b = 0; b < B; ++b) {
                        for (std::size_t h = 0; h < H; ++h) {
                          for (std::size_t t = 0; t < T; ++t) {
                            const double* p = probs->data() + ((b * H + h) * T + t) * T;
                            const double* kp = drop ? keep->data() + ((b * H + h) * T + t) * T : nullptr;
                            const double* go = g.row(b * T + t) + h * dh;
                            double dot = 0.0;
                            for (std::size_t s = 0; s < T; ++s) {
                              dp[s] = 0.0;
                              if (!(*mask)[b * T + s]) continue;
                              const double m = kp ? kp[s] : 1.0;
                              const double* vs = V.row(b * T + s) + h * dh;
                              double* gvs = gv.row(b * T + s) + h * dh;
                              double acc = 0.0;
                              for (std::size_t j = 0; j < dh; ++j) {
                                acc += go[j] * vs[j];
                                gvs[j] += p[s] * m * go[j];
                              }
                              dp[s] = acc * m;
                              dot += dp[s] * p[s];
                            }
                            const double* qt = Q.row(b * T + t) + h * dh;
                            double* gqt = gq.row(b * T + t) + h * dh;
                            for (std::size_t s = 0; s < T; ++s) {
                              if (!(*mask)[b * T + s]) continue;
                              const double ds = p[s] * (dp[s] - dot) * inv_sqrt;
                              if (ds == 0.0) continue;
                              const double* ks = K.row(b * T + s) + h * dh;
                              double* gks = gk.row(b * T + s) + h * dh;
                              for (std::size_t j = 0; j < dh; ++j) {
                                gqt[j] += ds * ks[j];
                                gks[j] += ds * qt[j];
                              }
                            }
                          }
                        }
                      }
                    });
}

// Mean over rows of -sum_c target[r,c] * log softmax(logits[r])_c -> [1].
// Uses log-sum-exp; targets need not be one-hot.
inline Var cross_entropy_soft(Var logits, const Tensor& targets) {
  const Tensor& Z = logits.value();
  if (Z.shape() != targets.shape() || Z.ndim() != 2)
    throw ProgrammingError(concat("cross_entropy shape mismatch: logits ", shape_str(Z.shape()), ", targets ",
                                  shape_str(targets.shape())));
  const std::size_t m = Z.rows(), n = Z.cols();
  if (m == 0) throw ProgrammingError("cross_entropy over zero rows");
  auto probs = std::make_shared<Tensor>(Z.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const double* z = Z.row(r);
    const double mx = *std::max_element(z, z + n);
    double se = 0.0;
    for (std::size_t j = 0; j < n; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    const double* t = targets.row(r);
    double* p = probs->row(r);
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(z[j] - lse);
      if (t[j] != 0.0) total -= t[j] * (z[j] - lse);
    }
  }
  Tape* tape = logits.tape;
  auto tgt = std::make_shared<Tensor>(targets);
  return tape->push(Tensor::scalar(total / static_cast<double>(m)), tape->requires_grad(logits),
                    [tape, logits, probs, tgt, m, n](const Tensor& g) {
                      Tensor& gz = tape->grad_of(logits);
                      const double s = g[0] / static_cast<double>(m);
                      for (std::size_t r = 0; r < m; ++r) {
                        const double* t = tgt->row(r);
                        double tsum = 0.0;
                        for (std::size_t j = 0; j < n; ++j) tsum += t[j];
                        const double* p = probs->row(r);
                        double* gr = gz.row(r);
                        for (std::size_t j = 0; j < n; ++j) gr[j] += s * (p[j] * tsum - t[j]);
                      }
                    });
}

// Hard-label cross entropy, mean over rows -> [1].
inline Var cross_entropy_index(Var logits, std::span<const TokenId> labels) {
  const Tensor& Z = logits.value();
  if (Z.ndim() != 2 || Z.rows() != labels.size())
    throw ProgrammingError(concat("cross_entropy_index shape mismatch: logits ", shape_str(Z.shape()), ", labels [",
                                  labels.size(), "]"));
  const std::size_t m = Z.rows(), n = Z.cols();
  if (m == 0) throw ProgrammingError("cross_entropy over zero rows");
  auto probs = std::make_shared<Tensor>(Z.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= n) throw ProgrammingError(concat("label ", labels[r], " out of range for ", n, " classes"));
    const double* z = Z.row(r);
    const double mx = *std::max_element(z, z + n);
    double se = 0.0;
    for (std::size_t j = 0; j < n; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    double* p = probs->row(r);
    for (std::size_t j = 0; j < n; ++j) p[j] = std::exp(z[j] - lse);
    total -= z[labels[r]] - lse;
  }
  Tape* tape = logits.tape;
  auto lab = std::make_shared<std::vector<TokenId>>(labels.begin(), labels.end());
  return tape->push(Tensor::scalar(total / static_cast<double>(m)), tape->requires_grad(logits),
                    [tape, logits, probs, lab, m, n](const Tensor& g) {
                      Tensor& gz = tape->grad_of(logits);
                      const double s = g[0] / static_cast<double>(m);
                      for (std::size_t r = 0; r < m; ++r) {
                        const double* p = probs->row(r);
                        double* gr = gz.row(r);
                        for (std::size_t j = 0; j < n; ++j) gr[j] += s * p[j];
                        gr[(*lab)[r]] -= s;
                      }
                    });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

// Compares analytic gradients against central differences over every
// coordinate of `points`. `loss` must re-evaluate from the current contents
// of the tensors. Returns the max relative error.
inline double grad_check_tensors(const std::function<double()>& loss, std::span<Tensor* const> points,
                                 std::span<const Tensor* const> analytic, double eps) {
  if (points.size() != analytic.size()) throw ProgrammingError("grad_check: point/gradient count mismatch");
  double worst = 0.0;
  std::size_t flat = 0;
  for (std::size_t t = 0; t < points.size(); ++t) {
    Tensor& x = *points[t];
    const Tensor& a = *analytic[t];
    if (a.shape() != x.shape()) throw ProgrammingError("grad_check: gradient shape mismatch");
    for (std::size_t i = 0; i < x.size(); ++i, ++flat) {
      const double saved = x[i];
      x[i] = saved + eps;
      const double up = loss();
      x[i] = saved - eps;
      const double down = loss();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(a[i]))
        fatal("non-finite value in gradient check at coordinate ", flat);
      worst = std::max(worst, relative_error(a[i], numeric));
    }
  }
  return worst;
}

// f maps a leaf on a fresh tape to a scalar var.
using ScalarFn = std::function<Var(Tape&, Var)>;

inline double grad_check(const ScalarFn& f, const Tensor& point, double eps = 1e-5) {
  Tensor x = point;
  Tape tape;
  const Var leaf = tape.leaf(x);
  const Var out = f(tape, leaf);
  if (out.value().size() != 1) throw ProgrammingError("grad_check: function is not scalar-valued");
  tape.backward(out);
  const Tensor analytic = tape.grad(leaf);
  const auto eval = [&] {
    Tape t;
    return f(t, t.leaf(x)).value().item();
  };
  Tensor* pts[] = {&x};
  const Tensor* grads[] = {&analytic};
  return grad_check_tensors(eval, pts, grads, eps);
}

}  // namespace seqorder
