#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gril/errors.hpp"
#include "gril/numerics/tape.hpp"

// Differentiable operations over Var. Every op records exact analytic
// backward rules; shapes are checked eagerly.
namespace gril::ops {

namespace detail {

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands live on different tapes");
}

inline void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_vector(Var a, const char* op) {
  if (a.value().rank() != 1) throw DimensionError(std::string(op) + ": expected rank-1, got " + shape_str(a.shape()));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var matvec(Var w, Var x) {
  detail::require_same_tape(w, x);
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  if (W.rank() != 2 || X.rank() != 1 || W.cols() != X.size()) {
    throw DimensionError("matvec: weight " + shape_str(W.shape()) + " incompatible with input " + shape_str(X.shape()));
  }
  const std::size_t m = W.rows(), n = W.cols();
  Tensor y({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = &W.values()[i * n];
    for (std::size_t j = 0; j < n; ++j) s += row[j] * X[j];
    y[i] = s;
  }
  return w.tape->record(std::move(y), {w.id, x.id}, [wi = w.id, xi = x.id, m, n](Tape& t, std::size_t self) {
    auto gy = t.upstream(self);
    const Tensor& W = t.value(wi);
    const Tensor& X = t.value(xi);
    if (t.requires_grad(wi)) {
      auto gw = t.grad_buffer(wi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += gy[i] * X[j];
    }
    if (t.requires_grad(xi)) {
      auto gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < m; ++i) {
        const double* row = &W.values()[i * n];
        for (std::size_t j = 0; j < n; ++j) gx[j] += gy[i] * row[j];
      }
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    for (std::size_t in : {ai, bi}) {
      if (!t.requires_grad(in)) continue;
      auto gi = t.grad_buffer(in);
      for (std::size_t k = 0; k < g.size(); ++k) gi[k] += g[k];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    if (t.requires_grad(ai)) {
      auto ga = t.grad_buffer(ai);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
    }
    if (t.requires_grad(bi)) {
      auto gb = t.grad_buffer(bi);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k] -= g[k];
    }
  });
}

// Element-wise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& A = t.value(ai);
    const Tensor& B = t.value(bi);
    if (t.requires_grad(ai)) {
      auto ga = t.grad_buffer(ai);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * B[k];
    }
    if (t.requires_grad(bi)) {
      auto gb = t.grad_buffer(bi);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * A[k];
    }
  });
}

inline Var scale(Var a, double c) {
  Tensor y = a.value();
  for (auto& v : y.values()) v *= c;
  return a.tape->record(std::move(y), {a.id}, [ai = a.id, c](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += c * g[k];
  });
}

inline Var add_scalar(Var a, double c) {
  Tensor y = a.value();
  for (auto& v : y.values()) v += c;
  return a.tape->record(std::move(y), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
  });
}

// y = W x + b
inline Var linear(Var x, Var w, Var b) {
  const Tensor& W = w.value();
  if (W.rank() != 2 || x.value().rank() != 1 || W.cols() != x.size()) {
    throw DimensionError("linear: weight " + shape_str(W.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (b.value().rank() != 1 || b.size() != W.rows()) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " incompatible with weight " + shape_str(W.shape()));
  }
  return add(matvec(w, x), b);
}

inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::size_t n = 0;
  for (Var p : parts) {
    detail::require_same_tape(parts[0], p);
    detail::require_vector(p, "concat");
    n += p.size();
  }
  Tensor y({n});
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), y.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
    ids.push_back(p.id);
  }
  return parts[0].tape->record(std::move(y), ids, [ids](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    std::size_t off = 0;
    for (std::size_t in : ids) {
      std::size_t len = t.value(in).size();
      if (t.requires_grad(in)) {
        auto gi = t.grad_buffer(in);
        for (std::size_t k = 0; k < len; ++k) gi[k] += g[off + k];
      }
      off += len;
    }
  });
}

inline Var concat(std::initializer_list<Var> parts) {
  std::vector<Var> v(parts);
  return concat(std::span<const Var>(v));
}

inline Var sigmoid(Var a) {
  Tensor y = a.value();
  for (auto& v : y.values()) v = detail::sigmoid(v);
  return a.tape->record(std::move(y), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& Y = t.value(self);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * Y[k] * (1.0 - Y[k]);
  });
}

inline Var tanh(Var a) {
  Tensor y = a.value();
  for (auto& v : y.values()) v = std::tanh(v);
  return a.tape->record(std::move(y), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& Y = t.value(self);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * (1.0 - Y[k] * Y[k]);
  });
}

inline Var log(Var a) {
  Tensor y = a.value();
  for (auto& v : y.values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    v = std::log(v);
  }
  return a.tape->record(std::move(y), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& A = t.value(ai);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] / A[k];
  });
}

// log(p / (1 - p)) for p in (0, 1).
inline Var logit(Var p) {
  Tensor y = p.value();
  for (auto& v : y.values()) {
    if (!(v > 0.0 && v < 1.0)) throw DomainError("logit outside (0,1): " + std::to_string(v));
    v = std::log(v) - std::log1p(-v);
  }
  return p.tape->record(std::move(y), {p.id}, [pi = p.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& P = t.value(pi);
    auto gp = t.grad_buffer(pi);
    for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k] / (P[k] * (1.0 - P[k]));
  });
}

// Element-wise clamp; gradient passes only where the input lies inside [lo, hi].
inline Var clamp(Var a, double lo, double hi) {
  Tensor y = a.value();
  for (auto& v : y.values()) v = std::clamp(v, lo, hi);
  return a.tape->record(std::move(y), {a.id}, [ai = a.id, lo, hi](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& A = t.value(ai);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (A[k] >= lo && A[k] <= hi) ga[k] += g[k];
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->record(Tensor::scalar(s), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    double g = t.upstream(self)[0];
    auto ga = t.grad_buffer(ai);
    for (auto& v : ga) v += g;
  });
}

inline Var mean(Var a) {
  if (a.size() == 0) throw DomainError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

// Numerically stable softmax over a rank-1 tensor.
inline Var softmax(Var a) {
  detail::require_vector(a, "softmax");
  const auto& x = a.value().values();
  if (x.empty()) throw DomainError("softmax over an empty set");
  double m = *std::max_element(x.begin(), x.end());
  Tensor y({x.size()});
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - m));
  for (auto& v : y.values()) v /= z;
  return a.tape->record(std::move(y), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& Y = t.value(self);
    double s = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) s += g[k] * Y[k];
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += Y[k] * (g[k] - s);
  });
}

inline Var log_softmax(Var a) {
  detail::require_vector(a, "log_softmax");
  const auto& x = a.value().values();
  if (x.empty()) throw DomainError("log_softmax over an empty set");
  double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  double lse = m + std::log(z);
  Tensor y({x.size()});
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - lse;
  return a.tape->record(std::move(y), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& Y = t.value(self);
    double s = 0.0;
    for (double v : g) s += v;
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] - std::exp(Y[k]) * s;
  });
}

// Single element as a [1] tensor.
inline Var element(Var a, std::size_t i) {
  if (i >= a.size()) throw DimensionError("element index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
  return a.tape->record(Tensor::scalar(a.value()[i]), {a.id}, [ai = a.id, i](Tape& t, std::size_t self) {
    t.grad_buffer(ai)[i] += t.upstream(self)[0];
  });
}

// Stacks [1]-shaped scalars into a rank-1 tensor.
inline Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw DimensionError("stack: no inputs");
  Tensor y({scalars.size()});
  std::vector<std::size_t> ids;
  ids.reserve(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    detail::require_same_tape(scalars[0], scalars[i]);
    y[i] = scalars[i].item();
    ids.push_back(scalars[i].id);
  }
  return scalars[0].tape->record(std::move(y), ids, [ids](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.requires_grad(ids[k])) t.grad_buffer(ids[k])[0] += g[k];
  });
}

// Maximum over [1]-shaped scalars; the gradient goes to the first maximiser.
inline Var maximum(std::span<const Var> scalars) {
  if (scalars.empty()) throw DomainError("maximum over an empty set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scalars.size(); ++i)
    if (scalars[i].item() > scalars[best].item()) best = i;
  Var b = scalars[best];
  return b.tape->record(Tensor::scalar(b.item()), {b.id}, [bi = b.id](Tape& t, std::size_t self) {
    t.grad_buffer(bi)[0] += t.upstream(self)[0];
  });
}

// sum_i weights[i] * vectors[i]
inline Var weighted_sum(Var weights, std::span<const Var> vectors) {
  detail::require_vector(weights, "weighted_sum");
  if (vectors.empty() || weights.size() != vectors.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(vectors.size()) + " vectors");
  }
  const std::size_t d = vectors[0].size();
  Tensor y({d});
  std::vector<std::size_t> ids{weights.id};
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    detail::require_same_tape(weights, vectors[i]);
    if (vectors[i].shape() != vectors[0].shape()) {
      throw DimensionError("weighted_sum: shape mismatch " + shape_str(vectors[i].shape()) + " vs " + shape_str(vectors[0].shape()));
    }
    double w = weights.value()[i];
    const auto& v = vectors[i].value().values();
    for (std::size_t k = 0; k < d; ++k) y[k] += w * v[k];
    ids.push_back(vectors[i].id);
  }
  return weights.tape->record(std::move(y), ids, [ids, d](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor& W = t.value(ids[0]);
    const bool wg = t.requires_grad(ids[0]);
    for (std::size_t i = 1; i < ids.size(); ++i) {
      const Tensor& V = t.value(ids[i]);
      if (wg) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += g[k] * V[k];
        t.grad_buffer(ids[0])[i - 1] += s;
      }
      if (t.requires_grad(ids[i])) {
        auto gv = t.grad_buffer(ids[i]);
        for (std::size_t k = 0; k < d; ++k) gv[k] += W[i - 1] * g[k];
      }
    }
  });
}

// Sum of same-shaped tensors.
inline Var sum_of(std::span<const Var> vectors) {
  if (vectors.empty()) throw DimensionError("sum_of: no inputs");
  Tensor y(vectors[0].shape());
  std::vector<std::size_t> ids;
  for (Var v : vectors) {
    detail::require_same_shape(vectors[0], v, "sum_of");
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += v.value()[k];
    ids.push_back(v.id);
  }
  return vectors[0].tape->record(std::move(y), ids, [ids](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    for (std::size_t in : ids) {
      if (!t.requires_grad(in)) continue;
      auto gi = t.grad_buffer(in);
      for (std::size_t k = 0; k < g.size(); ++k) gi[k] += g[k];
    }
  });
}

// Mean pooling over a sequence of same-shaped vectors.
inline Var mean_of(std::span<const Var> vectors) {
  return scale(sum_of(vectors), 1.0 / static_cast<double>(vectors.size()));
}

// Binary cross-entropy -[y log p + (1-y) log(1-p)] for p in (0,1), y in [0,1].
inline Var binary_cross_entropy(Var p, double label) {
  if (p.size() != 1) throw DimensionError("binary_cross_entropy expects a scalar probability");
  double v = p.item();
  if (!(v > 0.0 && v < 1.0)) throw DomainError("binary_cross_entropy: probability outside (0,1): " + std::to_string(v));
  double loss = -(label * std::log(v) + (1.0 - label) * std::log1p(-v));
  return p.tape->record(Tensor::scalar(loss), {p.id}, [pi = p.id, label](Tape& t, std::size_t self) {
    double g = t.upstream(self)[0];
    double v = t.value(pi)[0];
    t.grad_buffer(pi)[0] += g * (-(label / v) + (1.0 - label) / (1.0 - v));
  });
}

// Categorical cross-entropy of logits against a target index.
inline Var cross_entropy(Var logits, std::size_t target) {
  if (target >= logits.size()) {
    throw DimensionError("cross_entropy: target " + std::to_string(target) + " out of range for " + shape_str(logits.shape()));
  }
  return scale(element(log_softmax(logits), target), -1.0);
}

// Contiguous run of `len` values starting at flat offset `begin`, as rank-1.
inline Var slice(Var a, std::size_t begin, std::size_t len) {
  if (begin + len > a.size()) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + len) + ") out of range for " +
                         shape_str(a.shape()));
  }
  const auto& v = a.value().values();
  Tensor y = Tensor::vector(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin),
                                                v.begin() + static_cast<std::ptrdiff_t>(begin + len)));
  return a.tape->record(std::move(y), {a.id}, [ai = a.id, begin](Tape& t, std::size_t self) {
    auto g = t.upstream(self);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[begin + k] += g[k];
  });
}

// Same value, no gradient: the result is a tape constant.
inline Var detach(Var a) { return a.tape->constant(a.value()); }

// log sum_i exp(a_i), stabilised by the maximum.
inline Var logsumexp(Var a) {
  detail::require_vector(a, "logsumexp");
  const auto& x = a.value().values();
  if (x.empty()) throw DomainError("logsumexp over an empty set");
  double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  return a.tape->record(Tensor::scalar(m + std::log(z)), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    double g = t.upstream(self)[0], l = t.value(self)[0];
    const Tensor& X = t.value(ai);
    auto ga = t.grad_buffer(ai);
    for (std::size_t k = 0; k < X.size(); ++k) ga[k] += g * std::exp(X[k] - l);
  });
}

}  // namespace gril::ops
