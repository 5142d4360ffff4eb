// Copyright 2026 The CNL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every Value produced during a forward pass in creation
// order, which is a topological order of the provenance graph. Backward walks
// the tape in reverse, so each node is visited once and only after all of its
// consumers have pushed their contributions into its gradient slot.
//
// The op set is deliberately narrow: exactly what the attention encoder, the
// edge scorer, the gated branches and the loss terms need. Broadcasting is
// limited to a [1 x c] row vector or an [r x 1] column vector on the right
// operand of the elementwise binary ops.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cnl/error.hpp"
#include "cnl/matrix.hpp"
#include "cnl/rng.hpp"

namespace cnl {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, size_t id) : tape_(tape), id_(id) {}

  const Matrix& data() const;
  const Matrix& grad() const;
  bool requires_grad() const;
  size_t rows() const { return data().rows(); }
  size_t cols() const { return data().cols(); }
  double item() const { return data()[0]; }

  Tape* tape() const { return tape_; }
  size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient of the node's output and pushes contributions into
  // the parents' gradient slots.
  using BackwardFn = std::function<void(const Matrix& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value Leaf(Matrix data, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(data), Matrix(), requires_grad, {}});
    return Value(this, nodes_.size() - 1);
  }
  Value Constant(Matrix data) { return Leaf(std::move(data), false); }

  // Records an op result. Gradient tracking is on iff any parent tracks it.
  Value Record(Matrix data, std::initializer_list<Value> parents, BackwardFn fn) {
    bool needs = false;
    for (const Value& p : parents) {
      if (p.tape() != this) throw UsageError("tensor-autodiff", "operand from another tape");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(data), Matrix(), needs, needs ? std::move(fn) : nullptr});
    return Value(this, nodes_.size() - 1);
  }

  const Matrix& data(size_t id) const { return nodes_[id].data; }
  // Empty until some consumer has pushed a gradient into the node.
  const Matrix& grad(size_t id) const { return nodes_[id].grad; }
  bool requires_grad(size_t id) const { return nodes_[id].requires_grad; }
  size_t size() const { return nodes_.size(); }

  // Gradient slot of a parent, allocated on first use; nullptr for constants.
  Matrix* GradSlot(size_t id) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty()) node.grad = Matrix(node.data.rows(), node.data.cols());
    return &node.grad;
  }

  // Accumulates d(loss)/d(node) into every tracked node. A second call
  // without ZeroGrad() is rejected.
  void Backward(Value loss) {
    if (loss.tape() != this) throw UsageError("tensor-autodiff", "loss from another tape");
    const Matrix& out = nodes_[loss.id()].data;
    if (out.rows() != 1 || out.cols() != 1) {
      throw UsageError("tensor-autodiff", "backward needs a scalar loss, got " + out.shape());
    }
    if (backward_done_) {
      throw UsageError("tensor-autodiff", "backward called twice without ZeroGrad()");
    }
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    GradSlot(loss.id())->data()[0] += 1.0;
    for (size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.backward || node.grad.empty()) continue;
      // Callbacks only write into parent slots (lower ids); no aliasing.
      node.backward(node.grad, *this);
    }
  }

  void ZeroGrad() {
    for (Node& node : nodes_) node.grad = Matrix();
    backward_done_ = false;
  }

 private:
  struct Node {
    Matrix data;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Matrix& Value::data() const { return tape_->data(id_); }
inline const Matrix& Value::grad() const { return tape_->grad(id_); }
inline bool Value::requires_grad() const { return tape_->requires_grad(id_); }

namespace ad {
namespace internal {

inline void Fail(const std::string& op, const Matrix& a, const Matrix& b) {
  throw UsageError("tensor-autodiff", op + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

enum class Broadcast { kNone, kRow, kColumn };

// Right operand may be same-shape, a [1 x c] row or an [r x 1] column.
inline Broadcast Classify(const std::string& op, const Matrix& a, const Matrix& b) {
  if (a.SameShape(b)) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kColumn;
  Fail(op, a, b);
  return Broadcast::kNone;
}

inline size_t BroadcastIndex(Broadcast mode, size_t r, size_t c, size_t cols) {
  switch (mode) {
    case Broadcast::kRow: return c;
    case Broadcast::kColumn: return r;
    default: return r * cols + c;
  }
}

template <typename F>
Matrix Map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Elementwise unary op with derivative expressed through (input, output).
template <typename Fwd, typename Deriv>
Value Unary(Value a, Fwd fwd, Deriv deriv) {
  Tape& tape = *a.tape();
  Matrix out = Map(a.data(), fwd);
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a},
                     [ia, deriv, id = tape.size()](const Matrix& g, Tape& t) {
                       Matrix* ga = t.GradSlot(ia);
                       if (!ga) return;
                       const Matrix& x = t.data(ia);
                       const Matrix& y = t.data(id);
                       for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(x[i], y[i]);
                     });
}

}  // namespace internal

inline Value MatMul(Value a, Value b) {
  Tape& tape = *a.tape();
  if (a.cols() != b.rows()) internal::Fail("matmul", a.data(), b.data());
  const size_t ia = a.id(), ib = b.id();
  return tape.Record(cnl::MatMul(a.data(), b.data()), {a, b},
                     [ia, ib](const Matrix& g, Tape& t) {
                       if (Matrix* ga = t.GradSlot(ia)) {
                         Matrix d = MatMulTransB(g, t.data(ib));
                         for (size_t i = 0; i < d.size(); ++i) (*ga)[i] += d[i];
                       }
                       if (Matrix* gb = t.GradSlot(ib)) {
                         Matrix d = MatMulTransA(t.data(ia), g);
                         for (size_t i = 0; i < d.size(); ++i) (*gb)[i] += d[i];
                       }
                     });
}

namespace internal {

inline Value AddSub(Value a, Value b, double sign, const char* name) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  const Broadcast mode = Classify(name, x, y);
  Matrix out(x.rows(), x.cols());
  for (size_t r = 0; r < x.rows(); ++r)
    for (size_t c = 0; c < x.cols(); ++c)
      out(r, c) = x(r, c) + sign * y[BroadcastIndex(mode, r, c, x.cols())];
  const size_t ia = a.id(), ib = b.id();
  return tape.Record(std::move(out), {a, b}, [ia, ib, mode, sign](const Matrix& g, Tape& t) {
    if (Matrix* ga = t.GradSlot(ia))
      for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Matrix* gb = t.GradSlot(ib)) {
      for (size_t r = 0; r < g.rows(); ++r)
        for (size_t c = 0; c < g.cols(); ++c)
          (*gb)[BroadcastIndex(mode, r, c, g.cols())] += sign * g(r, c);
    }
  });
}

}  // namespace internal

inline Value Add(Value a, Value b) { return internal::AddSub(a, b, 1.0, "add"); }
inline Value Sub(Value a, Value b) { return internal::AddSub(a, b, -1.0, "sub"); }

inline Value Hadamard(Value a, Value b) {
  using internal::BroadcastIndex;
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  const auto mode = internal::Classify("hadamard", x, y);
  Matrix out(x.rows(), x.cols());
  for (size_t r = 0; r < x.rows(); ++r)
    for (size_t c = 0; c < x.cols(); ++c)
      out(r, c) = x(r, c) * y[BroadcastIndex(mode, r, c, x.cols())];
  const size_t ia = a.id(), ib = b.id();
  return tape.Record(std::move(out), {a, b}, [ia, ib, mode](const Matrix& g, Tape& t) {
    const Matrix& x = t.data(ia);
    const Matrix& y = t.data(ib);
    Matrix* ga = t.GradSlot(ia);
    Matrix* gb = t.GradSlot(ib);
    for (size_t r = 0; r < g.rows(); ++r) {
      for (size_t c = 0; c < g.cols(); ++c) {
        const size_t j = BroadcastIndex(mode, r, c, g.cols());
        if (ga) (*ga)(r, c) += g(r, c) * y[j];
        if (gb) (*gb)[j] += g(r, c) * x(r, c);
      }
    }
  });
}

inline Value Scale(Value a, double s) {
  return internal::Unary(a, [s](double x) { return s * x; },
                         [s](double, double) { return s; });
}

inline Value ConcatCols(Value a, Value b) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  if (x.rows() != y.rows()) internal::Fail("concat_cols", x, y);
  Matrix out(x.rows(), x.cols() + y.cols());
  for (size_t r = 0; r < x.rows(); ++r) {
    for (size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c);
    for (size_t c = 0; c < y.cols(); ++c) out(r, x.cols() + c) = y(r, c);
  }
  const size_t ia = a.id(), ib = b.id(), split = x.cols();
  return tape.Record(std::move(out), {a, b}, [ia, ib, split](const Matrix& g, Tape& t) {
    Matrix* ga = t.GradSlot(ia);
    Matrix* gb = t.GradSlot(ib);
    for (size_t r = 0; r < g.rows(); ++r) {
      for (size_t c = 0; c < g.cols(); ++c) {
        if (c < split) {
          if (ga) (*ga)(r, c) += g(r, c);
        } else if (gb) {
          (*gb)(r, c - split) += g(r, c);
        }
      }
    }
  });
}

// Stacks b below a.
inline Value ConcatRows(Value a, Value b) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  if (x.cols() != y.cols()) internal::Fail("concat_rows", x, y);
  Matrix out(x.rows() + y.rows(), x.cols());
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  std::copy(y.data().begin(), y.data().end(), out.data().begin() + static_cast<long>(x.size()));
  const size_t ia = a.id(), ib = b.id(), split = x.size();
  return tape.Record(std::move(out), {a, b}, [ia, ib, split](const Matrix& g, Tape& t) {
    if (Matrix* ga = t.GradSlot(ia))
      for (size_t i = 0; i < split; ++i) (*ga)[i] += g[i];
    if (Matrix* gb = t.GradSlot(ib))
      for (size_t i = split; i < g.size(); ++i) (*gb)[i - split] += g[i];
  });
}

// Gathers rows: out[i] = a[indices[i]]. Repeated indices accumulate gradient.
inline Value RowSelect(Value a, std::vector<size_t> indices) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  Matrix out(indices.size(), x.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) {
      throw UsageError("tensor-autodiff", "row_select: index " + std::to_string(indices[i]) +
                                              " >= rows " + std::to_string(x.rows()));
    }
    auto src = x.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a},
                     [ia, idx = std::move(indices)](const Matrix& g, Tape& t) {
                       Matrix* ga = t.GradSlot(ia);
                       if (!ga) return;
                       for (size_t i = 0; i < idx.size(); ++i) {
                         auto dst = ga->row(idx[i]);
                         auto src = g.row(i);
                         for (size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                       }
                     });
}

inline Value Transpose(Value a) {
  Tape& tape = *a.tape();
  const size_t ia = a.id();
  return tape.Record(cnl::Transpose(a.data()), {a}, [ia](const Matrix& g, Tape& t) {
    Matrix* ga = t.GradSlot(ia);
    if (!ga) return;
    for (size_t r = 0; r < g.rows(); ++r)
      for (size_t c = 0; c < g.cols(); ++c) (*ga)(c, r) += g(r, c);
  });
}

inline Value LeakyRelu(Value a, double slope = 0.2) {
  return internal::Unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                         [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Value Elu(Value a) {
  return internal::Unary(a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                         [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Value Sigmoid(Value a) {
  return internal::Unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Value Tanh(Value a) {
  return internal::Unary(a, [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Value Square(Value a) {
  return internal::Unary(a, [](double x) { return x * x; },
                         [](double x, double) { return 2.0 * x; });
}

// Inverted dropout: kept entries are scaled by 1/(1-p); the gradient flows
// through the same retained mask.
inline Value Dropout(Value a, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw UsageError("tensor-autodiff", "dropout p must lie in [0,1), got " + std::to_string(p));
  }
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  Matrix mask(x.rows(), x.cols(), 1.0);
  if (p > 0.0) {
    const double keep_scale = 1.0 / (1.0 - p);
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.Uniform() < p ? 0.0 : keep_scale;
  }
  Matrix out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a}, [ia, m = std::move(mask)](const Matrix& g, Tape& t) {
    if (Matrix* ga = t.GradSlot(ia))
      for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * m[i];
  });
}

// Additive N(0, sigma^2) noise; identity Jacobian.
inline Value GaussianNoise(Value a, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) {
    throw UsageError("tensor-autodiff", "noise sigma must be >= 0, got " + std::to_string(sigma));
  }
  Tape& tape = *a.tape();
  Matrix out = a.data();
  if (sigma > 0.0)
    for (size_t i = 0; i < out.size(); ++i) out[i] += sigma * rng.Normal();
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a}, [ia](const Matrix& g, Tape& t) {
    if (Matrix* ga = t.GradSlot(ia))
      for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

inline Value ReduceSum(Value a) {
  Tape& tape = *a.tape();
  double total = 0.0;
  for (double v : a.data().data()) total += v;
  const size_t ia = a.id();
  return tape.Record(Matrix(1, 1, total), {a}, [ia](const Matrix& g, Tape& t) {
    if (Matrix* ga = t.GradSlot(ia))
      for (size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0];
  });
}

inline Value ReduceMean(Value a) {
  const size_t n = a.data().size();
  if (n == 0) throw UsageError("tensor-autodiff", "reduce_mean of empty matrix");
  return Scale(ReduceSum(a), 1.0 / static_cast<double>(n));
}

// Row-wise sum: [r x c] -> [r x 1].
inline Value SumCols(Value a) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  Matrix out(x.rows(), 1);
  for (size_t r = 0; r < x.rows(); ++r)
    for (double v : x.row(r)) out[r] += v;
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a}, [ia](const Matrix& g, Tape& t) {
    Matrix* ga = t.GradSlot(ia);
    if (!ga) return;
    for (size_t r = 0; r < ga->rows(); ++r)
      for (double& v : ga->row(r)) v += g[r];
  });
}

// Euclidean norm of each row: [r x c] -> [r x 1]. Zero rows get zero gradient.
inline Value L2NormRows(Value a) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  Matrix out(x.rows(), 1);
  for (size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    out[r] = std::sqrt(s);
  }
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a}, [ia, id = tape.size()](const Matrix& g, Tape& t) {
    Matrix* ga = t.GradSlot(ia);
    if (!ga) return;
    const Matrix& x = t.data(ia);
    const Matrix& norms = t.data(id);
    for (size_t r = 0; r < x.rows(); ++r) {
      if (norms[r] == 0.0) continue;
      const double k = g[r] / norms[r];
      auto src = x.row(r);
      auto dst = ga->row(r);
      for (size_t c = 0; c < src.size(); ++c) dst[c] += k * src[c];
    }
  });
}

/// Softmax of edge logits within each group of edges sharing a target node.
/// logits: [E x 1]; targets[e] < num_nodes. Max-subtracted per group.
inline Value SegmentSoftmax(Value logits, std::span<const uint32_t> targets, size_t num_nodes) {
  Tape& tape = *logits.tape();
  const Matrix& s = logits.data();
  if (s.cols() != 1 || s.rows() != targets.size()) {
    throw UsageError("tensor-autodiff", "segment_softmax: logits " + s.shape() + " vs " +
                                            std::to_string(targets.size()) + " targets");
  }
  const size_t num_edges = targets.size();
  std::vector<double> group_max(num_nodes, -std::numeric_limits<double>::infinity());
  for (size_t e = 0; e < num_edges; ++e) {
    if (targets[e] >= num_nodes) {
      throw UsageError("tensor-autodiff", "segment_softmax: target " + std::to_string(targets[e]) +
                                              " >= " + std::to_string(num_nodes));
    }
    group_max[targets[e]] = std::max(group_max[targets[e]], s[e]);
  }
  Matrix out(num_edges, 1);
  std::vector<double> denom(num_nodes, 0.0);
  for (size_t e = 0; e < num_edges; ++e) {
    out[e] = std::exp(s[e] - group_max[targets[e]]);
    denom[targets[e]] += out[e];
  }
  for (size_t e = 0; e < num_edges; ++e) out[e] /= denom[targets[e]];
  const size_t il = logits.id();
  std::vector<uint32_t> tgt(targets.begin(), targets.end());
  return tape.Record(std::move(out), {logits},
                     [il, num_nodes, tgt = std::move(tgt), id = tape.size()](const Matrix& g,
                                                                             Tape& t) {
                       Matrix* gl = t.GradSlot(il);
                       if (!gl) return;
                       const Matrix& y = t.data(id);
                       std::vector<double> dot(num_nodes, 0.0);
                       for (size_t e = 0; e < tgt.size(); ++e) dot[tgt[e]] += g[e] * y[e];
                       for (size_t e = 0; e < tgt.size(); ++e)
                         (*gl)[e] += y[e] * (g[e] - dot[tgt[e]]);
                     });
}

/// out[t] = sum of message rows whose target is t; [E x d] -> [num_nodes x d].
inline Value ScatterSum(Value messages, std::span<const uint32_t> targets, size_t num_nodes) {
  Tape& tape = *messages.tape();
  const Matrix& m = messages.data();
  if (m.rows() != targets.size()) {
    throw UsageError("tensor-autodiff", "scatter_sum: messages " + m.shape() + " vs " +
                                            std::to_string(targets.size()) + " targets");
  }
  Matrix out(num_nodes, m.cols());
  for (size_t e = 0; e < targets.size(); ++e) {
    if (targets[e] >= num_nodes) {
      throw UsageError("tensor-autodiff", "scatter_sum: target " + std::to_string(targets[e]) +
                                              " >= " + std::to_string(num_nodes));
    }
    auto dst = out.row(targets[e]);
    auto src = m.row(e);
    for (size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  const size_t im = messages.id();
  std::vector<uint32_t> tgt(targets.begin(), targets.end());
  return tape.Record(std::move(out), {messages},
                     [im, tgt = std::move(tgt)](const Matrix& g, Tape& t) {
                       Matrix* gm = t.GradSlot(im);
                       if (!gm) return;
                       for (size_t e = 0; e < tgt.size(); ++e) {
                         auto src = g.row(tgt[e]);
                         auto dst = gm->row(e);
                         for (size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                       }
                     });
}

// Row-wise log-softmax.
inline Value LogSoftmaxRows(Value a) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  Matrix out(x.rows(), x.cols());
  for (size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (size_t c = 0; c < row.size(); ++c) out(r, c) = row[c] - lse;
  }
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a}, [ia, id = tape.size()](const Matrix& g, Tape& t) {
    Matrix* ga = t.GradSlot(ia);
    if (!ga) return;
    const Matrix& y = t.data(id);
    for (size_t r = 0; r < g.rows(); ++r) {
      double gs = 0.0;
      for (double v : g.row(r)) gs += v;
      for (size_t c = 0; c < g.cols(); ++c) (*ga)(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

// Row-wise softmax.
inline Value SoftmaxRows(Value a) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  Matrix out(x.rows(), x.cols());
  for (size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (size_t c = 0; c < row.size(); ++c) z += (out(r, c) = std::exp(row[c] - mx));
    for (size_t c = 0; c < row.size(); ++c) out(r, c) /= z;
  }
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a}, [ia, id = tape.size()](const Matrix& g, Tape& t) {
    Matrix* ga = t.GradSlot(ia);
    if (!ga) return;
    const Matrix& y = t.data(id);
    for (size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
      for (size_t c = 0; c < g.cols(); ++c) (*ga)(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

// out[r] = a[r, columns[r]]; [r x c] -> [r x 1].
inline Value GatherCols(Value a, std::vector<size_t> columns) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  if (columns.size() != x.rows()) {
    throw UsageError("tensor-autodiff", "gather_cols: " + std::to_string(columns.size()) +
                                            " indices for " + x.shape());
  }
  Matrix out(x.rows(), 1);
  for (size_t r = 0; r < x.rows(); ++r) {
    if (columns[r] >= x.cols()) throw UsageError("tensor-autodiff", "gather_cols: bad column");
    out[r] = x(r, columns[r]);
  }
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a}, [ia, cols = std::move(columns)](const Matrix& g,
                                                                          Tape& t) {
    if (Matrix* ga = t.GradSlot(ia))
      for (size_t r = 0; r < cols.size(); ++r) (*ga)(r, cols[r]) += g[r];
  });
}

/// Squared cosine similarity per row pair: [r x c], [r x c] -> [r x 1].
/// Rows where either side is the zero vector contribute 0 (and no gradient).
inline Value CosineSqRows(Value a, Value b) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  if (!x.SameShape(y)) internal::Fail("cosine_sq_rows", x, y);
  Matrix out(x.rows(), 1);
  for (size_t r = 0; r < x.rows(); ++r) {
    double dot = 0, nx = 0, ny = 0;
    for (size_t c = 0; c < x.cols(); ++c) {
      dot += x(r, c) * y(r, c);
      nx += x(r, c) * x(r, c);
      ny += y(r, c) * y(r, c);
    }
    out[r] = (nx == 0.0 || ny == 0.0) ? 0.0 : dot * dot / (nx * ny);
  }
  const size_t ia = a.id(), ib = b.id();
  return tape.Record(std::move(out), {a, b}, [ia, ib](const Matrix& g, Tape& t) {
    const Matrix& x = t.data(ia);
    const Matrix& y = t.data(ib);
    Matrix* ga = t.GradSlot(ia);
    Matrix* gb = t.GradSlot(ib);
    for (size_t r = 0; r < x.rows(); ++r) {
      double dot = 0, nx = 0, ny = 0;
      for (size_t c = 0; c < x.cols(); ++c) {
        dot += x(r, c) * y(r, c);
        nx += x(r, c) * x(r, c);
        ny += y(r, c) * y(r, c);
      }
      if (nx == 0.0 || ny == 0.0) continue;
      // f = dot^2 / (nx ny); df/dx = 2 dot y/(nx ny) - 2 dot^2 x/(nx^2 ny).
      const double base = g[r] * 2.0 * dot / (nx * ny);
      for (size_t c = 0; c < x.cols(); ++c) {
        if (ga) (*ga)(r, c) += base * (y(r, c) - dot * x(r, c) / nx);
        if (gb) (*gb)(r, c) += base * (x(r, c) - dot * y(r, c) / ny);
      }
    }
  });
}

/// Column standardization z = (x - mean) / sqrt(var + eps), population
/// variance over rows.
inline Value StandardizeCols(Value a, double eps = 1e-8) {
  Tape& tape = *a.tape();
  const Matrix& x = a.data();
  const size_t n = x.rows(), d = x.cols();
  if (n == 0) throw UsageError("tensor-autodiff", "standardize_cols of empty matrix");
  std::vector<double> inv_std(d);
  Matrix out(n, d);
  for (size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (size_t r = 0; r < n; ++r) mean += x(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t r = 0; r < n; ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(n);
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (size_t r = 0; r < n; ++r) out(r, c) = (x(r, c) - mean) * inv_std[c];
  }
  const size_t ia = a.id();
  return tape.Record(std::move(out), {a},
                     [ia, inv = std::move(inv_std), id = tape.size()](const Matrix& g, Tape& t) {
                       Matrix* ga = t.GradSlot(ia);
                       if (!ga) return;
                       const Matrix& z = t.data(id);
                       const size_t n = z.rows();
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (size_t c = 0; c < z.cols(); ++c) {
                         double sum_g = 0.0, sum_gz = 0.0;
                         for (size_t r = 0; r < n; ++r) {
                           sum_g += g(r, c);
                           sum_gz += g(r, c) * z(r, c);
                         }
                         for (size_t r = 0; r < n; ++r) {
                           (*ga)(r, c) += inv[c] * (g(r, c) - inv_n * sum_g -
                                                    inv_n * z(r, c) * sum_gz);
                         }
                       }
                     });
}

}  // namespace ad

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One bias-corrected Adam update over a list of tensors.
inline void AdamStep(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                     AdamState& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) {
    throw UsageError("tensor-autodiff", "adam: lr must be > 0, got " + std::to_string(cfg.lr));
  }
  if (params.size() != grads.size()) {
    throw UsageError("tensor-autodiff", "adam: params/grads count mismatch");
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) {
    throw UsageError("tensor-autodiff", "adam: state does not match parameter list");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = *grads[k];
    if (!p.SameShape(g) || !p.SameShape(state.m[k])) {
      throw UsageError("tensor-autodiff", "adam: shape mismatch at tensor " + std::to_string(k));
    }
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace cnl
