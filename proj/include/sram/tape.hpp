#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation as a node holding its value and a closure
// that pushes the node's incoming gradient back to its inputs. Nodes are
// appended in topological order, so the backward sweep is a single reverse
// pass that visits each node once. Every operand is 2-d; vectors are 1 x n rows
// and scalars are 1 x 1.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sram/errors.hpp"
#include "sram/tensor.hpp"

namespace sram {

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  using MatrixType = MatrixX<Scalar>;

  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const MatrixType& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool needs_grad() const { return tape_->needs_grad(id_); }
  Scalar scalar() const { return value()(0, 0); }

  Tape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using MatrixType = MatrixX<Scalar>;
  using Backward = std::function<void(Tape&, const MatrixType&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(MatrixType value) { return push(std::move(value), nullptr, false, {}); }
  Var<Scalar> variable(MatrixType value) { return push(std::move(value), nullptr, true, {}); }

  // Leaf that reads `ref` in place; `ref` must outlive the tape.
  Var<Scalar> external(const MatrixType& ref, bool needs_grad) {
    return push(MatrixType(), &ref, needs_grad, {});
  }

  // Records an operation. The closure is dropped when no input needs a gradient.
  Var<Scalar> record(MatrixType value, std::initializer_list<Var<Scalar>> inputs, Backward fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || needs_grad(v.id());
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : Backward{});
  }

  Var<Scalar> record(MatrixType value, const std::vector<Var<Scalar>>& inputs, Backward fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || needs_grad(v.id());
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : Backward{});
  }

  const MatrixType& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `g` into the gradient of node `id` when that node needs one.
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }
  void accumulate(const Var<Scalar>& v, const auto& g) { accumulate(v.id(), g); }

  // Gradient accumulated at `v` by the last backward(); nullptr if none reached it.
  const MatrixType* grad(const Var<Scalar>& v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.size() ? &n.grad : nullptr;
  }

  void backward(const Var<Scalar>& loss) {
    if (loss.tape() != this) throw UsageError("loss belongs to a different tape");
    const MatrixType& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1)
      throw DimensionError("backward requires a scalar loss, got " + std::to_string(lv.rows()) +
                           "x" + std::to_string(lv.cols()));
    if (!std::isfinite(static_cast<double>(lv(0, 0))))
      throw NumericError("non-finite loss value");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id()].needs_grad) return;
    nodes_[loss.id()].grad = MatrixType::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.backward && n.grad.size() && !all_finite(n.grad))
        throw NumericError("non-finite gradient at tape leaf " + std::to_string(i));
    }
  }

 private:
  struct Node {
    MatrixType value;
    const MatrixType* external = nullptr;
    MatrixType grad;
    Backward backward;
    bool needs_grad = false;
  };

  Var<Scalar> push(MatrixType value, const MatrixType* ext, bool needs, Backward fn) {
    nodes_.push_back(Node{std::move(value), ext, MatrixType(), std::move(fn), needs});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

// Exposes a ParamStore as tape leaves, creating each leaf on first use.
template <typename Scalar>
class ParamBinding {
 public:
  ParamBinding(Tape<Scalar>& tape, const BasicParamStore<Scalar>& store, bool requires_grad = true)
      : tape_(&tape), store_(&store), requires_grad_(requires_grad) {}

  Var<Scalar> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var<Scalar> v = tape_->external(store_->at(name).matrix(), requires_grad_);
    bound_.emplace(name, v);
    return v;
  }

  Tape<Scalar>& tape() const { return *tape_; }
  const BasicParamStore<Scalar>& store() const { return *store_; }

  // Gradient for every stored parameter; zero where the loss does not depend on it.
  std::map<std::string, MatrixX<Scalar>> gradients() const {
    std::map<std::string, MatrixX<Scalar>> out;
    for (const auto& [name, t] : *store_) {
      auto it = bound_.find(name);
      const MatrixX<Scalar>* g = it == bound_.end() ? nullptr : tape_->grad(it->second);
      out.emplace(name, g ? *g : MatrixX<Scalar>::Zero(t.matrix().rows(), t.matrix().cols()));
    }
    return out;
  }

 private:
  Tape<Scalar>* tape_;
  const BasicParamStore<Scalar>* store_;
  bool requires_grad_;
  std::map<std::string, Var<Scalar>> bound_;
};

// Runs the backward sweep and returns d loss / d param for every entry.
template <typename Scalar>
std::map<std::string, MatrixX<Scalar>> backward(const Var<Scalar>& loss, const ParamBinding<Scalar>& params) {
  loss.tape()->backward(loss);
  return params.gradients();
}

namespace detail {

inline void require_same_shape(const auto& a, const auto& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
  auto& t = *a.tape();
  MatrixX<Scalar> out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    if (a.needs_grad()) tp.accumulate(a, g * b.value().transpose());
    if (b.needs_grad()) tp.accumulate(b, a.value().transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [a](Tape<Scalar>& tp, const MatrixX<Scalar>& g) { tp.accumulate(a, g.transpose()); });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return a.tape()->record(a.value() * s, {a},
                          [a, s](Tape<Scalar>& tp, const MatrixX<Scalar>& g) { tp.accumulate(a, g * s); });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a) {
  return scale(a, Scalar(-1));
}

// a + 1 * row, broadcasting a 1 x n row over every row of a.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row: bias must be 1x" + std::to_string(a.cols()));
  MatrixX<Scalar> out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    tp.accumulate(a, g);
    if (row.needs_grad()) tp.accumulate(row, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  MatrixX<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape()->record(std::move(out), {a}, [a](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    // Subgradient at exactly 0 is 0.
    tp.accumulate(a, (a.value().array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  MatrixX<Scalar> out = a.value().unaryExpr([](Scalar x) {
    return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
  });
  auto y = std::make_shared<const MatrixX<Scalar>>(out);
  return a.tape()->record(std::move(out), {a}, [a, y](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    tp.accumulate(a, (g.array() * y->array() * (Scalar(1) - y->array())).matrix());
  });
}

// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows_value(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = x;
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  MatrixX<Scalar> y = softmax_rows_value(a.value());
  auto& t = *a.tape();
  auto y_shared = std::make_shared<const MatrixX<Scalar>>(y);
  return t.record(std::move(y), {a}, [a, y_shared](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    const MatrixX<Scalar>& y = *y_shared;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (g.array() * y.array()).rowwise().sum();
    tp.accumulate(a, (y.array() * (g.colwise() - dots).array()).matrix());
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    tp.accumulate(a, MatrixX<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> squared_norm(const Var<Scalar>& a) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape()->record(std::move(out), {a}, [a](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    tp.accumulate(a, a.value() * (Scalar(2) * g(0, 0)));
  });
}

// Mean over rows of the squared L2 distance between corresponding rows:
// (1/m) sum_r ||a_r - b_r||^2. Callers apply any further normalization.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.value(), b.value(), "mse");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(std::max<Index>(a.rows(), 1));
  MatrixX<Scalar> diff = a.value() - b.value();
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  auto d = std::make_shared<const MatrixX<Scalar>>(std::move(diff));
  return a.tape()->record(std::move(out), {a, b}, [a, b, d, inv](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    const Scalar k = Scalar(2) * inv * g(0, 0);
    tp.accumulate(a, *d * k);
    tp.accumulate(b, *d * -k);
  });
}

// Column-wise max over rows (1 x cols). Ties route the gradient to the first row.
template <typename Scalar>
Var<Scalar> colmax(const Var<Scalar>& a) {
  if (a.rows() < 1) throw DimensionError("colmax: empty input");
  const auto& v = a.value();
  std::vector<Index> arg(static_cast<std::size_t>(v.cols()));
  MatrixX<Scalar> out(1, v.cols());
  for (Index c = 0; c < v.cols(); ++c) {
    Index best = 0;
    for (Index r = 1; r < v.rows(); ++r)
      if (v(r, c) > v(best, c)) best = r;
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = v(best, c);
  }
  return a.tape()->record(std::move(out), {a}, [a, arg](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    MatrixX<Scalar> da = MatrixX<Scalar>::Zero(a.rows(), a.cols());
    for (Index c = 0; c < da.cols(); ++c) da(arg[static_cast<std::size_t>(c)], c) = g(0, c);
    tp.accumulate(a, da);
  });
}

template <typename Scalar>
Var<Scalar> row_block(const Var<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw DimensionError("row_block: rows [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") out of range for " + std::to_string(a.rows()));
  MatrixX<Scalar> out = a.value().middleRows(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    MatrixX<Scalar> da = MatrixX<Scalar>::Zero(a.rows(), a.cols());
    da.middleRows(start, count) = g;
    tp.accumulate(a, da);
  });
}

template <typename Scalar>
Var<Scalar> pick(const Var<Scalar>& a, Index r, Index c) {
  if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) throw DimensionError("pick: index out of range");
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value()(r, c);
  return a.tape()->record(std::move(out), {a}, [a, r, c](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    MatrixX<Scalar> da = MatrixX<Scalar>::Zero(a.rows(), a.cols());
    da(r, c) = g(0, 0);
    tp.accumulate(a, da);
  });
}

// Elementwise log(clamp(x, lo, hi)); zero gradient where the clamp is active.
template <typename Scalar>
Var<Scalar> log_clamped(const Var<Scalar>& a, Scalar lo, Scalar hi) {
  MatrixX<Scalar> out = a.value().unaryExpr([lo, hi](Scalar x) { return std::log(std::clamp(x, lo, hi)); });
  return a.tape()->record(std::move(out), {a}, [a, lo, hi](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    MatrixX<Scalar> da = a.value().binaryExpr(g, [lo, hi](Scalar x, Scalar gi) {
      return (x > lo && x < hi) ? gi / x : Scalar(0);
    });
    tp.accumulate(a, da);
  });
}

template <typename Scalar>
Var<Scalar> add_n(const std::vector<Var<Scalar>>& xs) {
  if (xs.empty()) throw DimensionError("add_n: empty input");
  MatrixX<Scalar> out = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    detail::require_same_shape(out, xs[i].value(), "add_n");
    out += xs[i].value();
  }
  return xs.front().tape()->record(std::move(out), xs, [xs](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    for (const auto& x : xs) tp.accumulate(x, g);
  });
}

template <typename Scalar>
Var<Scalar> mean_n(const std::vector<Var<Scalar>>& xs) {
  return scale(add_n(xs), Scalar(1) / static_cast<Scalar>(xs.size()));
}

template <typename Scalar>
Var<Scalar> vstack(const std::vector<Var<Scalar>>& xs) {
  if (xs.empty()) throw DimensionError("vstack: empty input");
  Index rows = 0;
  const Index cols = xs.front().cols();
  for (const auto& x : xs) {
    if (x.cols() != cols) throw DimensionError("vstack: column mismatch");
    rows += x.rows();
  }
  MatrixX<Scalar> out(rows, cols);
  Index r = 0;
  for (const auto& x : xs) {
    out.middleRows(r, x.rows()) = x.value();
    r += x.rows();
  }
  return xs.front().tape()->record(std::move(out), xs, [xs](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    Index r0 = 0;
    for (const auto& x : xs) {
      if (x.needs_grad()) tp.accumulate(x, g.middleRows(r0, x.rows()));
      r0 += x.rows();
    }
  });
}

// --- frame-stacked sequences --------------------------------------------
// A sequence of t frames of n agents is stored as a (t*n) x c matrix with
// frame f occupying rows [f*n, (f+1)*n).

// Left-multiplies each n-row frame block by its own constant n x n matrix.
template <typename Scalar>
Var<Scalar> block_left_mul(const std::vector<MatrixX<Scalar>>& blocks, const Var<Scalar>& a) {
  if (blocks.empty()) throw DimensionError("block_left_mul: no blocks");
  const Index n = blocks.front().rows();
  if (static_cast<Index>(blocks.size()) * n != a.rows())
    throw DimensionError("block_left_mul: " + std::to_string(blocks.size()) + " blocks of " + std::to_string(n) +
                         " rows do not cover " + std::to_string(a.rows()) + " rows");
  MatrixX<Scalar> out(a.rows(), a.cols());
  for (std::size_t f = 0; f < blocks.size(); ++f)
    out.middleRows(static_cast<Index>(f) * n, n).noalias() = blocks[f] * a.value().middleRows(static_cast<Index>(f) * n, n);
  auto shared = std::make_shared<const std::vector<MatrixX<Scalar>>>(blocks);
  return a.tape()->record(std::move(out), {a}, [a, shared, n](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    MatrixX<Scalar> da(g.rows(), g.cols());
    for (std::size_t f = 0; f < shared->size(); ++f)
      da.middleRows(static_cast<Index>(f) * n, n).noalias() =
          (*shared)[f].transpose() * g.middleRows(static_cast<Index>(f) * n, n);
    tp.accumulate(a, da);
  });
}

// [prev | cur | next] per frame with zero padding at both ends: (t*n) x 3c.
template <typename Scalar>
Var<Scalar> temporal_stack(const Var<Scalar>& a, Index n) {
  const Index rows = a.rows(), c = a.cols();
  if (n <= 0 || rows % n != 0) throw DimensionError("temporal_stack: rows not a multiple of agents");
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(rows, 3 * c);
  const auto& v = a.value();
  if (rows > n) {
    out.block(n, 0, rows - n, c) = v.topRows(rows - n);
    out.block(0, 2 * c, rows - n, c) = v.bottomRows(rows - n);
  }
  out.block(0, c, rows, c) = v;
  return a.tape()->record(std::move(out), {a}, [a, n, rows, c](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    MatrixX<Scalar> da = g.block(0, c, rows, c);
    if (rows > n) {
      da.topRows(rows - n) += g.block(n, 0, rows - n, c);
      da.bottomRows(rows - n) += g.block(0, 2 * c, rows - n, c);
    }
    tp.accumulate(a, da);
  });
}

// Mean over frames: (t*n) x c -> n x c.
template <typename Scalar>
Var<Scalar> frame_mean(const Var<Scalar>& a, Index n) {
  const Index rows = a.rows();
  if (n <= 0 || rows % n != 0 || rows == 0) throw DimensionError("frame_mean: rows not a multiple of agents");
  const Index t = rows / n;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(n, a.cols());
  for (Index f = 0; f < t; ++f) out += a.value().middleRows(f * n, n);
  out /= static_cast<Scalar>(t);
  return a.tape()->record(std::move(out), {a}, [a, n, t](Tape<Scalar>& tp, const MatrixX<Scalar>& g) {
    MatrixX<Scalar> da(a.rows(), a.cols());
    const MatrixX<Scalar> share = g / static_cast<Scalar>(t);
    for (Index f = 0; f < t; ++f) da.middleRows(f * n, n) = share;
    tp.accumulate(a, da);
  });
}

}  // namespace sram
