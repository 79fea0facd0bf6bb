#pragma once

// Pairwise relation graphs between agents of one frame (or one decoding
// stage). Both graphs are N x N and row-stochastic:
//
//   action:   G(i,j) = exp(x_i . x_j) / sum_j exp(x_i . x_j)      (self included)
//   position: G(i,j) = w_ij / sum_{j != i} w_ij,  w_ij = 1 / (|b_i - b_j| + eps),
//             G(i,i) = 0; a single agent gets [[1]].

#include <Eigen/Dense>

#include <cmath>
#include <memory>

#include "sram/errors.hpp"
#include "sram/tape.hpp"

namespace sram {

inline constexpr double kDefaultGraphEpsilon = 1e-3;

template <typename G>
struct BasicRelationGraphs {
  G action;
  G position;
  Index n_agents = 0;
};

using RelationGraphs = BasicRelationGraphs<Matrix>;

template <typename Derived>
MatrixX<typename Derived::Scalar> action_graph(const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() < 1 || x.cols() < 1) throw DimensionError("action_graph: need N >= 1 and D >= 1");
  if (!all_finite(x)) throw NumericError("action_graph: non-finite features");
  return softmax_rows_value(x * x.transpose());
}

// Symmetric inverse-distance weights with a zero diagonal (before row normalization).
template <typename Derived>
MatrixX<typename Derived::Scalar> position_weights(const Eigen::MatrixBase<Derived>& b,
                                                   typename Derived::Scalar epsilon) {
  using Scalar = typename Derived::Scalar;
  if (b.cols() != 2) throw DimensionError("position graph expects N x 2 positions");
  if (!all_finite(b)) throw NumericError("position_graph: non-finite positions");
  const Index n = b.rows();
  MatrixX<Scalar> w = MatrixX<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const Scalar d = (b.row(i) - b.row(j)).norm();
      w(i, j) = w(j, i) = Scalar(1) / (d + epsilon);
    }
  return w;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> position_graph(const Eigen::MatrixBase<Derived>& b,
                                                 typename Derived::Scalar epsilon = kDefaultGraphEpsilon) {
  using Scalar = typename Derived::Scalar;
  if (b.rows() < 1) throw DimensionError("position_graph: need N >= 1");
  if (b.rows() == 1) {
    if (!all_finite(b)) throw NumericError("position_graph: non-finite positions");
    return MatrixX<Scalar>::Ones(1, 1);
  }
  MatrixX<Scalar> w = position_weights(b, epsilon);
  return w.array().colwise() / w.rowwise().sum().array();
}

template <typename Derived1, typename Derived2>
RelationGraphs build_graphs(const Eigen::MatrixBase<Derived1>& x, const Eigen::MatrixBase<Derived2>& b,
                            double epsilon = kDefaultGraphEpsilon) {
  if (x.rows() != b.rows()) throw DimensionError("build_graphs: feature and position agent counts differ");
  return {action_graph(x), position_graph(b, epsilon), x.rows()};
}

// --- differentiable versions -------------------------------------------

template <typename Scalar>
Var<Scalar> action_graph(const Var<Scalar>& x) {
  if (!all_finite(x.value())) throw NumericError("action_graph: non-finite features");
  return softmax_rows(matmul(x, transpose(x)));
}

template <typename Scalar>
Var<Scalar> position_graph(const Var<Scalar>& b, Scalar epsilon = Scalar(kDefaultGraphEpsilon)) {
  const MatrixX<Scalar>& bv = b.value();
  const Index n = bv.rows();
  auto& tape = *b.tape();
  if (n == 1) {
    if (!all_finite(bv)) throw NumericError("position_graph: non-finite positions");
    return tape.record(MatrixX<Scalar>::Ones(1, 1), {b}, [](Tape<Scalar>&, const MatrixX<Scalar>&) {});
  }
  MatrixX<Scalar> w = position_weights(bv, epsilon);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_sum = w.rowwise().sum();
  MatrixX<Scalar> g = w.array().colwise() / row_sum.array();
  auto cache = std::make_shared<const std::pair<MatrixX<Scalar>, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>>(g, row_sum);
  return tape.record(std::move(g), {b}, [b, cache, epsilon, n](Tape<Scalar>& tp, const MatrixX<Scalar>& dg) {
    const auto& [gv, s] = *cache;
    const MatrixX<Scalar>& bv = b.value();
    // d G_ij / d w_ik = (delta_jk - G_ij) / S_i
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (dg.array() * gv.array()).rowwise().sum();
    MatrixX<Scalar> db = MatrixX<Scalar>::Zero(n, 2);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const Scalar dw = (dg(i, j) - dots(i)) / s(i);
        const Eigen::Matrix<Scalar, 1, 2> diff = bv.row(i) - bv.row(j);
        const Scalar d = diff.norm();
        if (d == Scalar(0)) continue;  // distance has no gradient at coincidence
        const Scalar inv = Scalar(1) / (d + epsilon);
        const Scalar dd = -dw * inv * inv;
        db.row(i) += dd * diff / d;
        db.row(j) -= dd * diff / d;
      }
    tp.accumulate(b, db);
  });
}

template <typename Scalar>
BasicRelationGraphs<Var<Scalar>> build_graphs(const Var<Scalar>& x, const Var<Scalar>& b,
                                              Scalar epsilon = Scalar(kDefaultGraphEpsilon)) {
  if (x.rows() != b.rows()) throw DimensionError("build_graphs: feature and position agent counts differ");
  return {action_graph(x), position_graph(b, epsilon), x.rows()};
}

}  // namespace sram
