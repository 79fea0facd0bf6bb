#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "sram/gradcheck.hpp"
#include "sram/relation_graphs.hpp"

using namespace sram;

namespace {

// Straight loops over Eq-style definitions, no Eigen expressions.
std::vector<std::vector<double>> oracle_action(const Matrix& x) {
  const Index n = x.rows();
  std::vector<std::vector<double>> g(n, std::vector<double>(n));
  for (Index i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double top = -1e300;
    for (Index j = 0; j < n; ++j) {
      double dot = 0;
      for (Index d = 0; d < x.cols(); ++d) dot += x(i, d) * x(j, d);
      s[j] = dot;
      top = std::max(top, dot);
    }
    double z = 0;
    for (Index j = 0; j < n; ++j) z += std::exp(s[j] - top);
    for (Index j = 0; j < n; ++j) g[i][j] = std::exp(s[j] - top) / z;
  }
  return g;
}

std::vector<std::vector<double>> oracle_position(const Matrix& b, double eps) {
  const Index n = b.rows();
  std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
  if (n == 1) {
    g[0][0] = 1;
    return g;
  }
  for (Index i = 0; i < n; ++i) {
    double total = 0;
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = b(i, 0) - b(j, 0), dy = b(i, 1) - b(j, 1);
      g[i][j] = 1.0 / (std::sqrt(dx * dx + dy * dy) + eps);
      total += g[i][j];
    }
    for (Index j = 0; j < n; ++j) g[i][j] /= total;
  }
  return g;
}

double max_gap(const Matrix& m, const std::vector<std::vector<double>>& o) {
  double worst = 0;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) worst = std::max(worst, std::abs(m(i, j) - o[i][j]));
  return worst;
}

Matrix uniform(Index r, Index c, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Eigen::PermutationMatrix<Eigen::Dynamic> random_permutation(Index n, std::mt19937_64& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(n);
  for (Index i = 0; i < n; ++i) p.indices()[i] = idx[i];
  return p;
}

}  // namespace

TEST_CASE("action graph examples") {
  Matrix x(2, 2);
  x << 1, 0, 0, 1;
  Matrix g = action_graph(x);
  CHECK(g(0, 0) == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(g(0, 1) == doctest::Approx(0.26894).epsilon(1e-5));

  Matrix same = Matrix::Constant(4, 3, 0.7);
  CHECK(action_graph(same).isApproxToConstant(0.25, 1e-12));
  CHECK(action_graph(Matrix::Constant(1, 5, 2.0)) == Matrix::Ones(1, 1));

  Matrix bad = x;
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(action_graph(bad), NumericError);
}

TEST_CASE("position graph examples") {
  Matrix b(3, 2);
  b << 0, 0, 3, 0, 0, 4;
  Matrix g = position_graph(b, 1e-12);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == doctest::Approx(4.0 / 7.0).epsilon(1e-9));
  CHECK(g(0, 2) == doctest::Approx(3.0 / 7.0).epsilon(1e-9));
  CHECK(g(0, 1) == doctest::Approx(0.5714).epsilon(1e-4));

  Matrix coincident(3, 2);
  coincident << 0.2, 0.2, 0.2, 0.2, 0.9, 0.1;
  Matrix gc = position_graph(coincident, 1e-3);
  CHECK(all_finite(gc));
  for (Index i = 0; i < 3; ++i) CHECK(gc.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(position_graph(Matrix::Constant(1, 2, 0.4), 1e-3) == Matrix::Ones(1, 1));
  b(2, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(position_graph(b, 1e-3), NumericError);
}

TEST_CASE("oracle equivalence on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<Index> pick_n(1, 8), pick_d(1, 32);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = pick_n(rng), d = pick_d(rng);
    const Matrix x = uniform(n, d, -1, 1, rng);
    const Matrix b = uniform(n, 2, 0, 1, rng);
    CHECK(max_gap(action_graph(x), oracle_action(x)) < 1e-9);
    CHECK(max_gap(position_graph(b, kDefaultGraphEpsilon), oracle_position(b, kDefaultGraphEpsilon)) < 1e-9);

    Tape<double> t;
    auto g = build_graphs(t.constant(x), t.constant(b), kDefaultGraphEpsilon);
    CHECK(max_gap(g.action.value(), oracle_action(x)) < 1e-9);
    CHECK(max_gap(g.position.value(), oracle_position(b, kDefaultGraphEpsilon)) < 1e-9);
  }
}

TEST_CASE("row stochasticity over random inputs") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<Index> pick_n(1, 10), pick_d(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = pick_n(rng);
    const Matrix x = uniform(n, pick_d(rng), -3, 3, rng);
    const Matrix b = uniform(n, 2, 0, 1, rng);
    const RelationGraphs g = build_graphs(x, b);
    for (Index i = 0; i < n; ++i) {
      REQUIRE(std::abs(g.action.row(i).sum() - 1.0) < 1e-9);
      REQUIRE(std::abs(g.position.row(i).sum() - 1.0) < 1e-9);
      if (n >= 2) REQUIRE(g.position(i, i) == 0.0);
    }
    REQUIRE((g.action.array() > 0).all());
    REQUIRE((g.position.array() >= 0).all());
  }
}

TEST_CASE("permutation equivariance") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + trial % 7;
    const Matrix x = uniform(n, 6, -1, 1, rng);
    const Matrix b = uniform(n, 2, 0, 1, rng);
    const auto p = random_permutation(n, rng);
    const Matrix px = p * x, pb = p * b;
    const Matrix ga = p * action_graph(x) * p.transpose();
    const Matrix gp = p * position_graph(b, 1e-3) * p.transpose();
    CHECK((action_graph(px) - ga).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((position_graph(pb, 1e-3) - gp).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("position weights are symmetric before normalization") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix b = uniform(5, 2, 0, 1, rng);
    const Matrix w = position_weights(b, 1e-3);
    CHECK((w - w.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(w.diagonal().isZero(0));
    const Matrix g = position_graph(b, 1e-3);
    CHECK(g.rowwise().sum().isOnes(1e-12));
  }
}

TEST_CASE("graph gradients match finite differences") {
  std::mt19937_64 rng(17);
  ParamStore p;
  p.add("x", Tensor::from_matrix(uniform(4, 3, -1, 1, rng)));
  p.add("b", Tensor::from_matrix(uniform(4, 2, 0, 1, rng)));
  const Matrix probe = uniform(4, 4, -1, 1, rng);
  Objective<double> f = [&](ParamBinding<double>& bind) {
    auto g = build_graphs(bind("x"), bind("b"), 1e-3);
    auto& t = bind.tape();
    auto w = t.constant(probe);
    return sum(matmul(g.action, w)) + squared_norm(g.position - w);
  };
  CHECK(finite_diff_check(f, p) < 1e-6);
}
