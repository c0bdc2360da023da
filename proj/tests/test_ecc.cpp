#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "ehcpool/ecc_conv.hpp"
#include "ehcpool/grad_check.hpp"
#include "ehcpool/synth.hpp"
#include "oracles.hpp"

using namespace ehcpool;

namespace {

// Makes F(l) ≡ M for every edge feature: zero output weights, bias = vec(M).
void constant_filter(EccLayer& layer, const Matrix& m) {
  layer.filter_output().weight.value.setZero();
  layer.filter_output().bias.value = Eigen::Map<const Matrix>(m.data(), 1, m.size());
}

Matrix forward_value(EccLayer& layer, const AttributedGraph& g, const Matrix& x) {
  ad::Tape tape;
  const auto idx = build_neighbor_index(g);
  return layer.forward(tape, g, idx, tape.constant(x), tape.constant(g.edge_features)).value();
}

}  // namespace

TEST(EccFilter, ZeroWeightsGiveZeroMatrix) {
  std::mt19937_64 rng(1);
  EccLayer layer("c", 3, 2, 4, rng);
  for (auto* p : layer.parameters()) p->value.setZero();
  EXPECT_TRUE(layer.filter_matrix(Eigen::RowVectorXd::Ones(4)).isZero());
}

TEST(EccFilter, UnitEdgeFeatureSelectsFirstWeightSlice) {
  std::mt19937_64 rng(1);
  EccLayer layer("c", 2, 2, 2, rng, 2);
  layer.filter_hidden().weight.value = Matrix::Identity(2, 2);
  layer.filter_hidden().bias.value.setZero();
  layer.filter_output().weight.value = (Matrix(2, 4) << 1, 2, 3, 4, 5, 6, 7, 8).finished();
  layer.filter_output().bias.value.setZero();
  Eigen::RowVectorXd e(2);
  e << 1, 0;
  EXPECT_EQ(layer.filter_matrix(e), (Matrix(2, 2) << 1, 2, 3, 4).finished());
}

TEST(EccFilter, DistinctEdgesGiveDistinctMatrices) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    EccLayer layer("c", 3, 4, 5, rng);
    Eigen::RowVectorXd a(5), b(5);
    for (int k = 0; k < 5; ++k) {
      a(k) = g(rng);
      b(k) = g(rng);
    }
    EXPECT_FALSE(layer.filter_matrix(a).isApprox(layer.filter_matrix(b)));
  }
}

TEST(EccFilter, EdgeWidthMismatch) {
  std::mt19937_64 rng(1);
  EccLayer layer("c", 2, 2, 3, rng);
  ad::Tape t;
  EXPECT_THROW(layer.filter_forward(t, t.constant(Matrix::Zero(1, 2))), ad::AutodiffError);
}

TEST(EccForward, StarCentreAveragesLeaves) {
  AttributedGraph g;
  g.n = 3;
  g.edges = {{0, 1}, {0, 2}};
  g.edge_features = Matrix::Ones(2, 1);
  g.node_features = (Matrix(3, 2) << 0, 0, 2, 0, 0, 4).finished();
  std::mt19937_64 rng(1);
  EccLayer layer("c", 2, 2, 1, rng);
  constant_filter(layer, Matrix::Identity(2, 2));
  layer.bias().value.setZero();
  const Matrix y = forward_value(layer, g, g.node_features);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(EccForward, ZeroFilterLeavesBias) {
  const auto g = gen_toy_graph("path4");
  std::mt19937_64 rng(1);
  EccLayer layer("c", 2, 3, 1, rng);
  constant_filter(layer, Matrix::Zero(3, 2));
  layer.bias().value << 0.5, -1, 2;
  const Matrix y = forward_value(layer, g, g.node_features);
  for (int v = 0; v < 4; ++v) EXPECT_EQ(y.row(v), layer.bias().value);
}

TEST(EccForward, SingleEdgeSwapsFeatures) {
  AttributedGraph g;
  g.n = 2;
  g.edges = {{0, 1}};
  g.edge_features = Matrix::Constant(1, 1, 0.3);
  g.node_features = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  std::mt19937_64 rng(1);
  EccLayer layer("c", 2, 2, 1, rng);
  constant_filter(layer, Matrix::Identity(2, 2));
  layer.bias().value.setZero();
  const Matrix y = forward_value(layer, g, g.node_features);
  EXPECT_EQ(y.row(0), g.node_features.row(1));
  EXPECT_EQ(y.row(1), g.node_features.row(0));
}

TEST(EccForward, IsolatedNodeGetsBiasOnly) {
  const auto g = gen_toy_graph("singleton");
  std::mt19937_64 rng(1);
  EccLayer layer("c", 2, 2, 1, rng);
  const Matrix y = forward_value(layer, g, g.node_features);
  EXPECT_EQ(y.row(0), layer.bias().value);
}

TEST(EccForward, MatchesExplicitSum) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = oracle::random_graph(rng, 3 + trial, 0.4, 3, 2);
    EccLayer layer("c", 3, 4, 2, rng);
    const Matrix y = forward_value(layer, g, g.node_features);
    std::vector<Matrix> acc(static_cast<std::size_t>(g.n), Matrix::Zero(4, 1));
    std::vector<int> deg(static_cast<std::size_t>(g.n), 0);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      const Matrix f = layer.filter_matrix(g.edge_features.row(static_cast<Eigen::Index>(e)));
      const auto [i, j] = g.edges[e];
      acc[i] += f * g.node_features.row(j).transpose();
      acc[j] += f * g.node_features.row(i).transpose();
      ++deg[i];
      ++deg[j];
    }
    for (int v = 0; v < g.n; ++v) {
      const Matrix expect = acc[v].transpose() / deg[v] + layer.bias().value;
      EXPECT_TRUE(y.row(v).isApprox(expect, 1e-12)) << trial << ":" << v;
    }
  }
}

TEST(EccForward, ShapeMismatch) {
  const auto g = gen_toy_graph("path4");
  std::mt19937_64 rng(1);
  EccLayer layer("c", 3, 2, 1, rng);
  ad::Tape t;
  const auto idx = build_neighbor_index(g);
  EXPECT_THROW(layer.forward(t, g, idx, t.constant(g.node_features), t.constant(g.edge_features)),
               ad::AutodiffError);
}

TEST(EccForward, NodeRelabelingPermutesOutput) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = oracle::random_graph(rng, 8, 0.4, 3, 2);
    EccLayer layer("c", 3, 3, 2, rng);
    std::vector<int> perm(static_cast<std::size_t>(g.n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    AttributedGraph h = g;
    for (int v = 0; v < g.n; ++v) h.node_features.row(perm[v]) = g.node_features.row(v);
    for (auto& e : h.edges) e = {perm[e.source], perm[e.target]};
    const Matrix a = forward_value(layer, g, g.node_features);
    const Matrix b = forward_value(layer, h, h.node_features);
    for (int v = 0; v < g.n; ++v) EXPECT_TRUE(b.row(perm[v]).isApprox(a.row(v), 1e-12));
  }
}

TEST(EccGrad, AllParametersAndInputs) {
  std::mt19937_64 rng(5);
  const auto g = oracle::random_graph(rng, 6, 0.5, 3, 2);
  EccLayer layer("c", 3, 2, 2, rng);
  ad::Tensor x("x", g.node_features);
  ad::Tensor l("l", g.edge_features);
  const auto idx = build_neighbor_index(g);
  auto params = layer.parameters();
  params.push_back(&x);
  params.push_back(&l);
  const auto r = ad::grad_check(
      [&](ad::Tape& t) {
        const ad::Var y = layer.forward(t, g, idx, t.leaf(x), t.leaf(l));
        return ad::sum(ad::elementwise_mul(y, y));
      },
      params);
  for (const auto& e : r.per_tensor) EXPECT_LE(e.max_rel_error, 1e-6) << e.name;
}
