#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "ehcpool/ehc_pool.hpp"
#include "ehcpool/grad_check.hpp"
#include "ehcpool/synth.hpp"
#include "oracles.hpp"

using namespace ehcpool;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

Matrix col(std::initializer_list<double> v) { return row(v).transpose(); }

PoolConfig config(int gamma, int cap) {
  PoolConfig c;
  c.gamma = gamma;
  c.beta_cap = cap;
  return c;
}

std::vector<double> scores_of(std::mt19937_64& rng, std::size_t count) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> s(count);
  for (double& v : s) v = g(rng);
  return s;
}

void expect_matches_oracle(const AttributedGraph& g, const std::vector<double>& ns, const std::vector<double>& es,
                           int gamma, int cap) {
  const auto idx = build_neighbor_index(g);
  const auto got = iterate_n_top(ns, es, idx, config(gamma, cap));
  const auto want = oracle::greedy_clusters(g, ns, es, gamma, cap);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t k = 0; k < want.size(); ++k) {
    EXPECT_EQ(got.clusters[k].core, want[k].core);
    const auto m = got.clusters[k].members();
    EXPECT_EQ(std::set<int>(m.begin(), m.end()), want[k].members);
    EXPECT_EQ(std::set<int>(got.clusters[k].edges.begin(), got.clusters[k].edges.end()), want[k].edges);
  }
}

}  // namespace

TEST(EdgeScores, WorkedValue) {
  ad::Tape t;
  const auto phi = edge_scores(t.constant(row({1, 2})), t.constant(col({3, 4})));
  EXPECT_DOUBLE_EQ(phi.scalar(), 2.2);
}

TEST(EdgeScores, ZeroFeatureGivesZero) {
  ad::Tape t;
  EXPECT_EQ(edge_scores(t.constant(row({0, 0})), t.constant(col({3, 4}))).scalar(), 0.0);
}

TEST(EdgeScores, PositiveScaleOfProjectionCancels) {
  std::mt19937_64 rng(4);
  const auto g = oracle::random_graph(rng, 10, 0.5, 2, 5);
  const Matrix p = Matrix::Random(5, 1);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    ad::Tape t;
    const Matrix a = edge_scores(t.constant(g.edge_features), t.constant(p)).value();
    const Matrix b = edge_scores(t.constant(g.edge_features), t.constant(c * p)).value();
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EdgeScores, ShapeMismatch) {
  ad::Tape t;
  EXPECT_THROW(edge_scores(t.constant(row({1, 2})), t.constant(col({3, 4, 5}))), PoolError);
}

TEST(GateEdges, ZeroScoreHalves) {
  ad::Tape t;
  const auto y = gate_edges(t.constant(row({1, -2, 3})), t.constant(col({0})));
  EXPECT_EQ(y.value(), row({0.5, -1, 1.5}));
}

TEST(GateEdges, WorkedValue) {
  ad::Tape t;
  const auto y = gate_edges(t.constant(row({1, 2})), t.constant(col({2.2})));
  EXPECT_NEAR(y.value()(0, 0), 0.90025, 5e-6);
  EXPECT_NEAR(y.value()(0, 1), 1.80050, 5e-6);
}

TEST(GateEdges, SaturationPassesThrough) {
  ad::Tape t;
  const auto y = gate_edges(t.constant(row({1, 2})), t.constant(col({50})));
  EXPECT_NEAR(y.value()(0, 1), 2.0, 1e-15);
}

namespace {

// Node 0 joined to 1 and 2 with edge scores 2.2 and 0.6.
struct Cherry {
  AttributedGraph g;
  NeighborIndex idx;
  Cherry() {
    g.n = 3;
    g.node_features = (Matrix(3, 2) << 1, 0, 0, 1, 1, 1).finished();
    g.edges = {{0, 1}, {0, 2}};
    g.edge_features = Matrix::Zero(2, 1);
    idx = build_neighbor_index(g);
  }
};

}  // namespace

TEST(NodeScores, EdgeSumPlusProjection) {
  Cherry c;
  ad::Tape t;
  const auto phi = node_scores(t, t.constant(c.g.node_features), t.constant(col({0, 2})), 0.0,
                               t.constant(col({2.2, 0.6})), c.idx);
  EXPECT_NEAR(phi.value()(0, 0), 2.8, 1e-15);
}

TEST(NodeScores, DeltaOneDropsNodeTerm) {
  Cherry c;
  ad::Tape t;
  const auto phi = node_scores(t, t.constant(Matrix::Constant(3, 2, 9.0)), t.constant(col({0.3, 2})), 1.0,
                               t.constant(col({2.2, 0.6})), c.idx);
  EXPECT_NEAR(phi.value()(0, 0), 2.8, 1e-15);
}

TEST(NodeScores, IsolatedNodeProjection) {
  const auto g = gen_toy_graph("singleton");
  const auto idx = build_neighbor_index(g);
  ad::Tape t;
  const auto phi = node_scores(t, t.constant(row({3, 4})), t.constant(col({3, 4})), 0.0,
                               t.constant(Matrix::Zero(0, 1)), idx);
  EXPECT_DOUBLE_EQ(phi.scalar(), 5.0);
}

TEST(NodeScores, AblationModes) {
  Cherry c;
  ad::Tape t;
  const auto x = t.constant(c.g.node_features);
  const auto p = t.constant(col({3, 4}));
  const auto phi_e = t.constant(col({2.2, 0.6}));
  const auto node_only = node_scores(t, x, p, 0.5, phi_e, c.idx, ScoreMode::NodeOnly).value();
  const auto edge_only = node_scores(t, x, p, 0.5, phi_e, c.idx, ScoreMode::EdgeOnly).value();
  EXPECT_NEAR(node_only(0, 0), 3.0 / 5.0, 1e-15);
  EXPECT_NEAR(node_only(2, 0), 7.0 / 5.0, 1e-15);
  EXPECT_NEAR(edge_only(0, 0), 2.8, 1e-15);
  EXPECT_NEAR(edge_only(1, 0), 2.2, 1e-15);
  EXPECT_NEAR(edge_only(2, 0), 0.6, 1e-15);
}

TEST(NodeScores, MatchReferenceOnRandomGraphs) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = oracle::random_graph(rng, 2 + trial % 15, 0.3, 4, 3);
    const auto idx = build_neighbor_index(g);
    const Matrix p1 = Matrix::Random(3, 1);
    const Matrix p2 = Matrix::Random(4, 1);
    const double delta = u(rng);
    ad::Tape t;
    const auto phi_e = edge_scores(t.constant(g.edge_features), t.constant(p1));
    const auto phi_v = node_scores(t, t.constant(g.node_features), t.constant(p2), delta, phi_e, idx);
    const auto ref_e = oracle::edge_scores(g.edge_features, {p1.data(), p1.data() + 3});
    const auto ref_v = oracle::node_scores(g, g.node_features, {p2.data(), p2.data() + 4}, delta, ref_e);
    for (std::size_t e = 0; e < ref_e.size(); ++e) EXPECT_NEAR(phi_e.value()(e, 0), ref_e[e], 1e-12);
    for (int v = 0; v < g.n; ++v) EXPECT_NEAR(phi_v.value()(v, 0), ref_v[v], 1e-12);
  }
}

TEST(IterateNTop, PathWorkedExample) {
  const auto g = gen_toy_graph("path4");
  const auto idx = build_neighbor_index(g);
  const auto a = iterate_n_top(std::vector<double>{0.1, 0.9, 0.5, 0.2}, std::vector<double>{0.3, 0.8, 0.4}, idx,
                               config(2, 2));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a.clusters[0].core, 1);
  EXPECT_EQ(a.clusters[0].regulars, std::vector<int>{2});
  EXPECT_EQ(a.clusters[0].edges, std::vector<int>{1});
  EXPECT_EQ(a.clusters[1].core, 3);
  EXPECT_TRUE(a.clusters[1].regulars.empty());
}

TEST(IterateNTop, Singleton) {
  const auto idx = build_neighbor_index(gen_toy_graph("singleton"));
  const auto a = iterate_n_top(std::vector<double>{4.0}, std::vector<double>{}, idx, config(1, 3));
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a.clusters[0].core, 0);
  EXPECT_TRUE(a.clusters[0].edges.empty());
}

TEST(IterateNTop, TriangleTieBreak) {
  const auto g = gen_toy_graph("triangle");
  const auto idx = build_neighbor_index(g);
  const auto a = iterate_n_top(std::vector<double>(3, 1.0), std::vector<double>(3, 1.0), idx, config(1, 2));
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a.clusters[0].core, 0);
  EXPECT_EQ(a.clusters[0].regulars, std::vector<int>{1});
  EXPECT_EQ(a.clusters[0].edges, std::vector<int>{0});
}

TEST(IterateNTop, StopsWhenNodesRunOut) {
  const auto g = gen_toy_graph("triangle");
  const auto idx = build_neighbor_index(g);
  const auto a = iterate_n_top(std::vector<double>{3, 2, 1}, std::vector<double>(3, 0.0), idx, config(5, 3));
  EXPECT_EQ(a.size(), 1u);
}

TEST(IterateNTop, CapOneKeepsCoresOnly) {
  const auto g = gen_toy_graph("star4");
  const auto idx = build_neighbor_index(g);
  const auto a = iterate_n_top(std::vector<double>{1, 4, 3, 2}, std::vector<double>(3, 1.0), idx, config(3, 1));
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a.clusters[0].core, 1);
  EXPECT_EQ(a.clusters[1].core, 2);
  EXPECT_EQ(a.clusters[2].core, 3);
  for (const auto& c : a.clusters) EXPECT_TRUE(c.regulars.empty());
}

TEST(IterateNTop, Errors) {
  const auto g = gen_toy_graph("path4");
  const auto idx = build_neighbor_index(g);
  EXPECT_THROW(iterate_n_top(std::vector<double>{0, 0, 0, 0}, std::vector<double>{0, 0, 0}, NeighborIndex{},
                             config(1, 1)),
               PoolError);
  EXPECT_THROW(iterate_n_top(std::vector<double>{0, 0, 0}, std::vector<double>{0, 0, 0}, idx, config(1, 1)), PoolError);
  EXPECT_THROW(iterate_n_top(std::vector<double>{0, NAN, 0, 0}, std::vector<double>{0, 0, 0}, idx, config(1, 1)),
               PoolError);
  EXPECT_THROW(iterate_n_top(std::vector<double>{0, 0, 0, 0}, std::vector<double>{0, 0, 0}, idx, config(0, 1)),
               PoolError);
}

TEST(IterateNTop, HardPartitionOnRandomGraphs) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 60);
    const auto g = oracle::random_graph(rng, n, 0.15, 1, 1);
    const int gamma = 1 + static_cast<int>(rng() % 8);
    const int cap = 1 + static_cast<int>(rng() % 6);
    const auto idx = build_neighbor_index(g);
    const auto a = iterate_n_top(scores_of(rng, n), scores_of(rng, g.edges.size()), idx, config(gamma, cap));
    EXPECT_LE(a.size(), static_cast<std::size_t>(gamma));
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& c : a.clusters) {
      EXPECT_LE(c.size(), static_cast<std::size_t>(cap));
      for (std::size_t r = 0; r < c.regulars.size(); ++r) {
        const auto& e = g.edges[c.edges[r]];
        EXPECT_TRUE((e.source == c.core && e.target == c.regulars[r]) ||
                    (e.target == c.core && e.source == c.regulars[r]));
      }
      for (int v : c.members()) seen.insert(v);
      total += c.size();
    }
    EXPECT_EQ(seen.size(), total);
  }
}

TEST(IterateNTop, MatchesBruteForceOnAllFourNodeGraphs) {
  std::mt19937_64 rng(23);
  for (const auto& g : oracle::connected_graphs(4)) {
    for (int gamma = 1; gamma <= 4; ++gamma) {
      for (int cap = 1; cap <= 4; ++cap) {
        expect_matches_oracle(g, scores_of(rng, 4), scores_of(rng, g.edges.size()), gamma, cap);
        std::vector<double> tied_n(4), tied_e(g.edges.size());
        for (double& v : tied_n) v = static_cast<double>(rng() % 2);
        for (double& v : tied_e) v = static_cast<double>(rng() % 2);
        expect_matches_oracle(g, tied_n, tied_e, gamma, cap);
      }
    }
  }
}

TEST(IterateNTop, PositiveRescalingKeepsAssignment) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = oracle::random_graph(rng, 12, 0.3, 1, 1);
    const auto idx = build_neighbor_index(g);
    auto ns = scores_of(rng, 12);
    auto es = scores_of(rng, g.edges.size());
    const auto a = iterate_n_top(ns, es, idx, config(5, 3));
    const double c = std::exp(scores_of(rng, 1)[0] * 3.0);
    for (double& v : ns) v *= c;
    for (double& v : es) v *= c;
    EXPECT_EQ(iterate_n_top(ns, es, idx, config(5, 3)), a);
  }
}

namespace {

PoolParams identity_params(Eigen::Index d, Eigen::Index de) {
  std::mt19937_64 rng(0);
  PoolParams p("pool", d, de, rng);
  p.aggregation.weight.value.setZero();
  const Matrix eye = Matrix::Identity(d, d);
  p.aggregation.bias.value = Eigen::Map<const Matrix>(eye.data(), 1, d * d);
  p.bc.value.setZero();
  return p;
}

}  // namespace

TEST(NeAggregate, IdentityLinearAddsRegular) {
  const auto g = gen_toy_graph("path4");
  auto params = identity_params(2, 1);
  ClusterAssignment a;
  a.clusters.push_back({0, {1}, {0}});
  ad::Tape t;
  const auto x = t.constant((Matrix(4, 2) << 1, 1, 2, 3, 0, 0, 0, 0).finished());
  const auto y = ne_aggregate(t, a, x, t.constant(g.edge_features), params, 1);
  EXPECT_EQ(y.value(), row({3, 4}));
}

TEST(NeAggregate, ZeroMapKeepsCoreFeatures) {
  const auto g = gen_toy_graph("path4");
  std::mt19937_64 rng(0);
  PoolParams params("pool", 2, 1, rng);
  params.aggregation.weight.value.setZero();
  params.aggregation.bias.value.setZero();
  params.bc.value.setZero();
  ClusterAssignment a;
  a.clusters.push_back({1, {2}, {1}});
  a.clusters.push_back({3, {}, {}});
  ad::Tape t;
  const auto y = ne_aggregate(t, a, t.constant(g.node_features), t.constant(g.edge_features), params, 3);
  EXPECT_EQ(y.value().row(0), g.node_features.row(1));
  EXPECT_EQ(y.value().row(1), g.node_features.row(3));
  EXPECT_TRUE(y.value().row(2).isZero());
}

TEST(NeAggregate, TooManyClusters) {
  std::mt19937_64 rng(0);
  PoolParams params("pool", 2, 1, rng);
  ClusterAssignment a;
  a.clusters = {{0, {}, {}}, {1, {}, {}}};
  ad::Tape t;
  EXPECT_THROW(ne_aggregate(t, a, t.constant(Matrix::Zero(2, 2)), t.constant(Matrix::Zero(1, 1)), params, 1),
               PoolError);
}

TEST(Readouts, FullyConnectedMeanAndPadding) {
  ClusterAssignment a;
  a.clusters = {{0, {1}, {0}}, {2, {}, {}}};
  ad::Tape t;
  const auto x = t.constant((Matrix(3, 2) << 1, 1, 3, 3, 5, 6).finished());
  const auto y = readout_fully_connected(a, x, 3).value();
  EXPECT_EQ(y.row(0), row({2, 2}));
  EXPECT_EQ(y.row(1), row({5, 6}));
  EXPECT_TRUE(y.row(2).isZero());
}

TEST(Readouts, FeatureSelectionTakesCores) {
  ClusterAssignment a;
  a.clusters = {{2, {0}, {1}}};
  ad::Tape t;
  const auto x = t.constant((Matrix(3, 2) << 1, 1, 3, 3, 5, 6).finished());
  const auto y = readout_feature_selection(a, x, 2).value();
  EXPECT_EQ(y.row(0), row({5, 6}));
  EXPECT_TRUE(y.row(1).isZero());
}

TEST(PoolForward, ModesAndShape) {
  std::mt19937_64 rng(31);
  const auto g = oracle::random_graph(rng, 16, 0.5, 4, 3);
  const auto idx = build_neighbor_index(g);
  PoolParams params("pool", 4, 3, rng);
  for (auto sm : {ScoreMode::EdgeToNode, ScoreMode::NodeOnly, ScoreMode::EdgeOnly}) {
    for (auto rm : {ReadoutMode::NeAggregation, ReadoutMode::FeatureSelection, ReadoutMode::FullyConnected}) {
      PoolConfig cfg = config(5, 3);
      cfg.score_mode = sm;
      cfg.readout_mode = rm;
      ad::Tape t;
      const auto out = pool_forward(t, idx, t.constant(g.node_features), t.constant(g.edge_features), params, cfg);
      EXPECT_EQ(out.basis.rows(), 5);
      EXPECT_EQ(out.basis.cols(), 4);
      EXPECT_EQ(out.assignment.size(), 5u);
      EXPECT_EQ(out.scores.node_scores.size(), 16u);
      if (rm == ReadoutMode::FeatureSelection) {
        for (int k = 0; k < 5; ++k) {
          EXPECT_EQ(out.basis.value().row(k), g.node_features.row(out.assignment.clusters[k].core));
        }
      }
    }
  }
}

TEST(PoolForward, GradientsThroughContinuousPaths) {
  std::mt19937_64 rng(37);
  const auto g = oracle::random_graph(rng, 7, 0.5, 3, 2);
  const auto idx = build_neighbor_index(g);
  PoolParams params("pool", 3, 2, rng);
  ad::Tensor x("x", g.node_features);
  ad::Tensor l("l", g.edge_features);
  auto tensors = params.parameters();
  tensors.push_back(&x);
  tensors.push_back(&l);
  const PoolConfig cfg = config(3, 3);
  const auto r = ad::grad_check(
      [&](ad::Tape& t) {
        const auto out = pool_forward(t, idx, t.leaf(x), t.leaf(l), params, cfg);
        return ad::sum(ad::elementwise_mul(out.basis, out.basis));
      },
      tensors);
  for (const auto& e : r.per_tensor) EXPECT_LE(e.max_rel_error, 1e-6) << e.name;
}

TEST(AssignmentJson, Layout) {
  const auto g = gen_toy_graph("path4");
  ClusterAssignment a;
  a.clusters = {{1, {2}, {1}}, {3, {}, {}}};
  const auto j = assignment_to_json(7, a, g);
  EXPECT_EQ(j.at("graph_id"), 7);
  EXPECT_EQ(j.at("clusters")[0].at("core"), 1);
  EXPECT_EQ(j.at("clusters")[0].at("edges")[0], nlohmann::json({1, 2}));
  EXPECT_TRUE(j.at("clusters")[1].at("regulars").empty());
}

TEST(PoolConfigTest, CapFromRatio) {
  EXPECT_EQ(PoolConfig::cap_from_ratio(0.2, 16), 4);
  EXPECT_EQ(PoolConfig::cap_from_ratio(0.25, 12), 3);
  EXPECT_EQ(PoolConfig::cap_from_ratio(0.01, 16), 1);
}
