#ifndef EHCPOOL_EHC_POOL_HPP
#define EHCPOOL_EHC_POOL_HPP

// Edge-aware hard-clustering pooling.
//
//   1. edge scores     φ_e = ⟨L'(e), p1⟩ / ‖p1‖
//   2. edge gating     L''(e) = L'(e) · σ(φ_e)
//   3. node scores     φ_v = (1−δ)·⟨X'(v), p2⟩ / ‖p2‖ + Σ_{e ∋ v} φ_e
//   4. n-top clusters  greedy: best unassigned node becomes a core, its
//                      top (cap−1) unassigned neighbours by φ_e become
//                      regular nodes; repeat up to γ times
//   5. aggregation     X''(core) = X'(core) + Σ_regular Linear(L''(e))·X'(reg) + b_c
//
// Cluster selection is discrete; gradients flow through the scores only via
// the gating in step 2 and the aggregation in step 5.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehcpool/autodiff.hpp"
#include "ehcpool/ecc_conv.hpp"
#include "ehcpool/graph.hpp"

namespace ehcpool {

class PoolError : public std::runtime_error {
 public:
  enum class Kind { EmptyGraph, Config, ShapeMismatch, NonFinite };

  PoolError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

enum class ScoreMode { EdgeToNode, NodeOnly, EdgeOnly };
enum class ReadoutMode { NeAggregation, FeatureSelection, FullyConnected };

struct PoolConfig {
  int gamma = 5;     // clusters kept
  int beta_cap = 3;  // ⌈βn⌉, maximum nodes per cluster
  double delta = 0.0;
  ScoreMode score_mode = ScoreMode::EdgeToNode;
  ReadoutMode readout_mode = ReadoutMode::NeAggregation;

  static int cap_from_ratio(double beta, int n) {
    return static_cast<int>(std::ceil(beta * static_cast<double>(n) - 1e-12));
  }

  void validate() const {
    if (gamma < 1) throw PoolError(PoolError::Kind::Config, "gamma must be >= 1");
    if (beta_cap < 1) throw PoolError(PoolError::Kind::Config, "beta cap must be >= 1");
    if (!(delta >= 0.0 && delta <= 1.0)) throw PoolError(PoolError::Kind::Config, "delta must lie in [0,1]");
  }
};

struct Cluster {
  int core = 0;
  std::vector<int> regulars;  // regulars[k] is joined to the core by edges[k]
  std::vector<int> edges;

  std::size_t size() const { return 1 + regulars.size(); }
  std::vector<int> members() const {
    std::vector<int> m{core};
    m.insert(m.end(), regulars.begin(), regulars.end());
    return m;
  }

  friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct ClusterAssignment {
  std::vector<Cluster> clusters;  // in selection order

  std::size_t size() const { return clusters.size(); }
  friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;
};

struct ScoreState {
  std::vector<double> edge_scores;
  std::vector<double> node_scores;
  Matrix gated_edges;
  std::vector<bool> assigned;
};

/// Learnable pooling parameters: edge projection p1, node projection p2 and
/// the aggregation map Linear(d_e -> d·d) with output bias b_c.
struct PoolParams {
  ad::Tensor p1;  // d_e × 1
  ad::Tensor p2;  // d × 1
  Linear aggregation;
  ad::Tensor bc;  // 1 × d

  PoolParams() = default;
  PoolParams(const std::string& name, Eigen::Index node_dim, Eigen::Index edge_dim, std::mt19937_64& rng)
      : p1(name + ".p1", fan_in_uniform(edge_dim, 1, edge_dim, rng)),
        p2(name + ".p2", fan_in_uniform(node_dim, 1, node_dim, rng)),
        aggregation(name + ".wc", edge_dim, node_dim * node_dim, rng),
        bc(name + ".bc", fan_in_uniform(1, node_dim, node_dim, rng)) {}

  Eigen::Index node_dim() const { return p2.rows(); }
  Eigen::Index edge_dim() const { return p1.rows(); }

  std::vector<ad::Tensor*> parameters() { return {&p1, &p2, &aggregation.weight, &aggregation.bias, &bc}; }
};

/// φ_e = ⟨L(e), p⟩ / max(‖p‖, 1e-12), one row per edge (M × 1).
inline ad::Var edge_scores(const ad::Var& edge_features, const ad::Var& p1) {
  if (p1.cols() != 1 || p1.rows() != edge_features.cols()) {
    throw PoolError(PoolError::Kind::ShapeMismatch, "edge_scores: projection length differs from d_e");
  }
  return ad::div_scalar(ad::matmul(edge_features, p1), ad::l2_norm(p1));
}

/// L''(e) = L(e) ⊙ σ(φ_e) with the scalar gate broadcast across channels.
inline ad::Var gate_edges(const ad::Var& edge_features, const ad::Var& scores) {
  if (scores.cols() != 1 || scores.rows() != edge_features.rows()) {
    throw PoolError(PoolError::Kind::ShapeMismatch, "gate_edges: one score per edge expected");
  }
  return ad::mul_rows(edge_features, ad::sigmoid(scores));
}

/// Edge-to-node scores (n × 1). NodeOnly drops the incident-edge sum and the
/// (1−δ) factor; EdgeOnly keeps only the incident-edge sum.
inline ad::Var node_scores(ad::Tape& tape, const ad::Var& x, const ad::Var& p2, double delta,
                           const ad::Var& edge_score, const NeighborIndex& index,
                           ScoreMode mode = ScoreMode::EdgeToNode) {
  const auto n = static_cast<Eigen::Index>(index.size());
  if (x.rows() != n) throw PoolError(PoolError::Kind::ShapeMismatch, "node_scores: node count differs");
  if (p2.cols() != 1 || p2.rows() != x.cols()) {
    throw PoolError(PoolError::Kind::ShapeMismatch, "node_scores: projection length differs from d");
  }
  ad::Var node_term = ad::div_scalar(ad::matmul(x, p2), ad::l2_norm(p2));
  if (mode == ScoreMode::NodeOnly) return node_term;

  // Incidences sorted by edge row: every node then sums its edge scores in
  // an order that does not depend on node labels.
  std::vector<std::pair<int, int>> incidences;
  for (std::size_t i = 0; i < index.size(); ++i) {
    for (const Incidence& inc : index[i]) incidences.emplace_back(inc.edge, static_cast<int>(i));
  }
  std::sort(incidences.begin(), incidences.end());
  std::vector<int> edge_rows;
  std::vector<int> owners;
  for (const auto& [e, owner] : incidences) {
    edge_rows.push_back(e);
    owners.push_back(owner);
  }
  ad::Var edge_term = edge_rows.empty()
                          ? tape.constant(Matrix::Zero(n, 1))
                          : ad::scatter_add_rows(ad::gather_rows(edge_score, std::move(edge_rows)),
                                                 std::move(owners), n);
  if (mode == ScoreMode::EdgeOnly) return edge_term;
  return ad::add(ad::scalar_mul(node_term, 1.0 - delta), edge_term);
}

/// Greedy hard clustering. Argmax and top-k are restricted to unassigned
/// nodes; ties go to the lowest node index / lowest edge row.
inline ClusterAssignment iterate_n_top(std::span<const double> node_score, std::span<const double> edge_score,
                                       const NeighborIndex& index, const PoolConfig& cfg,
                                       std::vector<bool>* assigned_out = nullptr) {
  cfg.validate();
  const std::size_t n = index.size();
  if (n == 0) throw PoolError(PoolError::Kind::EmptyGraph, "iterate_n_top on an empty graph");
  if (node_score.size() != n) throw PoolError(PoolError::Kind::ShapeMismatch, "one node score per node expected");
  for (double s : node_score) {
    if (!std::isfinite(s)) throw PoolError(PoolError::Kind::NonFinite, "non-finite node score");
  }
  for (double s : edge_score) {
    if (!std::isfinite(s)) throw PoolError(PoolError::Kind::NonFinite, "non-finite edge score");
  }

  std::vector<bool> assigned(n, false);
  std::size_t remaining = n;
  ClusterAssignment out;
  const auto take = static_cast<std::size_t>(cfg.beta_cap - 1);
  std::vector<Incidence> candidates;

  for (int k = 0; k < cfg.gamma && remaining > 0; ++k) {
    std::size_t core = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (assigned[v]) continue;
      if (core == n || node_score[v] > node_score[core]) core = v;
    }
    Cluster cluster;
    cluster.core = static_cast<int>(core);
    assigned[core] = true;
    --remaining;

    candidates.clear();
    for (const Incidence& inc : index[core]) {
      if (inc.edge < 0 || static_cast<std::size_t>(inc.edge) >= edge_score.size()) {
        throw PoolError(PoolError::Kind::ShapeMismatch, "edge row outside the edge score table");
      }
      if (!assigned[static_cast<std::size_t>(inc.neighbor)]) candidates.push_back(inc);
    }
    const std::size_t keep = std::min(take, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [&](const Incidence& a, const Incidence& b) {
                        const double sa = edge_score[static_cast<std::size_t>(a.edge)];
                        const double sb = edge_score[static_cast<std::size_t>(b.edge)];
                        if (sa != sb) return sa > sb;
                        return a.edge < b.edge;
                      });
    for (std::size_t r = 0; r < keep; ++r) {
      cluster.regulars.push_back(candidates[r].neighbor);
      cluster.edges.push_back(candidates[r].edge);
      assigned[static_cast<std::size_t>(candidates[r].neighbor)] = true;
      --remaining;
    }
    out.clusters.push_back(std::move(cluster));
  }
  if (assigned_out) *assigned_out = std::move(assigned);
  return out;
}

namespace detail {

inline std::vector<int> cores_of(const ClusterAssignment& assign) {
  std::vector<int> cores;
  for (const Cluster& c : assign.clusters) cores.push_back(c.core);
  return cores;
}

inline std::vector<int> first_rows(std::size_t count) {
  std::vector<int> rows(count);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

inline void check_fits(const ClusterAssignment& assign, int gamma) {
  if (gamma < 1 || assign.size() > static_cast<std::size_t>(gamma)) {
    throw PoolError(PoolError::Kind::ShapeMismatch, "more clusters than gamma rows");
  }
}

}  // namespace detail

/// N-E aggregation into a γ × d basis; rows past the last cluster are zero.
inline ad::Var ne_aggregate(ad::Tape& tape, const ClusterAssignment& assign, const ad::Var& x,
                            const ad::Var& gated_edges, PoolParams& params, int gamma) {
  detail::check_fits(assign, gamma);
  const Eigen::Index d = x.cols();
  if (params.node_dim() != d || params.edge_dim() != gated_edges.cols()) {
    throw PoolError(PoolError::Kind::ShapeMismatch, "ne_aggregate: parameter dimensions differ from inputs");
  }
  const auto k_count = static_cast<Eigen::Index>(assign.size());
  ad::Var rows = ad::gather_rows(x, detail::cores_of(assign));

  std::vector<int> retained;
  std::vector<ad::Message> messages;
  for (std::size_t k = 0; k < assign.clusters.size(); ++k) {
    const Cluster& c = assign.clusters[k];
    for (std::size_t r = 0; r < c.regulars.size(); ++r) {
      messages.push_back({static_cast<int>(retained.size()), c.regulars[r], static_cast<int>(k), 1.0});
      retained.push_back(c.edges[r]);
    }
  }
  if (!retained.empty()) {
    ad::Var weights = params.aggregation(tape, ad::gather_rows(gated_edges, std::move(retained)));
    rows = ad::add(rows, ad::edge_conditioned_sum(weights, x, std::move(messages), k_count));
  }
  rows = ad::add_bias(rows, tape.leaf(params.bc));
  return ad::scatter_add_rows(rows, detail::first_rows(assign.size()), gamma);
}

/// Feature-selection readout: row k = X'(core_k), zero padded.
inline ad::Var readout_feature_selection(const ClusterAssignment& assign, const ad::Var& x, int gamma) {
  detail::check_fits(assign, gamma);
  return ad::scatter_add_rows(ad::gather_rows(x, detail::cores_of(assign)), detail::first_rows(assign.size()),
                              gamma);
}

/// Fully-connected readout: row k = mean of the member features of cluster k.
inline ad::Var readout_fully_connected(const ClusterAssignment& assign, const ad::Var& x, int gamma) {
  detail::check_fits(assign, gamma);
  std::vector<int> members;
  std::vector<int> dst;
  std::vector<double> coef;
  for (std::size_t k = 0; k < assign.clusters.size(); ++k) {
    const auto m = assign.clusters[k].members();
    for (int v : m) {
      members.push_back(v);
      dst.push_back(static_cast<int>(k));
      coef.push_back(1.0 / static_cast<double>(m.size()));
    }
  }
  return ad::scatter_add_rows(ad::gather_rows(x, std::move(members)), std::move(dst), gamma, std::move(coef));
}

struct PooledGraph {
  ad::Var basis;  // γ × d
  ClusterAssignment assignment;
  ScoreState scores;
};

inline std::vector<double> column_values(const ad::Var& v) {
  return std::vector<double>(v.value().data(), v.value().data() + v.value().size());
}

/// Scores, clusters and reads out one graph. `x` holds the convolved node
/// features (n × d) and `edge_features` the edge table L' (M × d_e).
inline PooledGraph pool_forward(ad::Tape& tape, const NeighborIndex& index, const ad::Var& x,
                                const ad::Var& edge_features, PoolParams& params, const PoolConfig& cfg) {
  cfg.validate();
  if (index.size() == 0) throw PoolError(PoolError::Kind::EmptyGraph, "pool_forward on an empty graph");
  PooledGraph out;
  ad::Var phi_nodes;
  ad::Var gated = edge_features;
  ad::Var phi_edges;
  const bool has_edges = edge_features.rows() > 0;
  if (has_edges) {
    phi_edges = edge_scores(edge_features, tape.leaf(params.p1));
    gated = gate_edges(edge_features, phi_edges);
  } else {
    phi_edges = tape.constant(Matrix::Zero(0, 1));
  }
  phi_nodes = node_scores(tape, x, tape.leaf(params.p2), cfg.delta, phi_edges, index, cfg.score_mode);

  out.scores.edge_scores = column_values(phi_edges);
  out.scores.node_scores = column_values(phi_nodes);
  out.scores.gated_edges = gated.value();
  out.assignment = iterate_n_top(out.scores.node_scores, out.scores.edge_scores, index, cfg, &out.scores.assigned);

  switch (cfg.readout_mode) {
    case ReadoutMode::NeAggregation:
      out.basis = ne_aggregate(tape, out.assignment, x, gated, params, cfg.gamma);
      break;
    case ReadoutMode::FeatureSelection:
      out.basis = readout_feature_selection(out.assignment, x, cfg.gamma);
      break;
    case ReadoutMode::FullyConnected:
      out.basis = readout_fully_connected(out.assignment, x, cfg.gamma);
      break;
  }
  return out;
}

/// {"graph_id":…, "clusters":[{"core":i,"regulars":[…],"edges":[[i,j],…]},…]}
inline nlohmann::json assignment_to_json(const nlohmann::json& graph_id, const ClusterAssignment& assign,
                                         const AttributedGraph& g) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const Cluster& c : assign.clusters) {
    nlohmann::json edges = nlohmann::json::array();
    for (int e : c.edges) {
      edges.push_back({g.edges[static_cast<std::size_t>(e)].source, g.edges[static_cast<std::size_t>(e)].target});
    }
    clusters.push_back({{"core", c.core}, {"regulars", c.regulars}, {"edges", std::move(edges)}});
  }
  return {{"graph_id", graph_id}, {"clusters", std::move(clusters)}};
}

}  // namespace ehcpool

#endif  // EHCPOOL_EHC_POOL_HPP
