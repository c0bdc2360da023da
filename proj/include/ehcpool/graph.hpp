#ifndef EHCPOOL_GRAPH_HPP
#define EHCPOOL_GRAPH_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace ehcpool {

/// Row-major dense matrix used for every feature table in the engine.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class GraphError : public std::runtime_error {
 public:
  enum class Kind {
    IndexOutOfRange,
    SelfLoop,
    DuplicateEdge,
    NonFinite,
    ShapeMismatch,
    ParseError,
    DimensionMismatch,
  };

  GraphError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Edge {
  int source = 0;
  int target = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected graph with dense node and edge attributes. Each unordered pair
/// is stored once; edge row e of `edge_features` belongs to `edges[e]`.
struct AttributedGraph {
  int n = 0;
  Matrix node_features;  // n x d
  Matrix edge_features;  // M x d_e
  std::vector<Edge> edges;
  std::optional<int> label;

  std::size_t num_edges() const { return edges.size(); }
  Eigen::Index node_dim() const { return node_features.cols(); }
  Eigen::Index edge_dim() const { return edge_features.cols(); }

  friend bool operator==(const AttributedGraph& a, const AttributedGraph& b) {
    return a.n == b.n && a.edges == b.edges && a.label == b.label &&
           a.node_features.rows() == b.node_features.rows() &&
           a.node_features.cols() == b.node_features.cols() &&
           a.edge_features.rows() == b.edge_features.rows() &&
           a.edge_features.cols() == b.edge_features.cols() &&
           a.node_features == b.node_features && a.edge_features == b.edge_features;
  }
};

struct Incidence {
  int neighbor = 0;
  int edge = 0;

  friend bool operator==(const Incidence&, const Incidence&) = default;
};

/// Ne(v) for every node, sorted ascending by neighbor index.
struct NeighborIndex {
  std::vector<std::vector<Incidence>> adjacency;

  const std::vector<Incidence>& operator[](std::size_t node) const { return adjacency[node]; }
  std::size_t size() const { return adjacency.size(); }
  std::size_t degree(std::size_t node) const { return adjacency[node].size(); }
};

struct GraphDataset {
  std::vector<AttributedGraph> graphs;
  Eigen::Index node_dim = 0;
  Eigen::Index edge_dim = 0;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return graphs.size(); }

  friend bool operator==(const GraphDataset& a, const GraphDataset& b) {
    return a.graphs == b.graphs && a.node_dim == b.node_dim && a.edge_dim == b.edge_dim &&
           a.provenance == b.provenance;
  }
};

namespace detail {

inline std::string row_msg(const char* what, std::size_t row) {
  return std::string(what) + " at row " + std::to_string(row);
}

inline void check_finite(const Matrix& m, const char* table) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw GraphError(GraphError::Kind::NonFinite,
                         std::string("non-finite ") + table + " feature at row " + std::to_string(r));
      }
    }
  }
}

}  // namespace detail

inline void validate_graph(const AttributedGraph& g) {
  using Kind = GraphError::Kind;
  if (g.n <= 0) throw GraphError(Kind::ShapeMismatch, "node count must be positive");
  if (g.node_features.rows() != g.n) {
    throw GraphError(Kind::ShapeMismatch, "node feature table has " +
                                              std::to_string(g.node_features.rows()) +
                                              " rows, expected " + std::to_string(g.n));
  }
  if (g.edge_features.rows() != static_cast<Eigen::Index>(g.edges.size())) {
    throw GraphError(Kind::ShapeMismatch, "edge feature table has " +
                                              std::to_string(g.edge_features.rows()) +
                                              " rows, expected " + std::to_string(g.edges.size()));
  }
  std::vector<std::pair<int, int>> seen;
  seen.reserve(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [i, j] = g.edges[e];
    if (i < 0 || i >= g.n || j < 0 || j >= g.n) {
      throw GraphError(Kind::IndexOutOfRange, detail::row_msg("edge endpoint out of range", e));
    }
    if (i == j) throw GraphError(Kind::SelfLoop, detail::row_msg("self-loop", e));
    seen.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::vector<std::size_t> order(seen.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seen[a] < seen[b]; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (seen[order[k]] == seen[order[k - 1]]) {
      throw GraphError(Kind::DuplicateEdge, detail::row_msg("duplicate undirected edge", order[k]));
    }
  }
  detail::check_finite(g.node_features, "node");
  detail::check_finite(g.edge_features, "edge");
}

inline NeighborIndex build_neighbor_index(const AttributedGraph& g) {
  validate_graph(g);
  NeighborIndex index;
  index.adjacency.resize(static_cast<std::size_t>(g.n));
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [i, j] = g.edges[e];
    index.adjacency[i].push_back({j, static_cast<int>(e)});
    index.adjacency[j].push_back({i, static_cast<int>(e)});
  }
  for (auto& list : index.adjacency) {
    std::sort(list.begin(), list.end(), [](const Incidence& a, const Incidence& b) {
      return a.neighbor < b.neighbor;
    });
  }
  return index;
}

/// Disjoint union of graphs; node and edge rows of graph k start at the
/// returned offsets. Labels are dropped.
struct MergedGraph {
  AttributedGraph graph;
  std::vector<int> node_offsets;  // size = count + 1
  std::vector<int> edge_offsets;  // size = count + 1
};

template <typename Range>
MergedGraph merge_graphs(const Range& graphs) {
  MergedGraph out;
  int total_n = 0;
  int total_m = 0;
  Eigen::Index d = -1;
  Eigen::Index de = -1;
  out.node_offsets.push_back(0);
  out.edge_offsets.push_back(0);
  for (const AttributedGraph* g : graphs) {
    if (d < 0) {
      d = g->node_dim();
      de = g->edge_dim();
    } else if (d != g->node_dim() || de != g->edge_dim()) {
      throw GraphError(GraphError::Kind::DimensionMismatch, "cannot merge graphs of different dimensions");
    }
    total_n += g->n;
    total_m += static_cast<int>(g->num_edges());
    out.node_offsets.push_back(total_n);
    out.edge_offsets.push_back(total_m);
  }
  AttributedGraph& m = out.graph;
  m.n = total_n;
  m.node_features.resize(total_n, std::max<Eigen::Index>(d, 0));
  m.edge_features.resize(total_m, std::max<Eigen::Index>(de, 0));
  m.edges.reserve(static_cast<std::size_t>(total_m));
  std::size_t k = 0;
  for (const AttributedGraph* g : graphs) {
    const int no = out.node_offsets[k];
    const int eo = out.edge_offsets[k];
    if (g->n > 0) m.node_features.middleRows(no, g->n) = g->node_features;
    if (g->num_edges() > 0) {
      m.edge_features.middleRows(eo, static_cast<Eigen::Index>(g->num_edges())) = g->edge_features;
    }
    for (const Edge& e : g->edges) m.edges.push_back({e.source + no, e.target + no});
    ++k;
  }
  return out;
}

}  // namespace ehcpool

#endif  // EHCPOOL_GRAPH_HPP
