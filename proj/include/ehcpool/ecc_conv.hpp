#ifndef EHCPOOL_ECC_CONV_HPP
#define EHCPOOL_ECC_CONV_HPP

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ehcpool/autodiff.hpp"
#include "ehcpool/graph.hpp"

namespace ehcpool {

/// Uniform(−1/√fan_in, 1/√fan_in) initialisation.
inline Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

/// Affine map x·W + b on row vectors.
struct Linear {
  ad::Tensor weight;  // in × out
  ad::Tensor bias;    // 1 × out

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
      : weight(name + ".weight", fan_in_uniform(in, out, in, rng)),
        bias(name + ".bias", fan_in_uniform(1, out, in, rng)) {}

  ad::Var operator()(ad::Tape& tape, const ad::Var& x) {
    return ad::add_bias(ad::matmul(x, tape.leaf(weight)), tape.leaf(bias));
  }

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
  std::vector<ad::Tensor*> parameters() { return {&weight, &bias}; }
};

/// Edge-conditioned convolution
///   X^l(v_i) = 1/|Ne(v_i)| · Σ_{v_j ∈ Ne(v_i)} F(L(v_i,v_j)) · X^{l−1}(v_j) + b
/// where the filter network F maps an edge feature to an out×in matrix.
/// Isolated nodes receive only the bias.
class EccLayer {
 public:
  EccLayer() = default;

  /// `filter_hidden` = 0 selects the default width 2·edge_dim + 1.
  EccLayer(const std::string& name, Eigen::Index in_dim, Eigen::Index out_dim, Eigen::Index edge_dim,
           std::mt19937_64& rng, Eigen::Index filter_hidden = 0)
      : in_dim_(in_dim), out_dim_(out_dim), edge_dim_(edge_dim) {
    const Eigen::Index hidden = filter_hidden > 0 ? filter_hidden : 2 * edge_dim + 1;
    filter_hidden_ = Linear(name + ".filter.0", edge_dim, hidden, rng);
    filter_out_ = Linear(name + ".filter.1", hidden, out_dim * in_dim, rng);
    bias_ = ad::Tensor(name + ".bias", fan_in_uniform(1, out_dim, in_dim, rng));
  }

  Eigen::Index in_dim() const { return in_dim_; }
  Eigen::Index out_dim() const { return out_dim_; }
  Eigen::Index edge_dim() const { return edge_dim_; }

  Linear& filter_hidden() { return filter_hidden_; }
  Linear& filter_output() { return filter_out_; }
  ad::Tensor& bias() { return bias_; }

  /// Filter network over a batch of edge features: E × d_e -> E × (out·in),
  /// each row a row-major out × in matrix.
  ad::Var filter_forward(ad::Tape& tape, const ad::Var& edge_features) {
    if (edge_features.cols() != edge_dim_) {
      throw ad::AutodiffError(ad::AutodiffError::Kind::ShapeMismatch, "ecc filter: edge feature width");
    }
    return filter_out_(tape, ad::relu(filter_hidden_(tape, edge_features)));
  }

  /// The out × in matrix F(edge_feature) for a single edge.
  Matrix filter_matrix(const Eigen::Ref<const Eigen::RowVectorXd>& edge_feature) {
    ad::Tape tape;
    Matrix row = edge_feature;
    ad::Var flat = filter_forward(tape, tape.constant(std::move(row)));
    return Eigen::Map<const Matrix>(flat.value().data(), out_dim_, in_dim_);
  }

  ad::Var forward(ad::Tape& tape, const AttributedGraph& g, const NeighborIndex& index, const ad::Var& x_prev,
                  const ad::Var& edge_features) {
    if (x_prev.rows() != g.n || x_prev.cols() != in_dim_) {
      throw ad::AutodiffError(ad::AutodiffError::Kind::ShapeMismatch, "ecc_forward: node feature shape");
    }
    if (edge_features.rows() != static_cast<Eigen::Index>(g.num_edges())) {
      throw ad::AutodiffError(ad::AutodiffError::Kind::ShapeMismatch, "ecc_forward: edge feature rows");
    }
    // Messages follow edge-row order, so each node sums its neighbours in an
    // order that does not depend on node labels.
    std::vector<ad::Message> messages;
    messages.reserve(2 * g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      const auto [i, j] = g.edges[e];
      const int row = static_cast<int>(e);
      messages.push_back({row, j, i, 1.0 / static_cast<double>(index[static_cast<std::size_t>(i)].size())});
      messages.push_back({row, i, j, 1.0 / static_cast<double>(index[static_cast<std::size_t>(j)].size())});
    }
    ad::Var aggregated;
    if (g.num_edges() == 0) {
      aggregated = tape.constant(Matrix::Zero(g.n, out_dim_));
    } else {
      ad::Var weights = filter_forward(tape, edge_features);
      aggregated = ad::edge_conditioned_sum(weights, x_prev, std::move(messages), g.n);
    }
    return ad::add_bias(aggregated, tape.leaf(bias_));
  }

  std::vector<ad::Tensor*> parameters() {
    return {&filter_hidden_.weight, &filter_hidden_.bias, &filter_out_.weight, &filter_out_.bias, &bias_};
  }

 private:
  Eigen::Index in_dim_ = 0;
  Eigen::Index out_dim_ = 0;
  Eigen::Index edge_dim_ = 0;
  Linear filter_hidden_;
  Linear filter_out_;
  ad::Tensor bias_;
};

}  // namespace ehcpool

#endif  // EHCPOOL_ECC_CONV_HPP
