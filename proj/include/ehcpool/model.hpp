#ifndef EHCPOOL_MODEL_HPP
#define EHCPOOL_MODEL_HPP

#include <cstdint>
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
#include "ehcpool/ehc_pool.hpp"
#include "ehcpool/graph.hpp"

namespace ehcpool {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// SplitMix64 finaliser; derives independent stream seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return step(step(step(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

enum class PoolingLayer { EhcPool, Passthrough };

inline const char* to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::EdgeToNode: return "edge_to_node";
    case ScoreMode::NodeOnly: return "node_only";
    case ScoreMode::EdgeOnly: return "edge_only";
  }
  return "?";
}

inline const char* to_string(ReadoutMode m) {
  switch (m) {
    case ReadoutMode::NeAggregation: return "ne_aggregation";
    case ReadoutMode::FeatureSelection: return "feature_selection";
    case ReadoutMode::FullyConnected: return "fully_connected";
  }
  return "?";
}

inline ScoreMode score_mode_from_string(const std::string& s) {
  if (s == "edge_to_node") return ScoreMode::EdgeToNode;
  if (s == "node_only") return ScoreMode::NodeOnly;
  if (s == "edge_only") return ScoreMode::EdgeOnly;
  throw ConfigError("unknown score mode: " + s);
}

inline ReadoutMode readout_mode_from_string(const std::string& s) {
  if (s == "ne_aggregation") return ReadoutMode::NeAggregation;
  if (s == "feature_selection") return ReadoutMode::FeatureSelection;
  if (s == "fully_connected") return ReadoutMode::FullyConnected;
  throw ConfigError("unknown readout mode: " + s);
}

struct ModelConfig {
  Eigen::Index node_dim = 21;
  Eigen::Index edge_dim = 21;
  Eigen::Index hidden1 = 8;
  Eigen::Index hidden2 = 8;
  Eigen::Index filter_hidden = 0;  // 0: 2·edge_dim + 1
  PoolConfig pool;
  PoolingLayer pooling = PoolingLayer::EhcPool;
  bool edge_update = false;
  double lr = 1e-3;
  int epochs = 500;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int folds = 5;
  int repeats = 10;

  Eigen::Index head_input() const { return pool.gamma * hidden2; }
  Eigen::Index head_hidden() const { return 2 * head_input() + 1; }

  void validate() const {
    if (node_dim < 1 || edge_dim < 1 || hidden1 < 1 || hidden2 < 1 || filter_hidden < 0) {
      throw ConfigError("model dimensions must be positive");
    }
    try {
      pool.validate();
    } catch (const PoolError& e) {
      throw ConfigError(e.what());
    }
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"node_dim", node_dim},
            {"edge_dim", edge_dim},
            {"hidden1", hidden1},
            {"hidden2", hidden2},
            {"filter_hidden", filter_hidden},
            {"gamma", pool.gamma},
            {"beta_cap", pool.beta_cap},
            {"delta", pool.delta},
            {"score_mode", to_string(pool.score_mode)},
            {"readout_mode", to_string(pool.readout_mode)},
            {"pooling", pooling == PoolingLayer::EhcPool ? "ehcpool" : "passthrough"},
            {"edge_update", edge_update},
            {"lr", lr},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"folds", folds},
            {"repeats", repeats}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
      c.node_dim = j.at("node_dim").get<Eigen::Index>();
      c.edge_dim = j.at("edge_dim").get<Eigen::Index>();
      c.hidden1 = j.at("hidden1").get<Eigen::Index>();
      c.hidden2 = j.at("hidden2").get<Eigen::Index>();
      c.filter_hidden = j.at("filter_hidden").get<Eigen::Index>();
      c.pool.gamma = j.at("gamma").get<int>();
      c.pool.beta_cap = j.at("beta_cap").get<int>();
      c.pool.delta = j.at("delta").get<double>();
      c.pool.score_mode = score_mode_from_string(j.at("score_mode").get<std::string>());
      c.pool.readout_mode = readout_mode_from_string(j.at("readout_mode").get<std::string>());
      c.pooling = j.at("pooling").get<std::string>() == "passthrough" ? PoolingLayer::Passthrough
                                                                        : PoolingLayer::EhcPool;
      c.edge_update = j.at("edge_update").get<bool>();
      c.lr = j.at("lr").get<double>();
      c.epochs = j.at("epochs").get<int>();
      c.batch_size = j.at("batch_size").get<int>();
      c.seed = j.at("seed").get<std::uint64_t>();
      c.folds = j.at("folds").get<int>();
      c.repeats = j.at("repeats").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    return c;
  }
};

/// Several graphs merged into one disjoint union so convolution and batch
/// normalisation run over the whole minibatch.
struct GraphBatch {
  MergedGraph merged;
  NeighborIndex index;
  std::vector<NeighborIndex> local_index;
  std::vector<const AttributedGraph*> graphs;
  std::vector<double> labels;

  std::size_t size() const { return graphs.size(); }
};

inline GraphBatch make_batch(std::span<const AttributedGraph* const> graphs) {
  GraphBatch b;
  b.graphs.assign(graphs.begin(), graphs.end());
  b.merged = merge_graphs(b.graphs);
  b.index = build_neighbor_index(b.merged.graph);
  for (const AttributedGraph* g : b.graphs) {
    b.local_index.push_back(build_neighbor_index(*g));
    b.labels.push_back(g->label ? static_cast<double>(*g->label) : 0.0);
  }
  return b;
}

/// ECC+BN+ReLU → ECC+BN+ReLU → pooling → flatten → MLP(2·in+1) → logit.
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0x1417));
    if (cfg_.edge_update) edge_mlp_ = Linear("edge_update", cfg_.edge_dim, cfg_.edge_dim, rng);
    conv1_ = EccLayer("conv1", cfg_.node_dim, cfg_.hidden1, cfg_.edge_dim, rng, cfg_.filter_hidden);
    conv2_ = EccLayer("conv2", cfg_.hidden1, cfg_.hidden2, cfg_.edge_dim, rng, cfg_.filter_hidden);
    bn1_scale_ = ad::Tensor("bn1.scale", Matrix::Ones(1, cfg_.hidden1));
    bn1_shift_ = ad::Tensor("bn1.shift", Matrix::Zero(1, cfg_.hidden1));
    bn2_scale_ = ad::Tensor("bn2.scale", Matrix::Ones(1, cfg_.hidden2));
    bn2_shift_ = ad::Tensor("bn2.shift", Matrix::Zero(1, cfg_.hidden2));
    bn1_ = ad::BatchNormState(cfg_.hidden1);
    bn2_ = ad::BatchNormState(cfg_.hidden2);
    pool_ = PoolParams("pool", cfg_.hidden2, cfg_.edge_dim, rng);
    head1_ = Linear("head.0", cfg_.head_input(), cfg_.head_hidden(), rng);
    head2_ = Linear("head.1", cfg_.head_hidden(), 1, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  struct Output {
    ad::Var logits;  // B × 1
    std::vector<ClusterAssignment> assignments;
  };

  Output forward(ad::Tape& tape, const GraphBatch& batch, ad::Mode mode) {
    const AttributedGraph& g = batch.merged.graph;
    if (g.node_dim() != cfg_.node_dim || g.edge_dim() != cfg_.edge_dim) {
      throw ConfigError("graph dimensions (" + std::to_string(g.node_dim()) + "," + std::to_string(g.edge_dim()) +
                        ") differ from the model's (" + std::to_string(cfg_.node_dim) + "," +
                        std::to_string(cfg_.edge_dim) + ")");
    }
    ad::Var x0 = tape.constant(g.node_features);
    ad::Var edges = tape.constant(g.edge_features);
    if (cfg_.edge_update) edges = ad::relu(edge_mlp_(tape, edges));

    ad::Var h = conv1_.forward(tape, g, batch.index, x0, edges);
    h = ad::relu(ad::batch_norm(h, tape.leaf(bn1_scale_), tape.leaf(bn1_shift_), bn1_, mode));
    h = conv2_.forward(tape, g, batch.index, h, edges);
    h = ad::relu(ad::batch_norm(h, tape.leaf(bn2_scale_), tape.leaf(bn2_shift_), bn2_, mode));

    Output out;
    std::vector<ad::Var> flat;
    const auto& no = batch.merged.node_offsets;
    const auto& eo = batch.merged.edge_offsets;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      std::vector<int> rows(static_cast<std::size_t>(no[k + 1] - no[k]));
      std::iota(rows.begin(), rows.end(), no[k]);
      ad::Var xk = ad::gather_rows(h, rows);
      ad::Var basis;
      if (cfg_.pooling == PoolingLayer::Passthrough) {
        const auto keep = std::min<std::size_t>(rows.size(), static_cast<std::size_t>(cfg_.pool.gamma));
        basis = ad::scatter_add_rows(ad::gather_rows(xk, detail::first_rows(keep)), detail::first_rows(keep),
                                     cfg_.pool.gamma);
        out.assignments.emplace_back();
      } else {
        ad::Var ek;
        if (cfg_.edge_update) {
          std::vector<int> erows(static_cast<std::size_t>(eo[k + 1] - eo[k]));
          std::iota(erows.begin(), erows.end(), eo[k]);
          ek = ad::gather_rows(edges, erows);
        } else {
          ek = tape.constant(batch.graphs[k]->edge_features);
        }
        PooledGraph pooled = pool_forward(tape, batch.local_index[k], xk, ek, pool_, cfg_.pool);
        basis = pooled.basis;
        out.assignments.push_back(std::move(pooled.assignment));
      }
      flat.push_back(ad::reshape(basis, 1, cfg_.head_input()));
    }
    ad::Var z = ad::concat_rows(flat);
    out.logits = head2_(tape, ad::relu(head1_(tape, z)));
    return out;
  }

  std::vector<ad::Tensor*> parameters() {
    std::vector<ad::Tensor*> p;
    auto append = [&](std::vector<ad::Tensor*> more) { p.insert(p.end(), more.begin(), more.end()); };
    if (cfg_.edge_update) append(edge_mlp_.parameters());
    append(conv1_.parameters());
    append({&bn1_scale_, &bn1_shift_});
    append(conv2_.parameters());
    append({&bn2_scale_, &bn2_shift_});
    append(pool_.parameters());
    append(head1_.parameters());
    append(head2_.parameters());
    return p;
  }

  /// Every persistent matrix by name: parameters plus running statistics.
  std::vector<std::pair<std::string, Matrix*>> state() {
    std::vector<std::pair<std::string, Matrix*>> s;
    for (ad::Tensor* t : parameters()) s.emplace_back(t->name, &t->value);
    s.emplace_back("bn1.running_mean", &bn1_.running_mean);
    s.emplace_back("bn1.running_var", &bn1_.running_var);
    s.emplace_back("bn2.running_mean", &bn2_.running_mean);
    s.emplace_back("bn2.running_var", &bn2_.running_var);
    return s;
  }

  EccLayer& conv1() { return conv1_; }
  EccLayer& conv2() { return conv2_; }
  PoolParams& pool() { return pool_; }

 private:
  ModelConfig cfg_;
  Linear edge_mlp_;
  EccLayer conv1_;
  EccLayer conv2_;
  ad::Tensor bn1_scale_, bn1_shift_, bn2_scale_, bn2_shift_;
  ad::BatchNormState bn1_, bn2_;
  PoolParams pool_;
  Linear head1_;
  Linear head2_;
};

inline Model build_model(const ModelConfig& cfg) { return Model(cfg); }

}  // namespace ehcpool

#endif  // EHCPOOL_MODEL_HPP
