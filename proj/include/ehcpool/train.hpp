#ifndef EHCPOOL_TRAIN_HPP
#define EHCPOOL_TRAIN_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ehcpool/autodiff.hpp"
#include "ehcpool/graph.hpp"
#include "ehcpool/metrics.hpp"
#include "ehcpool/model.hpp"
#include "ehcpool/optim.hpp"

namespace ehcpool {

class TrainError : public std::runtime_error {
 public:
  enum class Kind { NonFiniteLoss, EmptySet, TooFewSamples, Unlabeled };

  TrainError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

using GraphRefs = std::vector<const AttributedGraph*>;

inline GraphRefs refs_of(const GraphDataset& ds) {
  GraphRefs r;
  for (const auto& g : ds.graphs) r.push_back(&g);
  return r;
}

struct TrainResult {
  std::vector<double> loss_history;  // mean loss per epoch, weighted by batch size
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Minibatch Adam on mean BCE-with-logits. Shuffling uses `shuffle_seed`;
/// aborts with NonFiniteLoss when a batch loss is NaN or exceeds 1e6.
inline TrainResult train(Model& model, const GraphRefs& data, std::uint64_t shuffle_seed,
                         const EpochCallback& on_epoch = {}) {
  const ModelConfig& cfg = model.config();
  if (data.empty()) throw TrainError(TrainError::Kind::EmptySet, "training set is empty");
  for (const AttributedGraph* g : data) {
    if (!g->label) throw TrainError(TrainError::Kind::Unlabeled, "training graph without label");
  }
  ad::AdamState adam(model.parameters(), ad::AdamOptions{cfg.lr});
  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      GraphRefs members;
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) members.push_back(data[order[k]]);
      GraphBatch batch = make_batch(members);
      adam.zero_grad();
      ad::Tape tape;
      auto out = model.forward(tape, batch, ad::Mode::Train);
      ad::Var loss = ad::bce_with_logits(out.logits, batch.labels);
      const double value = loss.scalar();
      if (!std::isfinite(value) || value > 1e6) {
        throw TrainError(TrainError::Kind::NonFiniteLoss,
                         "loss diverged at epoch " + std::to_string(epoch) + ": " + std::to_string(value));
      }
      tape.backward(loss);
      adam.step();
      total += value * static_cast<double>(members.size());
    }
    result.loss_history.push_back(total / static_cast<double>(data.size()));
    if (on_epoch) on_epoch(epoch, result.loss_history.back());
  }
  return result;
}

struct Prediction {
  std::vector<double> logits;
  std::vector<ClusterAssignment> assignments;
};

inline Prediction predict(Model& model, const GraphRefs& data, std::size_t batch_size = 32) {
  Prediction p;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    GraphRefs members(data.begin() + static_cast<std::ptrdiff_t>(start),
                      data.begin() + static_cast<std::ptrdiff_t>(std::min(data.size(), start + batch_size)));
    GraphBatch batch = make_batch(members);
    ad::Tape tape;
    auto out = model.forward(tape, batch, ad::Mode::Eval);
    for (Eigen::Index k = 0; k < out.logits.rows(); ++k) p.logits.push_back(out.logits.value()(k, 0));
    for (auto& a : out.assignments) p.assignments.push_back(std::move(a));
  }
  return p;
}

inline Metrics evaluate(Model& model, const GraphRefs& test) {
  if (test.empty()) throw TrainError(TrainError::Kind::EmptySet, "evaluation set is empty");
  std::vector<int> labels;
  for (const AttributedGraph* g : test) {
    if (!g->label) throw TrainError(TrainError::Kind::Unlabeled, "evaluation graph without label");
    labels.push_back(*g->label);
  }
  const Prediction p = predict(model, test);
  return Metrics::from_logits(p.logits, labels);
}

/// Fold id per sample; each class is shuffled and dealt round-robin so
/// every fold keeps the class ratio.
inline std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> fold_of(labels.size(), 0);
  int next = 0;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < labels.size(); ++k) {
      if (labels[k] == cls) members.push_back(k);
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t m : members) {
      fold_of[m] = next;
      next = (next + 1) % folds;
    }
  }
  return fold_of;
}

struct FoldRecord {
  int repeat = 0;
  int fold = 0;
  Metrics metrics;
  std::vector<double> loss_history;
};

struct CvSummary {
  std::vector<FoldRecord> records;  // repeat-major, fold-minor
  MeanStd acc, sen, spe, f1;

  void aggregate() {
    std::vector<double> a, s, p, f;
    for (const auto& r : records) {
      a.push_back(r.metrics.acc);
      s.push_back(r.metrics.sen);
      p.push_back(r.metrics.spe);
      f.push_back(r.metrics.f1);
    }
    acc = mean_std(a);
    sen = mean_std(s);
    spe = mean_std(p);
    f1 = mean_std(f);
  }

  /// Pooled confusion counts over every test fold of every repeat.
  Metrics pooled() const {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& r : records) {
      tp += r.metrics.tp;
      fp += r.metrics.fp;
      tn += r.metrics.tn;
      fn += r.metrics.fn;
    }
    return Metrics::from_counts(tp, fp, tn, fn);
  }
};

struct CvOptions {
  int jobs = 1;
  std::function<void(const FoldRecord&)> on_fold;
};

/// Runs `count` independent tasks on up to `jobs` threads.
inline void run_parallel(std::size_t count, int jobs, const std::function<void(std::size_t)>& task) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count <= 1) {
    for (std::size_t k = 0; k < count; ++k) task(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) {
        try {
          task(k);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Repeated stratified k-fold cross-validation with a fresh model per fold.
inline CvSummary cross_validate(const GraphDataset& ds, const ModelConfig& cfg, const CvOptions& options = {}) {
  cfg.validate();
  if (ds.size() < static_cast<std::size_t>(cfg.folds)) {
    throw TrainError(TrainError::Kind::TooFewSamples,
                     std::to_string(ds.size()) + " graphs for " + std::to_string(cfg.folds) + " folds");
  }
  std::vector<int> labels;
  for (const auto& g : ds.graphs) {
    if (!g.label) throw TrainError(TrainError::Kind::Unlabeled, "cross-validation needs labels");
    labels.push_back(*g.label);
  }
  std::vector<std::vector<int>> split;
  for (int r = 0; r < cfg.repeats; ++r) split.push_back(stratified_folds(labels, cfg.folds, mix_seed(cfg.seed, 0xF01D, r)));

  CvSummary summary;
  summary.records.resize(static_cast<std::size_t>(cfg.repeats * cfg.folds));
  std::mutex report_mutex;
  run_parallel(summary.records.size(), options.jobs, [&](std::size_t task) {
    const int r = static_cast<int>(task) / cfg.folds;
    const int f = static_cast<int>(task) % cfg.folds;
    GraphRefs train_set, test_set;
    for (std::size_t k = 0; k < ds.size(); ++k) {
      (split[r][k] == f ? test_set : train_set).push_back(&ds.graphs[k]);
    }
    ModelConfig fold_cfg = cfg;
    fold_cfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(r) + 1, static_cast<std::uint64_t>(f) + 1);
    Model model(fold_cfg);
    FoldRecord rec;
    rec.repeat = r;
    rec.fold = f;
    rec.loss_history = train(model, train_set, mix_seed(fold_cfg.seed, 0x5EED)).loss_history;
    rec.metrics = evaluate(model, test_set);
    summary.records[task] = rec;
    if (options.on_fold) {
      std::lock_guard lock(report_mutex);
      options.on_fold(rec);
    }
  });
  summary.aggregate();
  return summary;
}

struct SweepCell {
  int gamma = 0;
  int beta_cap = 0;
  CvSummary summary;
};

/// One cross-validation per (γ, cap) pair, ordered γ ascending then cap ascending.
inline std::vector<SweepCell> sensitivity_sweep(const GraphDataset& ds, std::vector<int> gammas,
                                                std::vector<int> beta_caps, const ModelConfig& cfg,
                                                const CvOptions& options = {}) {
  if (gammas.empty() || beta_caps.empty()) throw ConfigError("sweep lists must be non-empty");
  std::sort(gammas.begin(), gammas.end());
  std::sort(beta_caps.begin(), beta_caps.end());
  std::vector<SweepCell> cells;
  for (int g : gammas) {
    for (int b : beta_caps) {
      ModelConfig c = cfg;
      c.pool.gamma = g;
      c.pool.beta_cap = b;
      cells.push_back({g, b, cross_validate(ds, c, options)});
    }
  }
  return cells;
}

namespace detail {

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace detail

inline void write_metrics_csv(const CvSummary& s, const std::filesystem::path& path) {
  auto out = detail::open_csv(path);
  out << "repeat,fold,ACC,SEN,SPE,F1\n";
  for (const auto& r : s.records) {
    out << r.repeat << ',' << r.fold << ',' << detail::fmt_real(r.metrics.acc) << ','
        << detail::fmt_real(r.metrics.sen) << ',' << detail::fmt_real(r.metrics.spe) << ','
        << detail::fmt_real(r.metrics.f1) << '\n';
  }
}

inline void write_loss_history_csv(const CvSummary& s, const std::filesystem::path& path) {
  auto out = detail::open_csv(path);
  out << "repeat,fold,epoch,loss\n";
  for (const auto& r : s.records) {
    for (std::size_t e = 0; e < r.loss_history.size(); ++e) {
      out << r.repeat << ',' << r.fold << ',' << e << ',' << detail::fmt_real(r.loss_history[e]) << '\n';
    }
  }
}

inline void write_sweep_csv(const std::vector<SweepCell>& cells, const std::filesystem::path& path) {
  auto out = detail::open_csv(path);
  out << "gamma,beta_cap,mean_acc,std_acc\n";
  for (const auto& c : cells) {
    out << c.gamma << ',' << c.beta_cap << ',' << detail::fmt_real(c.summary.acc.mean) << ','
        << detail::fmt_real(c.summary.acc.std) << '\n';
  }
}

}  // namespace ehcpool

#endif  // EHCPOOL_TRAIN_HPP
