#ifndef EHCPOOL_SYNTH_HPP
#define EHCPOOL_SYNTH_HPP

// Synthetic stand-in for resting-state recordings. Each graph is one
// "subject": n node time series driven by a shared latent factor plus
// independent noise. Loadings come from a fixed template (the "atlas") with
// subject-level jitter, and each node has its own fixed amplitude, so node
// statistics carry region identity. Class 1 carries a planted
// abnormality on a node subset S, either as extra within-S coupling
// (edge signal, variance-matched so node statistics do not change) or as
// inflated noise on S (node signal).
//
// Features follow a sliding-window construction: node channel t is the
// within-window standard deviation, edge channel t the within-window Pearson
// correlation, over all node pairs. This is a surrogate feature builder and
// is labelled as such in the dataset provenance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehcpool/graph.hpp"
#include "ehcpool/model.hpp"

namespace ehcpool {

class SynthError : public std::invalid_argument {
 public:
  enum class Kind { WindowConfig, SynthSpec, UnknownFixture };

  SynthError(Kind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct WindowConfig {
  int width = 95;
  int step = 10;
  int length = 295;

  int window_count() const { return (length - width) / step + 1; }

  void validate() const {
    if (width < 2 || width > length) {
      throw SynthError(SynthError::Kind::WindowConfig, "window width W=" + std::to_string(width) +
                                                           " must satisfy 2 <= W <= T=" + std::to_string(length));
    }
    if (step < 1) throw SynthError(SynthError::Kind::WindowConfig, "window step s must be >= 1");
  }

  nlohmann::json to_json() const { return {{"width", width}, {"step", step}, {"length", length}}; }
};

enum class SignalType { Edge, Node };

struct SynthSpec {
  int nodes = 16;
  std::vector<int> planted{3, 8, 12};
  SignalType signal = SignalType::Edge;
  double strength = 0.8;
  int per_class = 100;
  double noise = 1.0;
  double loading_lo = 0.2;
  double loading_hi = 0.8;
  double jitter = 0.1;          // subject-level sd around the template loadings
  double amplitude_spread = 1.0;  // node i is scaled by 1 + spread·i/(n−1)
  std::uint64_t template_seed = 0x7E3A;
  std::uint64_t seed = 0;

  void validate() const {
    if (nodes < 1) throw SynthError(SynthError::Kind::SynthSpec, "node count must be positive");
    if (per_class < 1) throw SynthError(SynthError::Kind::SynthSpec, "graphs per class must be positive");
    if (!(strength >= 0.0)) throw SynthError(SynthError::Kind::SynthSpec, "signal strength must be >= 0");
    if (!(noise > 0.0)) throw SynthError(SynthError::Kind::SynthSpec, "noise level must be > 0");
    if (!(loading_lo <= loading_hi)) throw SynthError(SynthError::Kind::SynthSpec, "empty loading range");
    if (!(jitter >= 0.0) || !(amplitude_spread >= 0.0)) {
      throw SynthError(SynthError::Kind::SynthSpec, "jitter and amplitude spread must be >= 0");
    }
    for (int v : planted) {
      if (v < 0 || v >= nodes) throw SynthError(SynthError::Kind::SynthSpec, "planted node outside [0,n)");
    }
  }

  nlohmann::json to_json() const {
    return {{"nodes", nodes},
            {"planted", planted},
            {"signal", signal == SignalType::Edge ? "edge" : "node"},
            {"strength", strength},
            {"per_class", per_class},
            {"noise", noise},
            {"loading_lo", loading_lo},
            {"loading_hi", loading_hi},
            {"jitter", jitter},
            {"amplitude_spread", amplitude_spread},
            {"template_seed", template_seed},
            {"seed", seed}};
  }
};

/// n × T series for one subject of the given class.
inline Matrix gen_time_series(const SynthSpec& spec, int class_label, int length, std::uint64_t seed) {
  spec.validate();
  const int n = spec.nodes;
  std::vector<double> a(static_cast<std::size_t>(n));
  {
    std::mt19937_64 tmpl(spec.template_seed);
    std::uniform_real_distribution<double> loading(spec.loading_lo, spec.loading_hi);
    for (double& v : a) v = loading(tmpl);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : a) v += spec.jitter * gauss(rng);
  std::vector<double> shared(static_cast<std::size_t>(length));
  std::vector<double> planted(static_cast<std::size_t>(length));
  for (double& v : shared) v = gauss(rng);
  for (double& v : planted) v = gauss(rng);
  std::vector<bool> in_s(static_cast<std::size_t>(n), false);
  for (int v : spec.planted) in_s[static_cast<std::size_t>(v)] = true;

  const bool active = class_label == 1 && spec.strength > 0.0;
  const double sigma2 = spec.noise * spec.noise;
  Matrix x(n, length);
  for (int i = 0; i < n; ++i) {
    const double ai = a[static_cast<std::size_t>(i)];
    const bool marked = active && in_s[static_cast<std::size_t>(i)];
    double noise_scale = spec.noise;
    double coupling = 0.0;
    double rescale = n > 1 ? 1.0 + spec.amplitude_spread * i / (n - 1) : 1.0;
    if (marked && spec.signal == SignalType::Edge) {
      coupling = spec.strength;
      rescale *= std::sqrt((ai * ai + sigma2) / (ai * ai + sigma2 + coupling * coupling));
    } else if (marked && spec.signal == SignalType::Node) {
      noise_scale *= 1.0 + spec.strength;
    }
    for (int t = 0; t < length; ++t) {
      const double v = ai * shared[static_cast<std::size_t>(t)] + coupling * planted[static_cast<std::size_t>(t)] +
                       noise_scale * gauss(rng);
      x(i, t) = rescale * v;
    }
  }
  return x;
}

struct WindowFeatures {
  Matrix node_features;  // n × K_w
  Matrix edge_features;  // n(n−1)/2 × K_w
  std::vector<Edge> edges;
  bool degenerate = false;  // a zero-variance window forced a correlation to 0
};

inline double pearson(const double* x, const double* y, int len, bool* degenerate = nullptr) {
  double mx = 0.0, my = 0.0;
  for (int k = 0; k < len; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= len;
  my /= len;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int k = 0; k < len; ++k) {
    const double dx = x[k] - mx;
    const double dy = y[k] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Window t covers samples [t·s, t·s + W). Complete graph, edges (i<j) in
/// lexicographic order.
inline WindowFeatures sliding_window_features(const Matrix& series, const WindowConfig& w) {
  WindowConfig cfg = w;
  cfg.length = static_cast<int>(series.cols());
  cfg.validate();
  const int n = static_cast<int>(series.rows());
  const int kw = cfg.window_count();
  WindowFeatures out;
  out.node_features.resize(n, kw);
  const int m = n * (n - 1) / 2;
  out.edge_features.resize(m, kw);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) out.edges.push_back({i, j});
  }
  for (int t = 0; t < kw; ++t) {
    const int start = t * cfg.step;
    for (int i = 0; i < n; ++i) {
      const double* xi = series.row(i).data() + start;
      double mean = 0.0;
      for (int k = 0; k < cfg.width; ++k) mean += xi[k];
      mean /= cfg.width;
      double ss = 0.0;
      for (int k = 0; k < cfg.width; ++k) ss += (xi[k] - mean) * (xi[k] - mean);
      out.node_features(i, t) = std::sqrt(ss / (cfg.width - 1));
    }
    for (int e = 0; e < m; ++e) {
      const auto [i, j] = out.edges[static_cast<std::size_t>(e)];
      out.edge_features(e, t) =
          pearson(series.row(i).data() + start, series.row(j).data() + start, cfg.width, &out.degenerate);
    }
  }
  return out;
}

/// Balanced labelled dataset; graph k has label k % 2 and its own seed
/// derived from (spec.seed, k).
inline GraphDataset gen_dataset(const SynthSpec& spec, const WindowConfig& w) {
  spec.validate();
  w.validate();
  GraphDataset ds;
  bool degenerate = false;
  const int count = 2 * spec.per_class;
  for (int k = 0; k < count; ++k) {
    const int label = k % 2;
    const Matrix series = gen_time_series(spec, label, w.length, mix_seed(spec.seed, 0xDA7A, static_cast<std::uint64_t>(k)));
    WindowFeatures f = sliding_window_features(series, w);
    degenerate = degenerate || f.degenerate;
    AttributedGraph g;
    g.n = spec.nodes;
    g.node_features = std::move(f.node_features);
    g.edge_features = std::move(f.edge_features);
    g.edges = std::move(f.edges);
    g.label = label;
    validate_graph(g);
    ds.graphs.push_back(std::move(g));
  }
  ds.node_dim = w.window_count();
  ds.edge_dim = w.window_count();
  ds.provenance = {{"generator", "ehcpool.synth"},
                   {"features", "surrogate: sliding-window standard deviation (nodes), "
                                "sliding-window Pearson correlation (edges)"},
                   {"spec", spec.to_json()},
                   {"window", w.to_json()},
                   {"null_dataset", spec.strength == 0.0},
                   {"degenerate_windows", degenerate}};
  return ds;
}

/// Small hand-built fixtures: "path4", "triangle", "star4", "singleton".
inline AttributedGraph gen_toy_graph(const std::string& name) {
  AttributedGraph g;
  if (name == "path4") {
    g.n = 4;
    g.node_features = (Matrix(4, 2) << 1, 0, 0, 1, 1, 1, 0, 0).finished();
    g.edges = {{0, 1}, {1, 2}, {2, 3}};
    g.edge_features = (Matrix(3, 1) << 0.3, 0.8, 0.4).finished();
  } else if (name == "triangle") {
    g.n = 3;
    g.node_features = Matrix::Constant(3, 2, 1.0);
    g.edges = {{0, 1}, {0, 2}, {1, 2}};
    g.edge_features = Matrix::Constant(3, 1, 1.0);
  } else if (name == "star4") {
    g.n = 4;
    g.node_features = (Matrix(4, 2) << 0, 0, 2, 0, 0, 4, 1, 1).finished();
    g.edges = {{0, 1}, {0, 2}, {0, 3}};
    g.edge_features = (Matrix(3, 1) << 1, 2, 3).finished();
  } else if (name == "singleton") {
    g.n = 1;
    g.node_features = (Matrix(1, 2) << 3, 4).finished();
    g.edge_features = Matrix(0, 1);
  } else {
    throw SynthError(SynthError::Kind::UnknownFixture, "unknown fixture: " + name);
  }
  validate_graph(g);
  return g;
}

}  // namespace ehcpool

#endif  // EHCPOOL_SYNTH_HPP
