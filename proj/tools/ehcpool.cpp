// ehcpool: generate synthetic datasets, cross-validate, sweep γ/cap grids and
// export cluster assignments.
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehcpool/ehcpool.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ehcpool;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json manifest(const std::string& command, const json& config, std::uint64_t seed, const std::string& started,
              const std::vector<fs::path>& outputs) {
  json paths = json::array();
  for (const auto& p : outputs) paths.push_back(p.string());
  return {{"command", command},
          {"engine", {{"name", "ehcpool"}, {"version", kVersion}}},
          {"seed", seed},
          {"config", config},
          {"started", started},
          {"finished", utc_now()},
          {"outputs", std::move(paths)}};
}

std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t value) {
  if (flag->count() > 0) return value;
  if (const char* env = std::getenv("EHCPOOL_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used, 0);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("EHCPOOL_SEED is not an unsigned integer: ") + env);
  }
  return 0;
}

const std::map<std::string, std::pair<ScoreMode, ReadoutMode>>& ablations() {
  static const std::map<std::string, std::pair<ScoreMode, ReadoutMode>> table{
      {"none", {ScoreMode::EdgeToNode, ReadoutMode::NeAggregation}},
      {"node-only", {ScoreMode::NodeOnly, ReadoutMode::NeAggregation}},
      {"edge-only", {ScoreMode::EdgeOnly, ReadoutMode::NeAggregation}},
      {"feature-select", {ScoreMode::EdgeToNode, ReadoutMode::FeatureSelection}},
      {"fc-agg", {ScoreMode::EdgeToNode, ReadoutMode::FullyConnected}},
  };
  return table;
}

struct GenArgs {
  std::string spec_file;
  std::string out;
  int nodes = 16;
  int per_class = 100;
  std::string signal = "edge";
  double strength = 0.8;
  double noise = 1.0;
  std::vector<int> planted{3, 8, 12};
  int window = 95;
  int step = 10;
  int length = 295;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string save_model;
  std::string ablation = "none";
  std::string pooling = "ehcpool";
  ModelConfig cfg;
  std::vector<int> gammas;
  std::vector<int> caps;
  int jobs = 1;
  bool quiet = false;
  CLI::Option* seed_opt = nullptr;
};

struct ExportArgs {
  std::string model;
  std::string data;
  std::string out;
};

void add_model_flags(CLI::App* cmd, TrainArgs& a, bool sweep) {
  cmd->add_option("--data", a.data, "Dataset (JSON lines)")->required();
  cmd->add_option("--out", a.out, "Output directory")->required();
  if (!sweep) {
    cmd->add_option("--gamma", a.cfg.pool.gamma, "Clusters kept (γ)")->capture_default_str();
    cmd->add_option("--beta-cap", a.cfg.pool.beta_cap, "Maximum nodes per cluster (⌈βn⌉)")->capture_default_str();
  }
  cmd->add_option("--delta", a.cfg.pool.delta, "Node-term weight δ in [0,1]")->capture_default_str();
  cmd->add_option("--lr", a.cfg.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--epochs", a.cfg.epochs, "Training epochs per fold")->capture_default_str();
  cmd->add_option("--folds", a.cfg.folds, "Cross-validation folds")->capture_default_str();
  cmd->add_option("--repeats", a.cfg.repeats, "Cross-validation repeats")->capture_default_str();
  cmd->add_option("--batch-size", a.cfg.batch_size, "Graphs per minibatch")->capture_default_str();
  cmd->add_option("--hidden1", a.cfg.hidden1, "Width of the first convolution")->capture_default_str();
  cmd->add_option("--hidden2", a.cfg.hidden2, "Width of the second convolution")->capture_default_str();
  cmd->add_option("--filter-hidden", a.cfg.filter_hidden, "Filter network width (0: 2·d_e+1)")
      ->capture_default_str();
  cmd->add_option("--ablation", a.ablation, "Pooling ablation")
      ->check(CLI::IsMember({"none", "node-only", "edge-only", "feature-select", "fc-agg"}))
      ->capture_default_str();
  cmd->add_option("--pooling", a.pooling, "Pooling layer")
      ->check(CLI::IsMember({"ehcpool", "passthrough"}))
      ->capture_default_str();
  cmd->add_flag("--edge-update", a.cfg.edge_update, "Pass edge features through a learned map first");
  a.seed_opt = cmd->add_option("--seed", a.cfg.seed, "Master seed (fallback: EHCPOOL_SEED, then 0)");
  cmd->add_option("--jobs", a.jobs, "Folds trained concurrently")->capture_default_str();
  cmd->add_flag("--quiet", a.quiet, "Suppress per-fold progress");
}

ModelConfig resolve_config(TrainArgs& a, const GraphDataset& ds) {
  ModelConfig cfg = a.cfg;
  cfg.seed = resolve_seed(a.seed_opt, a.cfg.seed);
  cfg.node_dim = ds.node_dim;
  cfg.edge_dim = ds.edge_dim;
  const auto& [sm, rm] = ablations().at(a.ablation);
  cfg.pool.score_mode = sm;
  cfg.pool.readout_mode = rm;
  cfg.pooling = a.pooling == "passthrough" ? PoolingLayer::Passthrough : PoolingLayer::EhcPool;
  cfg.validate();
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");
  return cfg;
}

CvOptions progress(const TrainArgs& a) {
  CvOptions o;
  o.jobs = a.jobs;
  if (!a.quiet) {
    o.on_fold = [](const FoldRecord& r) {
      std::fprintf(stderr, "repeat %d fold %d: ACC %.4f SEN %.4f SPE %.4f F1 %.4f\n", r.repeat, r.fold,
                   r.metrics.acc, r.metrics.sen, r.metrics.spe, r.metrics.f1);
    };
  }
  return o;
}

int cmd_gen(GenArgs& a) {
  const std::string started = utc_now();
  SynthSpec spec;
  WindowConfig w;
  if (!a.spec_file.empty()) {
    std::ifstream in(a.spec_file);
    if (!in) throw std::runtime_error("cannot open " + a.spec_file);
    json j;
    try {
      j = json::parse(in);
      spec.nodes = j.value("nodes", spec.nodes);
      spec.per_class = j.value("per_class", spec.per_class);
      spec.planted = j.value("planted", spec.planted);
      const std::string sig = j.value("signal", std::string("edge"));
      if (sig != "edge" && sig != "node") throw ConfigError("signal must be edge or node");
      spec.signal = sig == "node" ? SignalType::Node : SignalType::Edge;
      spec.strength = j.value("strength", spec.strength);
      spec.noise = j.value("noise", spec.noise);
      spec.loading_lo = j.value("loading_lo", spec.loading_lo);
      spec.loading_hi = j.value("loading_hi", spec.loading_hi);
      spec.jitter = j.value("jitter", spec.jitter);
      spec.amplitude_spread = j.value("amplitude_spread", spec.amplitude_spread);
      spec.template_seed = j.value("template_seed", spec.template_seed);
      spec.seed = j.value("seed", spec.seed);
      if (j.contains("window")) {
        w.width = j["window"].value("width", w.width);
        w.step = j["window"].value("step", w.step);
        w.length = j["window"].value("length", w.length);
      }
    } catch (const json::exception& e) {
      throw ConfigError(a.spec_file + ": " + e.what());
    }
  } else {
    spec.nodes = a.nodes;
    spec.per_class = a.per_class;
    spec.signal = a.signal == "node" ? SignalType::Node : SignalType::Edge;
    spec.strength = a.strength;
    spec.noise = a.noise;
    spec.planted = a.planted;
    w = WindowConfig{a.window, a.step, a.length};
  }
  if (a.seed_opt->count() > 0 || a.spec_file.empty()) spec.seed = resolve_seed(a.seed_opt, a.seed);
  w.validate();
  spec.validate();

  const GraphDataset ds = gen_dataset(spec, w);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(ds, out);
  const fs::path man = fs::path(a.out + ".manifest.json");
  write_json(man, manifest("gen", {{"spec", spec.to_json()}, {"window", w.to_json()}, {"provenance", ds.provenance}},
                           spec.seed, started, {out, dataset_meta_path(out)}));
  std::printf("wrote %zu graphs to %s%s\n", ds.size(), out.string().c_str(),
              spec.strength == 0.0 ? " (null dataset)" : "");
  return 0;
}

void print_summary(const CvSummary& s) {
  std::printf("ACC %.4f (%.4f)  SEN %.4f (%.4f)  SPE %.4f (%.4f)  F1 %.4f (%.4f)  over %zu folds\n", s.acc.mean,
              s.acc.std, s.sen.mean, s.sen.std, s.spe.mean, s.spe.std, s.f1.mean, s.f1.std, s.records.size());
}

json run_config(const ModelConfig& cfg, const TrainArgs& a) {
  json j = cfg.to_json();
  j["ablation"] = a.ablation;
  j["data"] = a.data;
  j["jobs"] = a.jobs;
  return j;
}

int cmd_train(TrainArgs& a) {
  const std::string started = utc_now();
  const GraphDataset ds = load_dataset(a.data);
  const ModelConfig cfg = resolve_config(a, ds);
  const fs::path dir(a.out);
  fs::create_directories(dir);

  const CvSummary s = cross_validate(ds, cfg, progress(a));
  std::vector<fs::path> outputs{dir / "metrics.csv", dir / "loss_history.csv"};
  write_metrics_csv(s, outputs[0]);
  write_loss_history_csv(s, outputs[1]);
  if (!a.save_model.empty()) {
    Model model(cfg);
    train(model, refs_of(ds), mix_seed(cfg.seed, 0x5EED));
    const fs::path ckpt(a.save_model);
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    save_checkpoint(model, ckpt);
    outputs.push_back(ckpt);
  }
  json config = run_config(cfg, a);
  config["pooled"] = {{"acc", s.pooled().acc}, {"tp", s.pooled().tp}, {"total", s.pooled().total()}};
  write_json(dir / "manifest.json", manifest("train", config, cfg.seed, started, outputs));
  print_summary(s);
  return 0;
}

int cmd_sweep(TrainArgs& a) {
  const std::string started = utc_now();
  const GraphDataset ds = load_dataset(a.data);
  const ModelConfig cfg = resolve_config(a, ds);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  const auto cells = sensitivity_sweep(ds, a.gammas, a.caps, cfg, progress(a));
  write_sweep_csv(cells, dir / "sweep.csv");
  json config = run_config(cfg, a);
  config["gammas"] = a.gammas;
  config["beta_caps"] = a.caps;
  write_json(dir / "manifest.json", manifest("sweep", config, cfg.seed, started, {dir / "sweep.csv"}));
  for (const auto& c : cells) std::printf("gamma %d cap %d: ACC %.4f (%.4f)\n", c.gamma, c.beta_cap,
                                          c.summary.acc.mean, c.summary.acc.std);
  return 0;
}

int cmd_export(ExportArgs& a) {
  const std::string started = utc_now();
  Model model = load_checkpoint(a.model);
  const GraphDataset ds = load_dataset(a.data);
  const ModelConfig& cfg = model.config();
  if (ds.node_dim != cfg.node_dim || ds.edge_dim != cfg.edge_dim) {
    throw CheckpointError("checkpoint expects dimensions (" + std::to_string(cfg.node_dim) + "," +
                          std::to_string(cfg.edge_dim) + ") but the data has (" + std::to_string(ds.node_dim) +
                          "," + std::to_string(ds.edge_dim) + ")");
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);
  const fs::path file = dir / "clusters.jsonl";
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (std::size_t k = 0; k < ds.size(); ++k) {
    const auto p = predict(model, GraphRefs{&ds.graphs[k]});
    json line = assignment_to_json(k, p.assignments[0], ds.graphs[k]);
    line["logit"] = p.logits[0];
    out << line.dump() << '\n';
  }
  out.close();
  write_json(dir / "manifest.json",
             manifest("export-clusters", {{"model", a.model}, {"data", a.data}, {"model_config", cfg.to_json()}},
                      cfg.seed, started, {file}));
  std::printf("exported %zu assignments to %s\n", ds.size(), file.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-to-node hard-clustering graph pooling"};
  app.set_version_flag("--version", std::string("ehcpool ") + kVersion);
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--spec", gen.spec_file, "SynthSpec JSON file (overrides inline flags)");
  g->add_option("--out", gen.out, "Dataset path (JSON lines)")->required();
  g->add_option("--nodes", gen.nodes)->capture_default_str();
  g->add_option("--per-class", gen.per_class)->capture_default_str();
  g->add_option("--signal", gen.signal)->check(CLI::IsMember({"edge", "node"}))->capture_default_str();
  g->add_option("--strength", gen.strength)->capture_default_str();
  g->add_option("--noise", gen.noise)->capture_default_str();
  g->add_option("--planted", gen.planted, "Planted node subset")->delimiter(',');
  g->add_option("--window", gen.window, "Window width W")->capture_default_str();
  g->add_option("--step", gen.step, "Window step s")->capture_default_str();
  g->add_option("--length", gen.length, "Series length T")->capture_default_str();
  gen.seed_opt = g->add_option("--seed", gen.seed, "Master seed (fallback: EHCPOOL_SEED, then 0)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Repeated stratified cross-validation");
  add_model_flags(t, tr, false);
  t->add_option("--save-model", tr.save_model, "Also train on the full dataset and write a checkpoint");

  TrainArgs sw;
  auto* s = app.add_subcommand("sweep", "Cross-validate every (gamma, beta-cap) pair");
  add_model_flags(s, sw, true);
  s->add_option("--gammas", sw.gammas)->delimiter(',')->required();
  s->add_option("--beta-caps", sw.caps)->delimiter(',')->required();

  ExportArgs ex;
  auto* e = app.add_subcommand("export-clusters", "Write per-graph cluster assignments");
  e->add_option("--model", ex.model, "Checkpoint")->required();
  e->add_option("--data", ex.data, "Dataset")->required();
  e->add_option("--out", ex.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ok) {
    return app.exit(ok);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kConfigError;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*s) return cmd_sweep(sw);
    if (*e) return cmd_export(ex);
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kConfigError;
  } catch (const PoolError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return err.kind() == PoolError::Kind::Config ? kConfigError : kRuntimeError;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kRuntimeError;
  }
  return kRuntimeError;
}
