#ifndef EHCPOOL_DATASET_IO_HPP
#define EHCPOOL_DATASET_IO_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ehcpool/graph.hpp"

// JSON-lines dataset format, one graph per line:
//   {"n":int,"d":int,"de":int,"x":[[..d..];n],"edges":[[i,j];M],"l":[[..de..];M],"label":0|1|null}
// Reals are written with 17 significant digits so a save/load cycle is exact.
// Provenance metadata, when present, lives in a sidecar "<path>.meta.json".

namespace ehcpool {

namespace detail {

inline void append_real(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline void append_rows(std::string& out, const Matrix& m) {
  out += '[';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      append_real(out, m(r, c));
    }
    out += ']';
  }
  out += ']';
}

inline GraphError parse_error(std::size_t line, const std::string& what) {
  return GraphError(GraphError::Kind::ParseError, "line " + std::to_string(line) + ": " + what);
}

inline Matrix read_rows(const nlohmann::json& rows, Eigen::Index expect_rows, Eigen::Index expect_cols,
                        const char* key, std::size_t line) {
  if (!rows.is_array()) throw parse_error(line, std::string("\"") + key + "\" must be an array");
  if (static_cast<Eigen::Index>(rows.size()) != expect_rows) {
    throw GraphError(GraphError::Kind::ShapeMismatch,
                     "line " + std::to_string(line) + ": \"" + key + "\" has " +
                         std::to_string(rows.size()) + " rows, expected " + std::to_string(expect_rows));
  }
  Matrix m(expect_rows, expect_cols);
  for (Eigen::Index r = 0; r < expect_rows; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != expect_cols) {
      throw parse_error(line, std::string("\"") + key + "\" row " + std::to_string(r) +
                                  " has the wrong width");
    }
    for (Eigen::Index c = 0; c < expect_cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw parse_error(line, std::string("non-numeric entry in \"") + key + "\"");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

}  // namespace detail

inline std::string graph_to_json_line(const AttributedGraph& g) {
  std::string out;
  out.reserve(64 + 24 * static_cast<std::size_t>(g.node_features.size() + g.edge_features.size()));
  out += "{\"n\":" + std::to_string(g.n);
  out += ",\"d\":" + std::to_string(g.node_dim());
  out += ",\"de\":" + std::to_string(g.edge_dim());
  out += ",\"x\":";
  detail::append_rows(out, g.node_features);
  out += ",\"edges\":[";
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (e) out += ',';
    out += '[' + std::to_string(g.edges[e].source) + ',' + std::to_string(g.edges[e].target) + ']';
  }
  out += "],\"l\":";
  detail::append_rows(out, g.edge_features);
  out += ",\"label\":";
  out += g.label ? std::to_string(*g.label) : std::string("null");
  out += '}';
  return out;
}

inline AttributedGraph graph_from_json_line(const std::string& text, std::size_t line = 1) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw detail::parse_error(line, e.what());
  }
  if (!j.is_object()) throw detail::parse_error(line, "record is not an object");
  for (const char* key : {"n", "d", "de", "x", "edges", "l", "label"}) {
    if (!j.contains(key)) throw detail::parse_error(line, std::string("missing \"") + key + "\"");
  }
  if (!j["n"].is_number_integer() || !j["d"].is_number_integer() || !j["de"].is_number_integer()) {
    throw detail::parse_error(line, "\"n\", \"d\", \"de\" must be integers");
  }
  AttributedGraph g;
  g.n = j["n"].get<int>();
  const auto d = j["d"].get<Eigen::Index>();
  const auto de = j["de"].get<Eigen::Index>();
  if (g.n <= 0 || d < 0 || de < 0) throw detail::parse_error(line, "negative or zero dimension");
  const auto& edges = j["edges"];
  if (!edges.is_array()) throw detail::parse_error(line, "\"edges\" must be an array");
  for (const auto& e : edges) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
      throw detail::parse_error(line, "edge entries must be [i,j] integer pairs");
    }
    g.edges.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  g.node_features = detail::read_rows(j["x"], g.n, d, "x", line);
  g.edge_features = detail::read_rows(j["l"], static_cast<Eigen::Index>(g.edges.size()), de, "l", line);
  const auto& label = j["label"];
  if (label.is_null()) {
    g.label.reset();
  } else if (label.is_number_integer() && (label.get<int>() == 0 || label.get<int>() == 1)) {
    g.label = label.get<int>();
  } else {
    throw detail::parse_error(line, "\"label\" must be 0, 1 or null");
  }
  try {
    validate_graph(g);
  } catch (const GraphError& e) {
    throw GraphError(e.kind(), "line " + std::to_string(line) + ": " + e.what());
  }
  return g;
}

inline std::filesystem::path dataset_meta_path(const std::filesystem::path& path) {
  return path.string() + ".meta.json";
}

inline void save_dataset(const GraphDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& g : ds.graphs) out << graph_to_json_line(g) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
  const auto meta = dataset_meta_path(path);
  if (!ds.provenance.empty()) {
    std::ofstream m(meta, std::ios::binary);
    m << ds.provenance.dump(2) << '\n';
  } else {
    std::error_code ec;
    std::filesystem::remove(meta, ec);
  }
}

inline GraphDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  GraphDataset ds;
  std::string text;
  std::size_t line = 0;
  std::optional<bool> labeled;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    AttributedGraph g = graph_from_json_line(text, line);
    if (ds.graphs.empty()) {
      ds.node_dim = g.node_dim();
      ds.edge_dim = g.edge_dim();
    } else if (g.node_dim() != ds.node_dim || g.edge_dim() != ds.edge_dim) {
      throw GraphError(GraphError::Kind::DimensionMismatch,
                       "line " + std::to_string(line) + ": dimensions (" + std::to_string(g.node_dim()) +
                           "," + std::to_string(g.edge_dim()) + ") differ from (" +
                           std::to_string(ds.node_dim) + "," + std::to_string(ds.edge_dim) + ")");
    }
    if (!labeled) {
      labeled = g.label.has_value();
    } else if (*labeled != g.label.has_value()) {
      throw detail::parse_error(line, "\"label\" missing in a labeled dataset");
    }
    ds.graphs.push_back(std::move(g));
  }
  const auto meta = dataset_meta_path(path);
  if (std::filesystem::exists(meta)) {
    std::ifstream m(meta);
    try {
      ds.provenance = nlohmann::json::parse(m);
    } catch (const nlohmann::json::parse_error& e) {
      throw GraphError(GraphError::Kind::ParseError, meta.string() + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace ehcpool

#endif  // EHCPOOL_DATASET_IO_HPP
