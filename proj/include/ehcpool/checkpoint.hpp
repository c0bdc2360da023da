#ifndef EHCPOOL_CHECKPOINT_HPP
#define EHCPOOL_CHECKPOINT_HPP

// Checkpoint file (JSON):
//   {"magic":"EHCP1","config":{...ModelConfig...},
//    "tensors":{"<name>":{"shape":[rows,cols],"values":[...row-major...]},...}}
// Doubles are written in shortest round-trip form, so load(save(m)) restores
// every value exactly.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ehcpool/model.hpp"

namespace ehcpool {

inline constexpr const char* kCheckpointMagic = "EHCP1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json checkpoint_to_json(Model& model) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, m] : model.state()) {
    tensors[name] = {{"shape", {m->rows(), m->cols()}},
                     {"values", std::vector<double>(m->data(), m->data() + m->size())}};
  }
  return {{"magic", kCheckpointMagic}, {"config", model.config().to_json()}, {"tensors", std::move(tensors)}};
}

inline Model checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("magic", std::string()) != kCheckpointMagic) {
    throw CheckpointError("not an EHCP1 checkpoint");
  }
  Model model(ModelConfig::from_json(j.at("config")));
  const auto& tensors = j.at("tensors");
  for (const auto& [name, m] : model.state()) {
    if (!tensors.contains(name)) throw CheckpointError("checkpoint lacks tensor " + name);
    const auto& t = tensors.at(name);
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    const auto values = t.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != m->rows() || shape[1] != m->cols() ||
        static_cast<Eigen::Index>(values.size()) != m->size()) {
      throw CheckpointError("tensor " + name + " has a shape that does not match the configuration");
    }
    std::copy(values.begin(), values.end(), m->data());
  }
  return model;
}

inline void save_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << checkpoint_to_json(model).dump() << '\n';
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace ehcpool

#endif  // EHCPOOL_CHECKPOINT_HPP
