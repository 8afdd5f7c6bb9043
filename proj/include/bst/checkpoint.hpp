#pragma once

// Checkpoint container: model config, training provenance and every
// parameter array under its canonical name. Values are stored as doubles.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "bst/errors.hpp"
#include "bst/model.hpp"
#include "bst/params.hpp"
#include "bst/sample.hpp"

namespace bst {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "bst-checkpoint";

struct CheckpointInfo {
  int best_epoch = 0;
  int epochs_run = 0;
  double val_macro_f1 = 0.0;
  double val_accuracy = 0.0;
  std::uint64_t seed = 0;
  std::string precision = "double";
  std::vector<std::string> class_names;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},     {"d_model", c.d_model},
          {"d_attn", c.d_attn},                  {"n_heads", c.n_heads},
          {"n_layers_trans1", c.n_layers_trans1}, {"n_layers_trans2", c.n_layers_trans2},
          {"ffn_mult", c.ffn_mult},              {"sequence_length", c.seq_len},
          {"n_classes", c.n_classes},            {"tcn_kernel_size", c.tcn.kernel_size},
          {"tcn_layers", c.tcn.layers},          {"dropout", c.dropout}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.d_model = j.at("d_model").get<int>();
  c.d_attn = j.at("d_attn").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers_trans1 = j.at("n_layers_trans1").get<int>();
  c.n_layers_trans2 = j.at("n_layers_trans2").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.seq_len = j.at("sequence_length").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.tcn.kernel_size = j.at("tcn_kernel_size").get<int>();
  c.tcn.layers = j.at("tcn_layers").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

template <typename T>
nlohmann::json checkpoint_to_json(const ModelConfig& config, const ParamStore<T>& params, const CheckpointInfo& info) {
  nlohmann::json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["config"] = model_config_to_json(config);
  doc["train"] = {{"best_epoch", info.best_epoch},     {"epochs_run", info.epochs_run},
                  {"val_macro_f1", info.val_macro_f1}, {"val_accuracy", info.val_accuracy},
                  {"seed", info.seed},                 {"precision", info.precision},
                  {"class_names", info.class_names}};
  nlohmann::json arrays = nlohmann::json::object();
  for (const auto& [name, entry] : params) {
    std::vector<double> data(static_cast<std::size_t>(entry.value.size()));
    for (Eigen::Index i = 0; i < entry.value.size(); ++i) data[static_cast<std::size_t>(i)] = entry.value.data()[i];
    arrays[name] = {{"shape", {entry.value.rows(), entry.value.cols()}}, {"data", data}};
  }
  doc["params"] = std::move(arrays);
  return doc;
}

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ParamStore<T> params;
  CheckpointInfo info;
};

template <typename T>
Checkpoint<T> checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) throw ValidationError("not a checkpoint file");
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint<T> ck;
    ck.config = model_config_from_json(doc.at("config"));
    const auto& tr = doc.at("train");
    ck.info.best_epoch = tr.at("best_epoch").get<int>();
    ck.info.epochs_run = tr.at("epochs_run").get<int>();
    ck.info.val_macro_f1 = tr.at("val_macro_f1").get<double>();
    ck.info.val_accuracy = tr.at("val_accuracy").get<double>();
    ck.info.seed = tr.at("seed").get<std::uint64_t>();
    ck.info.precision = tr.at("precision").get<std::string>();
    ck.info.class_names = tr.at("class_names").get<std::vector<std::string>>();
    for (const auto& [name, array] : doc.at("params").items()) {
      const auto shape = array.at("shape").template get<std::vector<long>>();
      const auto data = array.at("data").template get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] * shape[1] != static_cast<long>(data.size()))
        throw ValidationError("parameter " + name + " has inconsistent shape");
      auto& value = ck.params.add(name, shape[0], shape[1], Init::zeros, 0);
      for (std::size_t i = 0; i < data.size(); ++i) value.data()[i] = static_cast<T>(data[i]);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamStore<T>& params,
                     const CheckpointInfo& info) {
  write_json_file(path, checkpoint_to_json(config, params, info));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json<T>(read_json_file(path));
}

}  // namespace bst
