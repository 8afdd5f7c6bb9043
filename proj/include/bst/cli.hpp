#pragma once

// Command-line driver: clip, ingest, synth, train, eval, plot-cm.
// Exit codes: 0 success, 2 invalid input or usage, 1 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bst/checkpoint.hpp"
#include "bst/clip_planner.hpp"
#include "bst/errors.hpp"
#include "bst/evaluator.hpp"
#include "bst/ingest.hpp"
#include "bst/io.hpp"
#include "bst/model.hpp"
#include "bst/synth.hpp"
#include "bst/trainer.hpp"

namespace bst::cli {

inline constexpr const char* kToolkitVersion = "1.0.0";

inline std::string version_text() {
  return "bst " + std::string(kToolkitVersion) + " (checkpoint format " + std::to_string(kCheckpointVersion) +
         ", sample format " + std::to_string(kSampleFormatVersion) + ")";
}

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string hits;
  std::string manifest;
  std::string detections;
  std::string classes;
  std::string data;
  std::string checkpoint;
  std::string predictions;
  std::string report;
};

inline KeyValueConfig load_config(const Options& o) {
  return o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config);
}

inline std::uint64_t resolve_seed(const Options& o, const KeyValueConfig& kv) {
  if (o.seed) return *o.seed;
  const int s = kv.get_int("seed", 0);
  if (s < 0) throw ConfigError("seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

// ---------------------------------------------------------------------------

inline int cmd_clip(const Options& o, std::ostream& out) {
  const auto kv = load_config(o);
  fs::path hits_path = o.hits;
  if (hits_path.empty()) {
    if (!kv.has("hits")) throw ValidationError("clip: give --hits or set hits= in the config");
    hits_path = fs::path(kv.get_string("hits", ""));
    if (hits_path.is_relative()) hits_path = fs::path(o.config).parent_path() / hits_path;
  }
  const double fps = kv.get_double("fps", 30.0);
  if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  const auto config = clip_config_from(kv, fps);
  const int gap = kv.get_int("gap_threshold", default_gap_threshold(fps));
  const int total_frames = kv.get_int("total_frames", 0);
  const auto hits = read_hits(hits_path);
  const auto rows = plan_manifest(hits, config, fps, gap, total_frames);
  detail::write_text(fs::path(o.out) / "manifest.csv", format_manifest(rows));
  out << "wrote " << rows.size() << " clip windows to " << (fs::path(o.out) / "manifest.csv").string() << "\n";
  return 0;
}

inline int cmd_ingest(const Options& o, std::ostream& out) {
  const auto kv = load_config(o);
  const int L = kv.get_int("sequence_length", 100);
  if (L <= 0) throw ConfigError("sequence_length must be positive");
  const auto rows = read_manifest(o.manifest);

  std::vector<std::string> names;
  if (!o.classes.empty()) {
    names = read_class_map(o.classes);
  } else {
    std::set<std::string> unique;
    for (const auto& r : rows) unique.insert(r.label);
    names.assign(unique.begin(), unique.end());
  }
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < names.size(); ++i) ids[names[i]] = static_cast<int>(i);

  // Parse and check everything before writing.
  std::vector<StrokeSample> samples;
  std::vector<ClipWindow> windows;
  int cleared_total = 0;
  for (const auto& r : rows) {
    const auto it = ids.find(r.label);
    if (it == ids.end()) throw ValidationError("label '" + r.label + "' is missing from the class map");
    const SampleMeta meta{r.match_id, r.window.rally_index, r.window.stroke_index};
    const fs::path det_path = feature_path(o.detections, meta);
    if (!fs::exists(det_path)) throw ValidationError("missing detection file " + det_path.string());
    const RawClip raw = raw_clip_from_json(read_json_file(det_path));
    if (static_cast<int>(raw.frames.size()) != r.window.length())
      throw ValidationError(det_path.string() + ": expected " + std::to_string(r.window.length()) + " frames");
    auto [sample, cleared] = ingest_clip(raw, L, it->second, meta);
    cleared_total += cleared;
    samples.push_back(std::move(sample));
    windows.push_back(r.window);
  }
  write_dataset(o.out, samples, windows, names);
  out << "ingested " << samples.size() << " clips (" << cleared_total << " frames cleared) into " << o.out << "\n";
  return 0;
}

inline SynthSpec synth_spec_from(const KeyValueConfig& kv, std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  spec.samples_per_class = kv.get_int("synth_samples_per_class", 200);
  spec.noise = kv.get_double("synth_noise", spec.noise);
  spec.opponent_noise = kv.get_double("synth_opponent_noise", spec.opponent_noise);
  spec.frames_per_stroke = kv.get_int("synth_frames_per_stroke", spec.frames_per_stroke);
  spec.fps = kv.get_double("synth_fps", spec.fps);
  spec.seq_len = kv.get_int("sequence_length", spec.seq_len);
  spec.n_classes = kv.get_int("n_classes", spec.n_classes);
  spec.validate();
  return spec;
}

inline void write_synth_split(const fs::path& dir, const SynthDataset& d) {
  std::vector<ClipWindow> windows;
  for (const auto& t : d.truth) windows.push_back(t.window);
  write_dataset(dir, d.samples, windows, synth_class_names());
  std::vector<HitAnnotation> hits;
  const std::string match = d.samples.empty() ? std::string("synth") : d.samples.front().meta.match_id;
  std::size_t k = 0;
  for (const auto& rally : d.timeline.rallies)
    for (const int h : rally) hits.push_back({match, h, synth_class_names()[static_cast<std::size_t>(d.hit_labels[k++])]});
  detail::write_text(dir / "hits.csv", format_hits(hits));
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  const auto kv = load_config(o);
  const auto spec = synth_spec_from(kv, resolve_seed(o, kv));
  const int val = kv.get_int("synth_val_per_class", std::max(1, spec.samples_per_class / 4));
  const int test = kv.get_int("synth_test_per_class", std::max(1, spec.samples_per_class / 4));
  if (val <= 0 || test <= 0) throw ConfigError("validation and test sizes must be positive");
  const auto splits = generate_splits(spec, val, test);
  const fs::path root = o.out;
  write_synth_split(root / "train", splits.train);
  write_synth_split(root / "val", splits.val);
  write_synth_split(root / "test", splits.test);
  detail::write_text(root / "classes.csv", format_class_map(synth_class_names()));
  out << "wrote " << splits.train.samples.size() << "/" << splits.val.samples.size() << "/"
      << splits.test.samples.size() << " train/val/test samples to " << root.string() << "\n";
  return 0;
}

template <typename T>
int train_with(const Options& o, const KeyValueConfig& kv, std::ostream& out) {
  const fs::path root = o.data;
  const Dataset train_set = load_dataset(root / "train");
  const Dataset val_set = load_dataset(root / "val");
  if (train_set.samples.empty() || val_set.samples.empty()) throw ValidationError("train and val sets must be non-empty");
  if (train_set.class_names != val_set.class_names) throw ValidationError("train and val class maps differ");

  KeyValueConfig model_kv = kv;
  if (!kv.has("n_classes")) model_kv.set("n_classes", std::to_string(train_set.class_names.size()));
  if (!kv.has("sequence_length")) model_kv.set("sequence_length", std::to_string(train_set.samples.front().seq_len));
  const ModelConfig model_config = model_config_from(model_kv);
  if (model_config.n_classes != static_cast<int>(train_set.class_names.size()))
    throw ConfigError("n_classes does not match the dataset class map");
  TrainConfig train_config = train_config_from(kv);
  train_config.seed = resolve_seed(o, kv);

  BstModel<T> model(model_config, train_config.seed);
  TrainHooks<T> hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    if (r.epoch % 10 == 0 || r.epoch == 1)
      out << "epoch " << r.epoch << " loss " << r.train_loss << " val_acc " << r.val_acc << " val_macro_f1 "
          << r.val_macro_f1 << "\n";
  };
  auto result = train(model, train_set.samples, val_set.samples, train_config, hooks);

  CheckpointInfo info;
  info.best_epoch = result.best_epoch;
  info.epochs_run = static_cast<int>(result.history.size());
  info.val_macro_f1 = result.best_val_macro_f1;
  info.val_accuracy = result.best_val_acc;
  info.seed = train_config.seed;
  info.precision = std::is_same_v<T, float> ? "float" : "double";
  info.class_names = train_set.class_names;
  const fs::path dir = o.out;
  save_checkpoint(dir / "checkpoint.json", model_config, result.best_params, info);
  detail::write_text(dir / "history.csv", format_history(result.history));
  out << "best epoch " << result.best_epoch << " val_macro_f1 " << result.best_val_macro_f1 << "\n";
  return 0;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  const auto kv = load_config(o);
  const auto precision = kv.get_string("precision", "double");
  if (precision == "double") return train_with<double>(o, kv, out);
  if (precision == "float") return train_with<float>(o, kv, out);
  throw ConfigError("precision must be float or double");
}

template <typename T>
EvalReport eval_checkpoint(const nlohmann::json& doc, const Dataset& data) {
  auto ck = checkpoint_from_json<T>(doc);
  if (!ck.info.class_names.empty() && ck.info.class_names != data.class_names)
    throw ValidationError("checkpoint class names differ from the dataset class map");
  const BstModel<T> model(ck.config, std::move(ck.params));
  return evaluate(model, std::span<const StrokeSample>(data.samples));
}

// Predictions file: header label,p_0,...,p_{K-1}; one row of class
// probabilities per sample.
inline EvalReport eval_predictions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  const int K = static_cast<int>(header.size()) - 1;
  if (K <= 0 || header[0] != "label") throw ValidationError(path.string() + ": expected header label,p_0,...");
  for (int k = 0; k < K; ++k)
    if (header[static_cast<std::size_t>(k + 1)] != "p_" + std::to_string(k))
      throw ValidationError(path.string() + ": expected column p_" + std::to_string(k));
  std::vector<double> probs;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (static_cast<int>(f.size()) != K + 1) throw ValidationError(path.string() + ": wrong field count");
    const int label = detail::parse_int(f[0], "label");
    if (label < 0 || label >= K) throw ValidationError(path.string() + ": label out of range");
    labels.push_back(label);
    for (int k = 0; k < K; ++k) probs.push_back(detail::parse_double(f[static_cast<std::size_t>(k + 1)], "probability"));
  }
  return evaluate_probabilities(probs, labels, K);
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  EvalReport report;
  if (!o.predictions.empty()) {
    report = eval_predictions(o.predictions);
  } else {
    if (o.data.empty() || o.checkpoint.empty()) throw ValidationError("eval: give --predictions or --data with --checkpoint");
    const auto doc = read_json_file(o.checkpoint);
    const Dataset data = load_dataset(o.data);
    if (data.samples.empty()) throw ValidationError("eval: dataset is empty");
    const auto precision = doc.contains("train") ? doc["train"].value("precision", "double") : "double";
    report = precision == "float" ? eval_checkpoint<float>(doc, data) : eval_checkpoint<double>(doc, data);
  }
  write_json_file(fs::path(o.out) / "report.json", report_to_json(report));
  out << "accuracy " << report.accuracy << " macro_f1 " << report.macro_f1 << " min_f1 " << report.min_f1
      << " top2 " << report.top2_accuracy << "\n";
  for (const int k : report.empty_classes) out << "warning: class " << k << " has no samples or predictions\n";
  return 0;
}

inline int cmd_plot(const Options& o, std::ostream& out) {
  const EvalReport report = report_from_json(read_json_file(o.report));
  std::vector<std::string> names;
  if (!o.classes.empty()) names = read_class_map(o.classes);
  const fs::path path = fs::path(o.out) / "confusion.svg";
  emit_confusion_plot(report, path, names);
  out << "wrote " << path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

/// Runs one command. args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Stroke-type classification toolkit", "bst"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_text());
  Options o;

  const auto shared = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", o.config, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "random seed (overrides the config)");
    auto* opt = cmd->add_option("--out", o.out, "output directory");
    if (needs_out) opt->required();
  };

  auto* clip = app.add_subcommand("clip", "plan stroke clip windows from hit-frame annotations");
  shared(clip, true);
  clip->add_option("--hits", o.hits, "CSV match_id,frame,label")->check(CLI::ExistingFile);

  auto* ingest = app.add_subcommand("ingest", "turn per-clip detections into fixed-length samples");
  shared(ingest, true);
  ingest->add_option("--manifest", o.manifest, "clip manifest CSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--detections", o.detections, "detections root (features/<match>/<rally>_<stroke>.json)")
      ->required()
      ->check(CLI::ExistingDirectory);
  ingest->add_option("--classes", o.classes, "class map CSV class_id,class_name")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "write a synthetic train/val/test dataset");
  shared(synth, true);

  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint.json and history.csv");
  shared(train_cmd, true);
  train_cmd->add_option("--data", o.data, "directory holding train/ and val/")->required()->check(CLI::ExistingDirectory);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a predictions file; writes report.json");
  shared(eval, true);
  eval->add_option("--data", o.data, "dataset directory")->check(CLI::ExistingDirectory);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint.json")->check(CLI::ExistingFile);
  eval->add_option("--predictions", o.predictions, "CSV label,p_0,...,p_{K-1}")->check(CLI::ExistingFile);

  auto* plot = app.add_subcommand("plot-cm", "render normalized confusion matrices from a report");
  shared(plot, true);
  plot->add_option("--report", o.report, "report.json")->required()->check(CLI::ExistingFile);
  plot->add_option("--classes", o.classes, "class map CSV")->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << version_text() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (clip->parsed()) return cmd_clip(o, out);
    if (ingest->parsed()) return cmd_ingest(o, out);
    if (synth->parsed()) return cmd_synth(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (plot->parsed()) return cmd_plot(o, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace bst::cli
