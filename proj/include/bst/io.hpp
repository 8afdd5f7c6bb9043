#pragma once

// Text formats: hit-frame annotations, clip manifests, class maps, and the
// flat key=value configuration file.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bst/clip_planner.hpp"
#include "bst/errors.hpp"
#include "bst/model.hpp"
#include "bst/sample.hpp"
#include "bst/trainer.hpp"

namespace bst {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline int parse_int(const std::string& text, const std::string& what) {
  int value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ValidationError(what + ": '" + text + "' is not an integer");
  return value;
}

inline double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(what + ": '" + text + "' is not a number");
  }
}

/// Reads a CSV file whose first line must equal the expected header.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw ValidationError(path.string() + ": expected header '" + header + "'");
  const auto n_fields = split_csv_line(header).size();
  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != n_fields)
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(n_fields) +
                            " fields");
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void check_field(const std::string& value) {
  if (value.find_first_of(",\n\r") != std::string::npos)
    throw ValidationError("field '" + value + "' contains a separator");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Hit-frame annotations: match_id,frame,label

inline constexpr const char* kHitsHeader = "match_id,frame,label";

struct HitAnnotation {
  std::string match_id;
  int frame = 0;
  std::string label;
  friend bool operator==(const HitAnnotation&, const HitAnnotation&) = default;
};

inline std::vector<HitAnnotation> read_hits(const std::filesystem::path& path) {
  std::vector<HitAnnotation> hits;
  for (const auto& row : detail::read_csv(path, kHitsHeader))
    hits.push_back({row[0], detail::parse_int(row[1], "frame"), row[2]});
  return hits;
}

inline std::string format_hits(const std::vector<HitAnnotation>& hits) {
  std::string out = std::string(kHitsHeader) + "\n";
  for (const auto& h : hits) {
    detail::check_field(h.match_id);
    detail::check_field(h.label);
    out += h.match_id + "," + std::to_string(h.frame) + "," + h.label + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clip manifest: match_id,rally_index,stroke_index,hit_frame,start_frame,end_frame,label

inline constexpr const char* kManifestHeader = "match_id,rally_index,stroke_index,hit_frame,start_frame,end_frame,label";

struct ManifestRow {
  std::string match_id;
  ClipWindow window;
  std::string label;
  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestRow> rows;
  for (const auto& f : detail::read_csv(path, kManifestHeader)) {
    ManifestRow row;
    row.match_id = f[0];
    row.window.rally_index = detail::parse_int(f[1], "rally_index");
    row.window.stroke_index = detail::parse_int(f[2], "stroke_index");
    row.window.hit_frame = detail::parse_int(f[3], "hit_frame");
    row.window.start = detail::parse_int(f[4], "start_frame");
    row.window.end = detail::parse_int(f[5], "end_frame");
    row.label = f[6];
    if (row.window.start > row.window.end || row.window.hit_frame < row.window.start ||
        row.window.hit_frame > row.window.end)
      throw ValidationError(path.string() + ": inconsistent window for " + row.match_id);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_manifest(const std::vector<ManifestRow>& rows) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : rows) {
    detail::check_field(r.match_id);
    detail::check_field(r.label);
    const auto& w = r.window;
    out += r.match_id + "," + std::to_string(w.rally_index) + "," + std::to_string(w.stroke_index) + "," +
           std::to_string(w.hit_frame) + "," + std::to_string(w.start) + "," + std::to_string(w.end) + "," + r.label +
           "\n";
  }
  return out;
}

/// Groups hit annotations by match and plans one clip per hit. Matches keep
/// their first-appearance order; frames must ascend within each match.
inline std::vector<ManifestRow> plan_manifest(const std::vector<HitAnnotation>& hits, const ClipPlanConfig& config,
                                              double fps, int gap_threshold, int total_frames = 0) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const HitAnnotation*>> by_match;
  for (const auto& h : hits) {
    if (!by_match.count(h.match_id)) order.push_back(h.match_id);
    by_match[h.match_id].push_back(&h);
  }
  std::vector<ManifestRow> rows;
  for (const auto& match : order) {
    const auto& list = by_match[match];
    std::vector<int> frames;
    for (const auto* h : list) frames.push_back(h->frame);
    int n_frames = total_frames;
    if (n_frames <= 0 && !frames.empty()) n_frames = frames.back() + config.t + config.epsilon + 1;
    RallyTimeline timeline;
    try {
      timeline = detect_rallies(frames, gap_threshold, fps, n_frames);
    } catch (const ValidationError& e) {
      throw ValidationError("match " + match + ": " + e.what());
    }
    std::size_t k = 0;
    for (const auto& window : plan_all_clips(timeline, config)) rows.push_back({match, window, list[k++]->label});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Class map: class_id,class_name

inline constexpr const char* kClassesHeader = "class_id,class_name";

inline std::vector<std::string> read_class_map(const std::filesystem::path& path) {
  std::vector<std::string> names;
  for (const auto& row : detail::read_csv(path, kClassesHeader)) {
    if (detail::parse_int(row[0], "class_id") != static_cast<int>(names.size()))
      throw ValidationError(path.string() + ": class ids must be 0, 1, 2, ... in order");
    names.push_back(row[1]);
  }
  return names;
}

inline std::string format_class_map(const std::vector<std::string>& names) {
  std::string out = std::string(kClassesHeader) + "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    detail::check_field(names[i]);
    out += std::to_string(i) + "," + names[i] + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// key=value configuration

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "config") {
    KeyValueConfig config;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      if (!known_keys().count(key))
        throw ValidationError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
      config.values_[key] = trim(line.substr(eq + 1));
    }
    return config;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  int get_int(const std::string& key, int fallback) const {
    return has(key) ? detail::parse_int(values_.at(key), key) : fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? detail::parse_double(values_.at(key), key) : fallback;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? values_.at(key) : fallback;
  }
  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError(key + ": '" + v + "' is not a boolean");
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  static const std::map<std::string, const char*>& known_keys() {
    static const std::map<std::string, const char*> keys{
        // training
        {"n_epochs", "maximum epochs"},
        {"early_stop_n_epochs", "epochs without improvement before stopping"},
        {"batch_size", "samples per optimizer step"},
        {"learning_rate", "peak learning rate"},
        {"cosine_annealing_num_cycles", "cosine cycles after warm-up"},
        {"warm_up_step", "optimizer steps of linear warm-up"},
        {"weight_decay", "decoupled weight decay"},
        {"label_smoothing", "label smoothing"},
        {"class_balance", "duplicate minority classes"},
        {"grad_clip", "global gradient norm clip (0 = off)"},
        {"augment_probability", "shift augmentation probability"},
        // model
        {"sequence_length", "frames per sample"},
        {"n_classes", "number of classes"},
        {"variant", "BST-0 | BST | BST-CG | BST-AP | BST-CG-AP"},
        {"d_model", "embedding width"},
        {"d_attn", "per-head attention width"},
        {"n_heads", "attention heads"},
        {"n_layers_trans1", "first encoder depth"},
        {"n_layers_trans2", "second encoder depth"},
        {"ffn_mult", "feed-forward width multiplier"},
        {"tcn_kernel_size", "temporal kernel size"},
        {"tcn_layers", "temporal conv layers"},
        {"dropout", "dropout rate"},
        {"precision", "float | double"},
        // clipping
        {"hits", "hit-frame annotation CSV, relative to the config file"},
        {"fps", "video frame rate"},
        {"total_frames", "frames in the match video"},
        {"clip_strategy", "adaptive | fixed_width"},
        {"t", "clip half-window in frames"},
        {"epsilon", "adaptive lookahead in frames"},
        {"max_span_seconds", "neighbor hit cap before epsilon"},
        {"gap_threshold", "rally gap in frames"},
        // ingest
        {"frame_width", "video width in pixels"},
        {"frame_height", "video height in pixels"},
        // synthetic data
        {"synth_samples_per_class", "training samples per class"},
        {"synth_val_per_class", "validation samples per class"},
        {"synth_test_per_class", "test samples per class"},
        {"synth_noise", "coordinate noise sigma"},
        {"synth_opponent_noise", "trajectory noise outside the target flight"},
        {"synth_frames_per_stroke", "mean flight duration in frames"},
        {"synth_fps", "synthetic frame rate"},
        {"seed", "random seed"},
    };
    return keys;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig c;
  c.d_model = kv.get_int("d_model", c.d_model);
  c.d_attn = kv.get_int("d_attn", c.d_attn);
  c.n_heads = kv.get_int("n_heads", c.n_heads);
  c.n_layers_trans1 = kv.get_int("n_layers_trans1", c.n_layers_trans1);
  c.n_layers_trans2 = kv.get_int("n_layers_trans2", c.n_layers_trans2);
  c.ffn_mult = kv.get_int("ffn_mult", c.ffn_mult);
  c.seq_len = kv.get_int("sequence_length", c.seq_len);
  c.n_classes = kv.get_int("n_classes", c.n_classes);
  c.variant = parse_variant(kv.get_string("variant", to_string(c.variant)));
  c.tcn.kernel_size = kv.get_int("tcn_kernel_size", c.tcn.kernel_size);
  c.tcn.layers = kv.get_int("tcn_layers", c.tcn.layers);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.validate();
  return c;
}

inline TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig c;
  c.n_epochs = kv.get_int("n_epochs", c.n_epochs);
  c.early_stop_n_epochs = kv.get_int("early_stop_n_epochs", c.early_stop_n_epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.cosine_annealing_num_cycles = kv.get_double("cosine_annealing_num_cycles", c.cosine_annealing_num_cycles);
  c.warm_up_step = kv.get_int("warm_up_step", c.warm_up_step);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.label_smoothing = kv.get_double("label_smoothing", c.label_smoothing);
  c.class_balance = kv.get_bool("class_balance", c.class_balance);
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  c.augment_probability = kv.get_double("augment_probability", c.augment_probability);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.validate();
  return c;
}

inline ClipPlanConfig clip_config_from(const KeyValueConfig& kv, double fps) {
  const auto strategy_name = kv.get_string("clip_strategy", "adaptive");
  ClipStrategy strategy;
  if (strategy_name == "adaptive") strategy = ClipStrategy::adaptive;
  else if (strategy_name == "fixed_width") strategy = ClipStrategy::fixed_width;
  else throw ConfigError("unknown clip_strategy '" + strategy_name + "'");
  ClipPlanConfig c = ClipPlanConfig::for_fps(fps, strategy);
  c.t = kv.get_int("t", c.t);
  c.epsilon = kv.get_int("epsilon", c.t / 2);
  c.max_span_seconds = kv.get_double("max_span_seconds", c.max_span_seconds);
  c.validate();
  return c;
}


// ---------------------------------------------------------------------------
// Dataset directory: classes.csv, manifest.csv and features/<match>/<rally>_<stroke>.json

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<ManifestRow> rows;
  std::vector<StrokeSample> samples;
};

inline void write_dataset(const std::filesystem::path& dir, const std::vector<StrokeSample>& samples,
                          const std::vector<ClipWindow>& windows, const std::vector<std::string>& class_names) {
  if (samples.size() != windows.size()) throw ValidationError("write_dataset: one window per sample required");
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.label < 0 || s.label >= static_cast<int>(class_names.size()))
      throw ValidationError("write_dataset: label outside the class map");
    rows.push_back({s.meta.match_id, windows[i], class_names[static_cast<std::size_t>(s.label)]});
  }
  detail::write_text(dir / "classes.csv", format_class_map(class_names));
  detail::write_text(dir / "manifest.csv", format_manifest(rows));
  for (const auto& s : samples) save_sample(feature_path(dir, s.meta), s);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset data;
  data.class_names = read_class_map(dir / "classes.csv");
  data.rows = read_manifest(dir / "manifest.csv");
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < data.class_names.size(); ++i) ids[data.class_names[i]] = static_cast<int>(i);
  for (const auto& row : data.rows) {
    const auto it = ids.find(row.label);
    if (it == ids.end()) throw ValidationError("manifest label '" + row.label + "' is not in classes.csv");
    const SampleMeta meta{row.match_id, row.window.rally_index, row.window.stroke_index};
    StrokeSample s = load_sample(feature_path(dir, meta));
    if (s.label != it->second)
      throw ValidationError("feature file label disagrees with the manifest for " + feature_path(dir, meta).string());
    s.meta = meta;
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace bst
