#pragma once

// Fixed-length multimodal stroke sample and its per-clip feature file.

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bst/errors.hpp"

namespace bst {

inline constexpr int kPlayers = 2;
inline constexpr int kJoints = 17;
inline constexpr int kBones = 16;
inline constexpr int kSampleFormatVersion = 1;

/// COCO-17 keypoint tree as (parent, child) pairs.
inline constexpr std::array<std::array<int, 2>, kBones> kSkeletonEdges{{
    {0, 1}, {0, 2}, {1, 3}, {2, 4},      // face
    {0, 5}, {0, 6},                      // neck to shoulders
    {5, 7}, {7, 9}, {6, 8}, {8, 10},     // arms
    {5, 11}, {6, 12},                    // torso
    {11, 13}, {13, 15}, {12, 14}, {14, 16}  // legs
}};

enum class Player { top = 0, bottom = 1 };

struct SampleMeta {
  std::string match_id;
  int rally_index = 0;
  int stroke_index = 1;
  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

/// Player 0 is the top (blue) player, 1 the bottom (green) player.
/// Coordinates are normalized image coordinates except positions, which are
/// court-plane coordinates in the unit square.
struct StrokeSample {
  int seq_len = 0;
  std::vector<double> joints;     // [2, L, 17, 2]
  std::vector<double> bones;      // [2, L, 16, 2]
  std::vector<double> shuttle;    // [L, 2]
  std::vector<double> positions;  // [2, L, 2]
  std::vector<std::uint8_t> mask; // [L], 1 = real frame
  int label = 0;
  SampleMeta meta;

  static StrokeSample zeros(int seq_len) {
    StrokeSample s;
    s.seq_len = seq_len;
    s.joints.assign(static_cast<std::size_t>(kPlayers * seq_len * kJoints * 2), 0.0);
    s.bones.assign(static_cast<std::size_t>(kPlayers * seq_len * kBones * 2), 0.0);
    s.shuttle.assign(static_cast<std::size_t>(seq_len * 2), 0.0);
    s.positions.assign(static_cast<std::size_t>(kPlayers * seq_len * 2), 0.0);
    s.mask.assign(static_cast<std::size_t>(seq_len), 0);
    return s;
  }

  std::size_t joint_index(int player, int frame, int joint, int coord) const {
    return static_cast<std::size_t>(((player * seq_len + frame) * kJoints + joint) * 2 + coord);
  }
  std::size_t bone_index(int player, int frame, int bone, int coord) const {
    return static_cast<std::size_t>(((player * seq_len + frame) * kBones + bone) * 2 + coord);
  }
  std::size_t shuttle_index(int frame, int coord) const { return static_cast<std::size_t>(frame * 2 + coord); }
  std::size_t position_index(int player, int frame, int coord) const {
    return static_cast<std::size_t>((player * seq_len + frame) * 2 + coord);
  }

  double& joint(int p, int f, int j, int c) { return joints[joint_index(p, f, j, c)]; }
  double joint(int p, int f, int j, int c) const { return joints[joint_index(p, f, j, c)]; }
  double& bone(int p, int f, int b, int c) { return bones[bone_index(p, f, b, c)]; }
  double bone(int p, int f, int b, int c) const { return bones[bone_index(p, f, b, c)]; }

  int valid_frames() const {
    int n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
  }

  void validate() const {
    if (seq_len <= 0) throw ValidationError("sample seq_len must be positive");
    const auto L = static_cast<std::size_t>(seq_len);
    if (joints.size() != kPlayers * L * kJoints * 2 || bones.size() != kPlayers * L * kBones * 2 ||
        shuttle.size() != L * 2 || positions.size() != kPlayers * L * 2 || mask.size() != L)
      throw ValidationError("sample arrays do not match seq_len " + std::to_string(seq_len));
    if (!mask[0]) throw ValidationError("sample must start with a real frame");
  }

  friend bool operator==(const StrokeSample&, const StrokeSample&) = default;
};

/// Recomputes bones from joints for every player and frame.
inline void fill_bones(StrokeSample& s) {
  s.bones.assign(static_cast<std::size_t>(kPlayers * s.seq_len * kBones * 2), 0.0);
  for (int p = 0; p < kPlayers; ++p)
    for (int f = 0; f < s.seq_len; ++f)
      for (int b = 0; b < kBones; ++b)
        for (int c = 0; c < 2; ++c)
          s.bone(p, f, b, c) = s.joint(p, f, kSkeletonEdges[b][1], c) - s.joint(p, f, kSkeletonEdges[b][0], c);
}

namespace detail {

inline nlohmann::json shaped(const std::vector<int>& shape, const auto& data) {
  return nlohmann::json{{"shape", shape}, {"data", data}};
}

template <typename V>
void read_shaped(const nlohmann::json& node, const char* name, const std::vector<int>& expected, V& out) {
  if (!node.contains(name)) throw ValidationError(std::string("feature file missing array '") + name + "'");
  const auto& arr = node.at(name);
  if (arr.at("shape").get<std::vector<int>>() != expected)
    throw ValidationError(std::string("feature array '") + name + "' has unexpected shape");
  out = arr.at("data").get<V>();
}

}  // namespace detail

/// Named-array JSON document. Doubles are written in shortest round-trip
/// form, so a reload reproduces every value bit-for-bit. Bones are derived
/// data and are rebuilt on load.
inline nlohmann::json sample_to_json(const StrokeSample& s) {
  const int L = s.seq_len;
  nlohmann::json doc;
  doc["version"] = kSampleFormatVersion;
  doc["match_id"] = s.meta.match_id;
  doc["rally_index"] = s.meta.rally_index;
  doc["stroke_index"] = s.meta.stroke_index;
  doc["label"] = s.label;
  doc["joints"] = detail::shaped({kPlayers, L, kJoints, 2}, s.joints);
  doc["shuttle"] = detail::shaped({L, 2}, s.shuttle);
  doc["positions"] = detail::shaped({kPlayers, L, 2}, s.positions);
  doc["mask"] = detail::shaped({L}, s.mask);
  return doc;
}

inline StrokeSample sample_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("version").get<int>() != kSampleFormatVersion)
      throw ValidationError("unsupported feature file version");
    StrokeSample s;
    s.meta.match_id = doc.at("match_id").get<std::string>();
    s.meta.rally_index = doc.at("rally_index").get<int>();
    s.meta.stroke_index = doc.at("stroke_index").get<int>();
    s.label = doc.at("label").get<int>();
    const auto mask_shape = doc.at("mask").at("shape").get<std::vector<int>>();
    if (mask_shape.size() != 1) throw ValidationError("mask must be one-dimensional");
    s.seq_len = mask_shape[0];
    const int L = s.seq_len;
    detail::read_shaped(doc, "joints", {kPlayers, L, kJoints, 2}, s.joints);
    detail::read_shaped(doc, "shuttle", {L, 2}, s.shuttle);
    detail::read_shaped(doc, "positions", {kPlayers, L, 2}, s.positions);
    detail::read_shaped(doc, "mask", {L}, s.mask);
    fill_bones(s);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed feature file: ") + e.what());
  }
}

/// features/<match_id>/<rally>_<stroke>.json relative to a dataset root.
inline std::filesystem::path feature_path(const std::filesystem::path& root, const SampleMeta& meta) {
  return root / "features" / meta.match_id /
         (std::to_string(meta.rally_index) + "_" + std::to_string(meta.stroke_index) + ".json");
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline void save_sample(const std::filesystem::path& path, const StrokeSample& s) {
  write_json_file(path, sample_to_json(s));
}

inline StrokeSample load_sample(const std::filesystem::path& path) { return sample_from_json(read_json_file(path)); }

}  // namespace bst
