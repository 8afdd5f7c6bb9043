#pragma once

// Per-clip feature extraction: player selection against the court, bone
// derivation, normalization to a fixed length, and shift augmentation.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "bst/errors.hpp"
#include "bst/random.hpp"
#include "bst/sample.hpp"

namespace bst {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

enum class Sport { badminton, tennis };

/// Court outline in pixels, ordered top-left, top-right, bottom-right,
/// bottom-left.
struct CourtGeometry {
  std::array<Point2, 4> corners{};
  std::optional<double> net_y;

  void validate() const {
    auto cross = [](Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); };
    auto segments_cross = [&](Point2 a, Point2 b, Point2 c, Point2 d) {
      const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
      return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
    };
    const auto& c = corners;
    double area2 = 0.0;
    for (int i = 0; i < 4; ++i) area2 += c[i].x * c[(i + 1) % 4].y - c[(i + 1) % 4].x * c[i].y;
    if (std::abs(area2) < 1e-9) throw ValidationError("court quadrilateral is degenerate");
    if (segments_cross(c[0], c[1], c[2], c[3]) || segments_cross(c[1], c[2], c[3], c[0]))
      throw ValidationError("court quadrilateral is self-intersecting");
  }
};

/// Projective map taking four source points onto four target points.
class Homography {
 public:
  Homography(const std::array<Point2, 4>& from, const std::array<Point2, 4>& to) {
    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (std::size_t i = 0; i < 4; ++i) {
      const Point2 p = from[i];
      const Point2 q = to[i];
      a.row(static_cast<Eigen::Index>(2 * i)) << p.x, p.y, 1, 0, 0, 0, -q.x * p.x, -q.x * p.y;
      a.row(static_cast<Eigen::Index>(2 * i + 1)) << 0, 0, 0, p.x, p.y, 1, -q.y * p.x, -q.y * p.y;
      b(static_cast<Eigen::Index>(2 * i)) = q.x;
      b(static_cast<Eigen::Index>(2 * i + 1)) = q.y;
    }
    const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
    h_ << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  }

  Point2 map(Point2 p) const {
    const Eigen::Vector3d v = h_ * Eigen::Vector3d(p.x, p.y, 1.0);
    return {v.x() / v.z(), v.y() / v.z()};
  }

 private:
  Eigen::Matrix3d h_;
};

inline constexpr std::array<Point2, 4> kUnitCourt{{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};

/// Image plane onto the unit court square (top-left corner -> (0, 0),
/// bottom-right -> (1, 1)).
class CourtHomography : public Homography {
 public:
  explicit CourtHomography(const CourtGeometry& court) : Homography((court.validate(), court.corners), kUnitCourt) {}
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

using Skeleton = std::array<Keypoint, kJoints>;

struct RawFrameDetections {
  std::vector<Skeleton> people;
  std::optional<Point2> shuttle;
};

struct PlayerPair {
  Skeleton top;
  Skeleton bottom;
};

inline Point2 ankle_midpoint(const Skeleton& s) {
  return {(s[15].x + s[16].x) / 2.0, (s[15].y + s[16].y) / 2.0};
}

inline double mean_confidence(const Skeleton& s) {
  double total = 0.0;
  for (const auto& k : s) total += k.confidence;
  return total / kJoints;
}

namespace detail {

struct Candidate {
  const Skeleton* skeleton;
  Point2 court;     // court-plane ankle midpoint
  double image_y;   // ankle midpoint row in pixels
  double score;
};

// Order-independent ranking: higher confidence first, then court position.
inline bool better(const Candidate& a, const Candidate& b) {
  return std::tie(b.score, a.court.y, a.court.x) < std::tie(a.score, b.court.y, b.court.x);
}

inline double distance_to_side(Point2 p, double side_v) {
  const double u = std::clamp(p.x, 0.0, 1.0);
  return std::hypot(p.x - u, p.y - side_v);
}

inline bool in_court(Point2 p) { return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0; }

inline PlayerPair ordered_pair(const Candidate& a, const Candidate& b) {
  return a.court.y <= b.court.y ? PlayerPair{*a.skeleton, *b.skeleton} : PlayerPair{*b.skeleton, *a.skeleton};
}

}  // namespace detail

/// Picks the two players of a frame. Returns nullopt when fewer than two
/// candidates remain, which marks the frame for clearing.
inline std::optional<PlayerPair> filter_players(const RawFrameDetections& detections, const CourtGeometry& court,
                                                Sport sport) {
  const CourtHomography homography(court);
  std::vector<detail::Candidate> all;
  all.reserve(detections.people.size());
  for (const auto& person : detections.people) {
    const Point2 foot = ankle_midpoint(person);
    all.push_back({&person, homography.map(foot), foot.y, mean_confidence(person)});
  }
  auto is_top = [&](const detail::Candidate& c) { return court.net_y ? c.image_y < *court.net_y : c.court.y < 0.5; };

  std::vector<detail::Candidate> inside;
  for (const auto& c : all)
    if (detail::in_court(c.court)) inside.push_back(c);
  std::sort(inside.begin(), inside.end(), detail::better);

  if (inside.size() >= 2) {
    const auto top = std::find_if(inside.begin(), inside.end(), is_top);
    const auto bottom = std::find_if(inside.begin(), inside.end(), [&](const auto& c) { return !is_top(c); });
    if (top != inside.end() && bottom != inside.end()) return PlayerPair{*top->skeleton, *bottom->skeleton};
    return detail::ordered_pair(inside[0], inside[1]);
  }
  if (sport == Sport::badminton) return std::nullopt;

  // Tennis: supplement with the people nearest the top/bottom court sides.
  auto nearest = [&](double side_v, const detail::Candidate* exclude) -> const detail::Candidate* {
    const detail::Candidate* best = nullptr;
    double best_d = 0.0;
    for (const auto& c : all) {
      if (exclude && c.skeleton == exclude->skeleton) continue;
      const double d = detail::distance_to_side(c.court, side_v);
      if (!best || d < best_d || (d == best_d && detail::better(c, *best))) {
        best = &c;
        best_d = d;
      }
    }
    return best;
  };
  if (inside.size() == 1) {
    const auto& kept = inside.front();
    const auto* other = nearest(is_top(kept) ? 1.0 : 0.0, &kept);
    if (!other) return std::nullopt;
    return is_top(kept) ? PlayerPair{*kept.skeleton, *other->skeleton} : PlayerPair{*other->skeleton, *kept.skeleton};
  }
  const auto* top = nearest(0.0, nullptr);
  if (!top) return std::nullopt;
  const auto* bottom = nearest(1.0, top);
  if (!bottom) return std::nullopt;
  return PlayerPair{*top->skeleton, *bottom->skeleton};
}

/// One frame of a clip before normalization: pixel joints and shuttle,
/// court-plane positions.
struct FrameFeatures {
  std::array<double, kPlayers * kJoints * 2> joints{};
  std::array<double, 2> shuttle{};
  std::array<double, kPlayers * 2> positions{};
};

struct ClipFeatures {
  double width = 1.0;
  double height = 1.0;
  std::vector<FrameFeatures> frames;
  int label = 0;
  SampleMeta meta;
};

/// Zeroes a frame whose players could not be identified. The frame stays
/// valid (mask = 1) so temporal alignment is preserved.
inline void clear_invalid_frame(FrameFeatures& frame) { frame = FrameFeatures{}; }

inline void clear_invalid_frame(StrokeSample& sample, int frame) {
  for (int p = 0; p < kPlayers; ++p) {
    for (int j = 0; j < kJoints; ++j)
      for (int c = 0; c < 2; ++c) sample.joint(p, frame, j, c) = 0.0;
    for (int b = 0; b < kBones; ++b)
      for (int c = 0; c < 2; ++c) sample.bone(p, frame, b, c) = 0.0;
    for (int c = 0; c < 2; ++c) sample.positions[sample.position_index(p, frame, c)] = 0.0;
  }
  for (int c = 0; c < 2; ++c) sample.shuttle[sample.shuttle_index(frame, c)] = 0.0;
}

/// Bone vectors child - parent over the skeleton tree; joints is
/// [2, L, 17, 2] flattened, the result [2, L, 16, 2].
inline std::vector<double> compute_bones(std::span<const double> joints, int seq_len) {
  if (seq_len <= 0 || joints.size() != static_cast<std::size_t>(kPlayers * seq_len * kJoints * 2))
    throw ValidationError("compute_bones: joints must be shaped [2, L, 17, 2]");
  std::vector<double> bones(static_cast<std::size_t>(kPlayers * seq_len * kBones * 2));
  for (int pf = 0; pf < kPlayers * seq_len; ++pf)
    for (int b = 0; b < kBones; ++b)
      for (int c = 0; c < 2; ++c) {
        const auto child = static_cast<std::size_t>((pf * kJoints + kSkeletonEdges[b][1]) * 2 + c);
        const auto parent = static_cast<std::size_t>((pf * kJoints + kSkeletonEdges[b][0]) * 2 + c);
        bones[static_cast<std::size_t>((pf * kBones + b) * 2 + c)] = joints[child] - joints[parent];
      }
  return bones;
}

/// Source frame for each of target_len outputs: identity when the clip fits,
/// otherwise round-half-up of an evenly spaced grid that keeps both ends.
inline std::vector<int> resample_indices(int source_len, int target_len) {
  if (source_len <= 0 || target_len <= 0) throw ValidationError("resample_indices: lengths must be positive");
  std::vector<int> idx;
  if (source_len <= target_len) {
    for (int i = 0; i < source_len; ++i) idx.push_back(i);
    return idx;
  }
  if (target_len == 1) return {0};
  const long long num = source_len - 1, den = target_len - 1;
  for (long long i = 0; i < target_len; ++i) idx.push_back(static_cast<int>((2 * i * num + den) / (2 * den)));
  return idx;
}

/// Normalizes pixel coordinates by the frame size, then right-pads with
/// masked zero frames or subsamples to exactly target_len frames.
inline StrokeSample normalize_and_pad(const ClipFeatures& clip, int target_len) {
  if (clip.frames.empty()) throw ValidationError("normalize_and_pad: clip has no frames");
  if (target_len <= 0) throw ValidationError("normalize_and_pad: target length must be positive");
  if (!(clip.width > 0.0) || !(clip.height > 0.0)) throw ValidationError("normalize_and_pad: bad frame size");
  StrokeSample s = StrokeSample::zeros(target_len);
  s.label = clip.label;
  s.meta = clip.meta;
  const auto sources = resample_indices(static_cast<int>(clip.frames.size()), target_len);
  for (int f = 0; f < static_cast<int>(sources.size()); ++f) {
    const FrameFeatures& src = clip.frames[static_cast<std::size_t>(sources[static_cast<std::size_t>(f)])];
    s.mask[static_cast<std::size_t>(f)] = 1;
    for (int p = 0; p < kPlayers; ++p) {
      for (int j = 0; j < kJoints; ++j) {
        s.joint(p, f, j, 0) = src.joints[static_cast<std::size_t>((p * kJoints + j) * 2)] / clip.width;
        s.joint(p, f, j, 1) = src.joints[static_cast<std::size_t>((p * kJoints + j) * 2 + 1)] / clip.height;
      }
      for (int c = 0; c < 2; ++c)
        s.positions[s.position_index(p, f, c)] = src.positions[static_cast<std::size_t>(p * 2 + c)];
    }
    s.shuttle[s.shuttle_index(f, 0)] = src.shuttle[0] / clip.width;
    s.shuttle[s.shuttle_index(f, 1)] = src.shuttle[1] / clip.height;
  }
  s.bones = compute_bones(s.joints, target_len);
  return s;
}

/// Adds shift to every joint, shuttle and position coordinate of the real
/// frames. Bones are differences and stay as they are.
inline void apply_shift(StrokeSample& s, double shift) {
  for (int f = 0; f < s.seq_len; ++f) {
    if (!s.mask[static_cast<std::size_t>(f)]) continue;
    for (int p = 0; p < kPlayers; ++p) {
      for (int j = 0; j < kJoints; ++j)
        for (int c = 0; c < 2; ++c) s.joint(p, f, j, c) += shift;
      for (int c = 0; c < 2; ++c) s.positions[s.position_index(p, f, c)] += shift;
    }
    for (int c = 0; c < 2; ++c) s.shuttle[s.shuttle_index(f, c)] += shift;
  }
}

/// With the given probability, shifts the sample by one value drawn
/// uniformly from [shift_low, shift_high).
inline StrokeSample random_shift_augment(StrokeSample sample, Rng& rng, double probability = 0.3,
                                         double shift_low = -0.3, double shift_high = 0.3) {
  if (rng.uniform() < probability) apply_shift(sample, rng.uniform(shift_low, shift_high));
  return sample;
}

/// Detections for one stroke clip together with the frame size and court.
struct RawClip {
  double width = 1.0;
  double height = 1.0;
  Sport sport = Sport::badminton;
  CourtGeometry court;
  std::vector<RawFrameDetections> frames;
};

/// Player selection and clearing per frame, then normalization to
/// target_len. Returns the sample and the number of cleared frames.
inline std::pair<StrokeSample, int> ingest_clip(const RawClip& raw, int target_len, int label, SampleMeta meta) {
  const CourtHomography homography(raw.court);
  ClipFeatures clip;
  clip.width = raw.width;
  clip.height = raw.height;
  clip.label = label;
  clip.meta = std::move(meta);
  int cleared = 0;
  for (const auto& det : raw.frames) {
    FrameFeatures frame;
    const auto players = filter_players(det, raw.court, raw.sport);
    if (!players) {
      clear_invalid_frame(frame);
      ++cleared;
      clip.frames.push_back(frame);
      continue;
    }
    const std::array<const Skeleton*, 2> chosen{&players->top, &players->bottom};
    for (int p = 0; p < kPlayers; ++p) {
      const Skeleton& sk = *chosen[static_cast<std::size_t>(p)];
      for (int j = 0; j < kJoints; ++j) {
        frame.joints[static_cast<std::size_t>((p * kJoints + j) * 2)] = sk[static_cast<std::size_t>(j)].x;
        frame.joints[static_cast<std::size_t>((p * kJoints + j) * 2 + 1)] = sk[static_cast<std::size_t>(j)].y;
      }
      const Point2 pos = homography.map(ankle_midpoint(sk));
      frame.positions[static_cast<std::size_t>(p * 2)] = std::clamp(pos.x, 0.0, 1.0);
      frame.positions[static_cast<std::size_t>(p * 2 + 1)] = std::clamp(pos.y, 0.0, 1.0);
    }
    if (det.shuttle) frame.shuttle = {det.shuttle->x, det.shuttle->y};
    clip.frames.push_back(frame);
  }
  return {normalize_and_pad(clip, target_len), cleared};
}

// Raw detection file:
// {"width": W, "height": H, "sport": "badminton"|"tennis",
//  "court": {"corners": [[x,y] x4], "net_y": y?},
//  "frames": [{"people": [[[x,y,conf] x17], ...], "shuttle": [x,y] | null}, ...]}
inline RawClip raw_clip_from_json(const nlohmann::json& doc) {
  try {
    RawClip raw;
    raw.width = doc.at("width").get<double>();
    raw.height = doc.at("height").get<double>();
    const auto sport = doc.value("sport", std::string("badminton"));
    if (sport == "badminton") raw.sport = Sport::badminton;
    else if (sport == "tennis") raw.sport = Sport::tennis;
    else throw ValidationError("unknown sport '" + sport + "'");
    const auto corners = doc.at("court").at("corners").get<std::vector<std::array<double, 2>>>();
    if (corners.size() != 4) throw ValidationError("court needs exactly four corners");
    for (std::size_t i = 0; i < 4; ++i) raw.court.corners[i] = {corners[i][0], corners[i][1]};
    if (doc.at("court").contains("net_y") && !doc.at("court").at("net_y").is_null())
      raw.court.net_y = doc.at("court").at("net_y").get<double>();
    for (const auto& fr : doc.at("frames")) {
      RawFrameDetections det;
      for (const auto& person : fr.at("people")) {
        const auto kps = person.get<std::vector<std::array<double, 3>>>();
        if (kps.size() != kJoints) throw ValidationError("each person needs 17 keypoints");
        Skeleton sk;
        for (std::size_t j = 0; j < kJoints; ++j) {
          if (kps[j][2] < 0.0 || kps[j][2] > 1.0) throw ValidationError("keypoint confidence outside [0, 1]");
          sk[j] = {kps[j][0], kps[j][1], kps[j][2]};
        }
        det.people.push_back(sk);
      }
      if (fr.contains("shuttle") && !fr.at("shuttle").is_null()) {
        const auto xy = fr.at("shuttle").get<std::array<double, 2>>();
        det.shuttle = Point2{xy[0], xy[1]};
      }
      raw.frames.push_back(std::move(det));
    }
    return raw;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed detection file: ") + e.what());
  }
}

inline nlohmann::json raw_clip_to_json(const RawClip& raw) {
  nlohmann::json doc;
  doc["width"] = raw.width;
  doc["height"] = raw.height;
  doc["sport"] = raw.sport == Sport::tennis ? "tennis" : "badminton";
  nlohmann::json corners = nlohmann::json::array();
  for (const auto& c : raw.court.corners) corners.push_back({c.x, c.y});
  doc["court"]["corners"] = corners;
  doc["court"]["net_y"] = raw.court.net_y ? nlohmann::json(*raw.court.net_y) : nlohmann::json(nullptr);
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& det : raw.frames) {
    nlohmann::json fr;
    fr["people"] = nlohmann::json::array();
    for (const auto& sk : det.people) {
      nlohmann::json kps = nlohmann::json::array();
      for (const auto& k : sk) kps.push_back({k.x, k.y, k.confidence});
      fr["people"].push_back(kps);
    }
    fr["shuttle"] = det.shuttle ? nlohmann::json{det.shuttle->x, det.shuttle->y} : nlohmann::json(nullptr);
    frames.push_back(fr);
  }
  doc["frames"] = frames;
  return doc;
}

}  // namespace bst
