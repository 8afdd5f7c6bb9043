#pragma once

// Synthetic rallies with a known labelling rule. Two stick-figure players
// exchange clears and drops; the shuttle follows a parabola in image space
// from the hitter's racket wrist to the receiver's. The stroke class is
// 2 * (hitter is bottom) + (stroke is a drop), and a drop is any flight with
// apex below kApexSplit.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "bst/clip_planner.hpp"
#include "bst/errors.hpp"
#include "bst/ingest.hpp"
#include "bst/random.hpp"
#include "bst/sample.hpp"

namespace bst {

inline constexpr double kApexSplit = 0.15;

inline const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names{"top_clear", "top_drop", "bottom_clear", "bottom_drop"};
  return names;
}

struct SynthSpec {
  int n_classes = 4;
  int frames_per_stroke = 11;  // mean flight duration
  double fps = 25.0;
  double noise = 0.05;           // sigma on every coordinate
  double opponent_noise = 0.0;   // extra shuttle jitter outside the target flight
  std::uint64_t seed = 0;
  int samples_per_class = 200;
  int seq_len = 32;
  bool swap_sides = false;
  std::string match_id = "synth";

  int min_flight() const { return frames_per_stroke - 2; }
  int max_flight() const { return frames_per_stroke + 1; }

  void validate() const {
    if (n_classes != 4) throw ConfigError("synthetic data supports exactly 4 classes");
    if (!(noise >= 0.0)) throw ValidationError("synthetic noise sigma must be non-negative");
    if (!(opponent_noise >= 0.0)) throw ValidationError("opponent noise sigma must be non-negative");
    if (samples_per_class <= 0) throw ConfigError("samples_per_class must be positive");
    if (min_flight() < 3) throw ConfigError("frames_per_stroke must be at least 5");
    const auto clip = ClipPlanConfig::for_fps(fps);
    if (max_flight() > static_cast<int>(std::lround(clip.max_span_seconds * fps)))
      throw ConfigError("synthetic flights must fit inside the clip cap");
    const int longest = std::max(clip.t, max_flight()) + max_flight() + clip.epsilon + 1;
    if (seq_len < longest)
      throw ConfigError("seq_len " + std::to_string(seq_len) + " is shorter than the longest synthetic clip (" +
                        std::to_string(longest) + ")");
  }
};

/// Quantities the label is a function of.
struct StrokeGeometry {
  int hitter = 0;  // 0 top, 1 bottom
  double apex = 0.0;
  double landing_depth = 0.0;  // receiver's distance from the net in court units
};

inline int rule_label(const StrokeGeometry& g) { return 2 * g.hitter + (g.apex < kApexSplit ? 1 : 0); }

struct StrokeTruth {
  StrokeGeometry geometry;
  ClipWindow window;
  int hit_offset = 0;     // hit frame within the sample
  int flight_frames = 0;  // frames until the shuttle reaches the receiver or the floor
};

struct SynthDataset {
  std::vector<StrokeSample> samples;
  std::vector<StrokeTruth> truth;
  RallyTimeline timeline;
  std::vector<int> hit_labels;  // one per hit, timeline order
};

/// Reads side, apex and landing depth back out of a noise-free sample using
/// the shuttle's second difference over the first three flight frames.
inline StrokeGeometry recover_geometry(const StrokeSample& s, int hit_offset, int flight_frames) {
  if (hit_offset < 0 || hit_offset + flight_frames >= s.seq_len || flight_frames < 2)
    throw ValidationError("recover_geometry: flight does not fit in the sample");
  const auto y = [&](int f) { return s.shuttle[s.shuttle_index(f, 1)]; };
  StrokeGeometry g;
  const double d = flight_frames;
  g.apex = d * d * (y(hit_offset) - 2.0 * y(hit_offset + 1) + y(hit_offset + 2)) / 8.0;
  g.hitter = y(hit_offset + flight_frames) < y(hit_offset) ? 1 : 0;
  const int receiver = 1 - g.hitter;
  g.landing_depth = std::abs(s.positions[s.position_index(receiver, hit_offset + flight_frames, 1)] - 0.5);
  return g;
}

namespace detail {

struct SynthStroke {
  int hit = 0;
  int hitter = 0;
  bool drop = false;
  int flight = 0;
  double apex = 0.0;
  Point2 landing;  // court plane
};

struct SynthRally {
  int begin = 0;
  std::vector<SynthStroke> strokes;
};

struct Keyframe {
  int frame;
  Point2 at;
};

inline Point2 interpolate(const std::vector<Keyframe>& keys, int frame) {
  if (frame <= keys.front().frame) return keys.front().at;
  for (std::size_t k = 1; k < keys.size(); ++k) {
    if (frame <= keys[k].frame) {
      const double w = static_cast<double>(frame - keys[k - 1].frame) / (keys[k].frame - keys[k - 1].frame);
      return {keys[k - 1].at.x + w * (keys[k].at.x - keys[k - 1].at.x),
              keys[k - 1].at.y + w * (keys[k].at.y - keys[k - 1].at.y)};
    }
  }
  return keys.back().at;
}

inline const Homography& court_to_image() {
  static const Homography h(kUnitCourt, {{{0.3, 0.3}, {0.7, 0.3}, {0.9, 0.9}, {0.1, 0.9}}});
  return h;
}

inline constexpr double kBaseV[2] = {0.25, 0.75};
inline constexpr double kServeV[2] = {0.2, 0.8};

// Stick figure rooted at the ankle midpoint; image y grows downward. The
// right arm hangs at angle theta from vertical and rises as theta grows.
inline std::array<Point2, kJoints> stick_figure(Point2 feet, double theta) {
  static constexpr std::array<std::array<double, 2>, kJoints> rest{{
      {0.0, -0.95}, {-0.03, -0.98}, {0.03, -0.98}, {-0.06, -0.96}, {0.06, -0.96},
      {-0.18, -0.8}, {0.18, -0.8}, {-0.25, -0.6}, {0.0, 0.0}, {-0.28, -0.42}, {0.0, 0.0},
      {-0.1, -0.5}, {0.1, -0.5}, {-0.1, -0.25}, {0.1, -0.25}, {-0.1, 0.0}, {0.1, 0.0},
  }};
  const double scale = 0.06 + 0.08 * feet.y;
  std::array<Point2, kJoints> out;
  for (int j = 0; j < kJoints; ++j) out[j] = {feet.x + scale * rest[j][0], feet.y + scale * rest[j][1]};
  const Point2 dir{std::sin(theta), std::cos(theta)};
  out[8] = {out[6].x + 0.2 * scale * dir.x, out[6].y + 0.2 * scale * dir.y};
  out[10] = {out[8].x + 0.2 * scale * dir.x, out[8].y + 0.2 * scale * dir.y};
  return out;
}

inline std::vector<SynthRally> plan_rallies(const SynthSpec& spec) {
  Rng rng(mix_seed(spec.seed, fnv1a("synth.rallies")));
  std::vector<SynthRally> rallies;
  std::array<int, 4> counts{};
  int cursor = 0;
  const auto done = [&] {
    for (const int c : counts)
      if (c < spec.samples_per_class) return false;
    return true;
  };
  while (!done()) {
    SynthRally rally;
    rally.begin = cursor;
    const int n = rng.uniform_int(2, 8);
    int hitter = rng.uniform_int(0, 1);
    if (spec.swap_sides) hitter = 1 - hitter;
    int frame = cursor + 15;
    for (int k = 0; k < n; ++k) {
      SynthStroke s;
      s.hit = frame;
      s.hitter = hitter;
      s.drop = rng.bernoulli(0.5);
      s.flight = rng.uniform_int(spec.min_flight(), spec.max_flight());
      s.apex = s.drop ? rng.uniform(0.03, 0.09) : rng.uniform(0.2, 0.3);
      const int receiver = 1 - hitter;
      const double depth = s.drop ? 0.14 : 0.42;
      s.landing = {rng.uniform(0.15, 0.85), receiver == 0 ? 0.5 - depth : 0.5 + depth};
      ++counts[static_cast<std::size_t>(2 * hitter + (s.drop ? 1 : 0))];
      rally.strokes.push_back(s);
      frame += s.flight;
      hitter = receiver;
    }
    cursor = frame + 100;  // frame is the landing frame of the last stroke
    rallies.push_back(std::move(rally));
  }
  return rallies;
}

// Renders every frame of the match. Frames of rally r run from its begin to
// the next rally's begin.
inline std::vector<FrameFeatures> render_match(const std::vector<SynthRally>& rallies, int total_frames) {
  std::vector<FrameFeatures> frames(static_cast<std::size_t>(total_frames));
  const auto& to_image = court_to_image();
  for (std::size_t r = 0; r < rallies.size(); ++r) {
    const auto& rally = rallies[r];
    const int stop = r + 1 < rallies.size() ? rallies[r + 1].begin : total_frames;
    const auto& strokes = rally.strokes;
    const int server = strokes.front().hitter;

    std::array<std::vector<Keyframe>, 2> keys;
    for (int p = 0; p < 2; ++p)
      keys[static_cast<std::size_t>(p)].push_back({rally.begin, {0.5, p == server ? kServeV[p] : kBaseV[p]}});
    for (std::size_t k = 0; k < strokes.size(); ++k) {
      const auto& s = strokes[k];
      const Point2 spot = k == 0 ? Point2{0.5, kServeV[s.hitter]} : strokes[k - 1].landing;
      keys[static_cast<std::size_t>(s.hitter)].push_back({s.hit, spot});
      keys[static_cast<std::size_t>(1 - s.hitter)].push_back({s.hit, {0.5, kBaseV[1 - s.hitter]}});
    }
    const auto& last = strokes.back();
    keys[static_cast<std::size_t>(1 - last.hitter)].push_back({last.hit + last.flight, last.landing});

    std::vector<std::array<std::array<Point2, kJoints>, 2>> skeletons;
    for (int f = rally.begin; f < stop; ++f) {
      std::array<std::array<Point2, kJoints>, 2> pair;
      auto& out = frames[static_cast<std::size_t>(f)];
      for (int p = 0; p < 2; ++p) {
        const Point2 court = interpolate(keys[static_cast<std::size_t>(p)], f);
        double theta = 0.5;
        for (const auto& s : strokes)
          if (s.hitter == p) theta += (s.drop ? 1.6 : 2.6) * std::exp(-std::pow((f - s.hit) / 3.0, 2));
        pair[static_cast<std::size_t>(p)] = stick_figure(to_image.map(court), theta);
        for (int j = 0; j < kJoints; ++j) {
          out.joints[static_cast<std::size_t>((p * kJoints + j) * 2)] = pair[static_cast<std::size_t>(p)][j].x;
          out.joints[static_cast<std::size_t>((p * kJoints + j) * 2 + 1)] = pair[static_cast<std::size_t>(p)][j].y;
        }
        out.positions[static_cast<std::size_t>(p * 2)] = court.x;
        out.positions[static_cast<std::size_t>(p * 2 + 1)] = court.y;
      }
      skeletons.push_back(pair);
    }
    const auto wrist = [&](int frame, int player) {
      return skeletons[static_cast<std::size_t>(frame - rally.begin)][static_cast<std::size_t>(player)][10];
    };
    const auto set_shuttle = [&](int f, Point2 p) {
      frames[static_cast<std::size_t>(f)].shuttle = {p.x, p.y};
    };

    for (int f = rally.begin; f < strokes.front().hit; ++f) set_shuttle(f, wrist(f, server));
    for (std::size_t k = 0; k < strokes.size(); ++k) {
      const auto& s = strokes[k];
      const Point2 from = wrist(s.hit, s.hitter);
      const Point2 to = k + 1 < strokes.size() ? wrist(s.hit + s.flight, 1 - s.hitter) : to_image.map(s.landing);
      for (int i = 0; i < s.flight; ++i) {
        const double tau = static_cast<double>(i) / s.flight;
        set_shuttle(s.hit + i, {from.x + tau * (to.x - from.x),
                                from.y + tau * (to.y - from.y) - 4.0 * s.apex * tau * (1.0 - tau)});
      }
    }
    const Point2 floor = to_image.map(last.landing);
    for (int f = last.hit + last.flight; f < stop; ++f) set_shuttle(f, floor);
  }
  return frames;
}

inline void add_noise(FrameFeatures& frame, Rng& rng, double sigma) {
  for (auto& v : frame.joints) v += sigma * rng.normal();
  for (auto& v : frame.shuttle) v += sigma * rng.normal();
  for (auto& v : frame.positions) v += sigma * rng.normal();
}

}  // namespace detail

/// One synthetic split. Rallies are generated until every class has at least
/// samples_per_class strokes; the first samples_per_class of each class (in
/// timeline order) become samples. The timeline and hit labels cover every
/// generated stroke.
inline SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  const auto rallies = detail::plan_rallies(spec);
  const auto& last_rally = rallies.back();
  const int total_frames = last_rally.strokes.back().hit + last_rally.strokes.back().flight + 20;

  auto frames = detail::render_match(rallies, total_frames);
  if (spec.noise > 0.0) {
    Rng noise_rng(mix_seed(spec.seed, fnv1a("synth.noise")));
    for (auto& f : frames) detail::add_noise(f, noise_rng, spec.noise);
  }

  SynthDataset data;
  data.timeline.fps = spec.fps;
  data.timeline.total_frames = total_frames;
  for (const auto& rally : rallies) {
    std::vector<int> hits;
    for (const auto& s : rally.strokes) {
      hits.push_back(s.hit);
      data.hit_labels.push_back(2 * s.hitter + (s.drop ? 1 : 0));
    }
    data.timeline.rallies.push_back(std::move(hits));
  }
  data.timeline.validate();

  const auto clip_config = ClipPlanConfig::for_fps(spec.fps);
  std::array<int, 4> kept{};
  std::uint64_t stroke_id = 0;
  for (int r = 0; r < static_cast<int>(rallies.size()); ++r) {
    const auto& strokes = rallies[static_cast<std::size_t>(r)].strokes;
    for (int j = 1; j <= static_cast<int>(strokes.size()); ++j, ++stroke_id) {
      const auto& s = strokes[static_cast<std::size_t>(j - 1)];
      const int label = 2 * s.hitter + (s.drop ? 1 : 0);
      if (kept[static_cast<std::size_t>(label)] >= spec.samples_per_class) continue;
      ++kept[static_cast<std::size_t>(label)];

      StrokeTruth truth;
      truth.window = adaptive_clip(data.timeline, r, j, clip_config);
      truth.hit_offset = s.hit - truth.window.start;
      truth.flight_frames = s.flight;
      truth.geometry = {s.hitter, s.apex, std::abs(s.landing.y - 0.5)};

      ClipFeatures clip;
      clip.label = label;
      clip.meta = {spec.match_id, r, j};
      clip.frames.assign(frames.begin() + truth.window.start, frames.begin() + truth.window.end + 1);
      if (spec.opponent_noise > 0.0) {
        Rng opp_rng(mix_seed(mix_seed(spec.seed, fnv1a("synth.opponent")), stroke_id));
        for (int f = 0; f < static_cast<int>(clip.frames.size()); ++f) {
          if (f >= truth.hit_offset && f <= truth.hit_offset + s.flight) continue;
          for (auto& v : clip.frames[static_cast<std::size_t>(f)].shuttle) v += spec.opponent_noise * opp_rng.normal();
        }
      }
      data.samples.push_back(normalize_and_pad(clip, spec.seq_len));
      data.truth.push_back(truth);
    }
  }
  return data;
}

struct SynthSplits {
  SynthDataset train, val, test;
};

/// Train/val/test drawn from independent seeds with distinct match ids.
inline SynthSplits generate_splits(SynthSpec spec, int val_per_class, int test_per_class,
                                   const std::string& prefix = "synth") {
  SynthSplits out;
  const auto base_seed = spec.seed;
  const int train_per_class = spec.samples_per_class;
  const auto make = [&](const char* split, std::uint64_t index, int per_class) {
    SynthSpec s = spec;
    s.seed = mix_seed(base_seed, index);
    s.samples_per_class = per_class;
    s.match_id = prefix + "_" + split;
    return generate(s);
  };
  out.train = make("train", 1, train_per_class);
  out.val = make("val", 2, val_per_class);
  out.test = make("test", 3, test_per_class);
  return out;
}

}  // namespace bst
