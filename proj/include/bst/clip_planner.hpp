#pragma once

// Rally structure and per-stroke clip windows from hit-frame annotations.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bst/errors.hpp"

namespace bst {

/// Hit frames grouped into rallies for one match video.
struct RallyTimeline {
  std::vector<std::vector<int>> rallies;
  double fps = 30.0;
  int total_frames = 0;

  void validate() const {
    if (!(fps > 0.0)) throw ValidationError("timeline fps must be positive");
    if (total_frames <= 0) throw ValidationError("timeline total_frames must be positive");
    int previous = -1;
    for (std::size_t r = 0; r < rallies.size(); ++r) {
      if (rallies[r].empty()) throw ValidationError("rally " + std::to_string(r) + " has no hit frames");
      for (std::size_t j = 0; j < rallies[r].size(); ++j) {
        const int h = rallies[r][j];
        if (h <= previous)
          throw ValidationError("hit frames must strictly increase (rally " + std::to_string(r) + ", stroke " +
                                std::to_string(j + 1) + ")");
        if (h >= total_frames)
          throw ValidationError("hit frame " + std::to_string(h) + " outside video of " +
                                std::to_string(total_frames) + " frames");
        previous = h;
      }
    }
  }
};

enum class ClipStrategy { fixed_width, adaptive };

struct ClipPlanConfig {
  int t = 15;
  int epsilon = 7;
  double max_span_seconds = 1.5;
  ClipStrategy strategy = ClipStrategy::adaptive;

  /// t = round(fps / 2), epsilon = floor(t / 2).
  static ClipPlanConfig for_fps(double fps, ClipStrategy strategy = ClipStrategy::adaptive) {
    if (!(fps > 0.0)) throw ConfigError("fps must be positive");
    ClipPlanConfig config;
    config.t = static_cast<int>(std::lround(fps / 2.0));
    config.epsilon = config.t / 2;
    config.strategy = strategy;
    return config;
  }

  void validate() const {
    if (t <= 0) throw ConfigError("clip half-window t must be positive");
    if (epsilon < 0) throw ConfigError("epsilon must be non-negative");
    if (!(max_span_seconds > 0.0)) throw ConfigError("max_span_seconds must be positive");
    if (strategy == ClipStrategy::adaptive && epsilon >= t)
      throw ConfigError("adaptive clipping requires epsilon < t (epsilon=" + std::to_string(epsilon) +
                        ", t=" + std::to_string(t) + ")");
  }
};

/// Inclusive frame interval for one target stroke. stroke_index is 1-based
/// within its rally; rally_index is 0-based within the match.
struct ClipWindow {
  int rally_index = 0;
  int stroke_index = 1;
  int start = 0;
  int end = 0;
  int hit_frame = 0;

  int length() const { return end - start + 1; }
  friend bool operator==(const ClipWindow&, const ClipWindow&) = default;
};

/// Inclusive interval; empty when last < first.
struct FrameInterval {
  int first = 0;
  int last = -1;

  bool empty() const { return last < first; }
  int length() const { return empty() ? 0 : last - first + 1; }
  friend bool operator==(const FrameInterval&, const FrameInterval&) = default;
};

struct StageAnnotations {
  FrameInterval stage1;  // up to the target hit
  FrameInterval stage2;  // target hit to the opponent's next hit
  FrameInterval stage3;  // opponent's next hit to the window end
  bool degenerate = false;  // first/last stroke or a capped boundary
};

/// Splits sorted hit frames into rallies wherever the gap to the previous
/// hit exceeds gap_threshold frames.
inline std::vector<std::vector<int>> split_rallies(std::span<const int> hit_frames, int gap_threshold) {
  if (gap_threshold <= 0) throw ValidationError("gap_threshold must be positive");
  std::vector<std::vector<int>> rallies;
  for (std::size_t k = 0; k < hit_frames.size(); ++k) {
    if (hit_frames[k] < 0) throw ValidationError("negative hit frame at index " + std::to_string(k));
    if (k > 0 && hit_frames[k] <= hit_frames[k - 1])
      throw ValidationError("hit frames must be strictly ascending; offending index " + std::to_string(k));
    if (k == 0 || hit_frames[k] - hit_frames[k - 1] > gap_threshold) rallies.emplace_back();
    rallies.back().push_back(hit_frames[k]);
  }
  return rallies;
}

/// Rally timeline for a match; total_frames <= 0 means "last hit + 1".
inline RallyTimeline detect_rallies(std::span<const int> hit_frames, int gap_threshold, double fps = 30.0,
                                    int total_frames = 0) {
  RallyTimeline timeline;
  timeline.rallies = split_rallies(hit_frames, gap_threshold);
  timeline.fps = fps;
  timeline.total_frames = total_frames > 0 ? total_frames : (hit_frames.empty() ? 1 : hit_frames.back() + 1);
  timeline.validate();
  return timeline;
}

/// Default rally gap: 3 seconds of frames.
inline int default_gap_threshold(double fps) { return static_cast<int>(std::lround(3.0 * fps)); }

namespace detail {

inline const std::vector<int>& checked_rally(const RallyTimeline& timeline, int rally_index, int stroke_index) {
  if (rally_index < 0 || rally_index >= static_cast<int>(timeline.rallies.size()))
    throw ValidationError("rally index " + std::to_string(rally_index) + " out of range");
  const auto& rally = timeline.rallies[static_cast<std::size_t>(rally_index)];
  if (stroke_index < 1 || stroke_index > static_cast<int>(rally.size()))
    throw ValidationError("stroke index " + std::to_string(stroke_index) + " out of range for rally " +
                          std::to_string(rally_index));
  return rally;
}

inline ClipWindow clamped(int rally_index, int stroke_index, int start, int end, int hit, int total_frames) {
  return ClipWindow{rally_index, stroke_index, std::clamp(start, 0, total_frames - 1),
                    std::clamp(end, 0, total_frames - 1), hit};
}

}  // namespace detail

inline ClipWindow fixed_width_clip(const RallyTimeline& timeline, int rally_index, int stroke_index,
                                   const ClipPlanConfig& config) {
  config.validate();
  const auto& rally = detail::checked_rally(timeline, rally_index, stroke_index);
  const int h = rally[static_cast<std::size_t>(stroke_index - 1)];
  return detail::clamped(rally_index, stroke_index, h - config.t, h + config.t, h, timeline.total_frames);
}

/// Window from the opponent's previous hit to the opponent's next hit plus
/// epsilon. Neighbor hits are first pulled to within max_span_seconds of the
/// target hit; the first/last stroke falls back to the fixed half-width t.
inline ClipWindow adaptive_clip(const RallyTimeline& timeline, int rally_index, int stroke_index,
                                const ClipPlanConfig& config) {
  config.validate();
  const auto& rally = detail::checked_rally(timeline, rally_index, stroke_index);
  const int n = static_cast<int>(rally.size());
  const int j = stroke_index;
  const int h = rally[static_cast<std::size_t>(j - 1)];
  const int cap = static_cast<int>(std::lround(config.max_span_seconds * timeline.fps));

  const int lower = j > 1 ? std::max(rally[static_cast<std::size_t>(j - 2)], h - cap) : h - config.t;
  const int upper = j < n ? std::min(rally[static_cast<std::size_t>(j)], h + cap) + config.epsilon : h + config.t;
  return detail::clamped(rally_index, stroke_index, lower, upper, h, timeline.total_frames);
}

inline ClipWindow plan_clip(const RallyTimeline& timeline, int rally_index, int stroke_index,
                            const ClipPlanConfig& config) {
  return config.strategy == ClipStrategy::adaptive ? adaptive_clip(timeline, rally_index, stroke_index, config)
                                                   : fixed_width_clip(timeline, rally_index, stroke_index, config);
}

/// Every stroke of every rally, in timeline order.
inline std::vector<ClipWindow> plan_all_clips(const RallyTimeline& timeline, const ClipPlanConfig& config) {
  std::vector<ClipWindow> windows;
  for (int r = 0; r < static_cast<int>(timeline.rallies.size()); ++r)
    for (int j = 1; j <= static_cast<int>(timeline.rallies[static_cast<std::size_t>(r)].size()); ++j)
      windows.push_back(plan_clip(timeline, r, j, config));
  return windows;
}

/// Partitions a window into the three stages around the target hit and the
/// opponent's next hit. Stages are contiguous and cover [start, end].
inline StageAnnotations stage_annotations(const ClipWindow& window, const RallyTimeline& timeline) {
  const auto& rally = detail::checked_rally(timeline, window.rally_index, window.stroke_index);
  const int n = static_cast<int>(rally.size());
  const int j = window.stroke_index;
  const int h = window.hit_frame;
  if (h < window.start || h > window.end) throw ValidationError("hit frame outside its window");

  StageAnnotations stages;
  stages.stage1 = {window.start, h - 1};
  const bool has_next = j < n;
  const int next = has_next ? rally[static_cast<std::size_t>(j)] : window.end + 1;
  const int stage2_last = std::min(next, window.end + 1) - 1;
  stages.stage2 = {h, stage2_last};
  stages.stage3 = {stage2_last + 1, window.end};
  stages.degenerate = j == 1 || !has_next || next > window.end ||
                      (j > 1 && rally[static_cast<std::size_t>(j - 2)] != window.start);
  return stages;
}

}  // namespace bst
