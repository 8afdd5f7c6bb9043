#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "bst/ingest.hpp"
#include "bst/sample.hpp"

using namespace bst;

namespace {

CourtGeometry test_court(bool with_net = true) {
  CourtGeometry c;
  c.corners = {{{100, 100}, {500, 100}, {600, 700}, {0, 700}}};
  if (with_net) c.net_y = 400.0;
  return c;
}

// Upright skeleton whose ankle midpoint sits at (x, y).
Skeleton person_at(double x, double y, double confidence = 0.9) {
  Skeleton s;
  for (int j = 0; j < kJoints; ++j) s[static_cast<std::size_t>(j)] = {x + j, y - 10.0 * (kJoints - j), confidence};
  s[15] = {x - 5, y, confidence};
  s[16] = {x + 5, y, confidence};
  return s;
}

StrokeSample random_sample(int L, std::uint64_t seed, int valid) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  StrokeSample s = StrokeSample::zeros(L);
  for (int f = 0; f < valid; ++f) {
    s.mask[static_cast<std::size_t>(f)] = 1;
    for (int p = 0; p < kPlayers; ++p) {
      for (int j = 0; j < kJoints; ++j)
        for (int c = 0; c < 2; ++c) s.joint(p, f, j, c) = u(gen);
      for (int c = 0; c < 2; ++c) s.positions[s.position_index(p, f, c)] = u(gen);
    }
    for (int c = 0; c < 2; ++c) s.shuttle[s.shuttle_index(f, c)] = u(gen);
  }
  fill_bones(s);
  s.label = 3;
  s.meta = {"m01", 2, 4};
  return s;
}

}  // namespace

TEST(Homography, MapsCourtCornersToUnitSquare) {
  const CourtHomography h(test_court());
  const auto& c = test_court().corners;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point2 p = h.map(c[i]);
    EXPECT_NEAR(p.x, kUnitCourt[i].x, 1e-12);
    EXPECT_NEAR(p.y, kUnitCourt[i].y, 1e-12);
  }
}

TEST(CourtGeometry, RejectsSelfIntersectingAndDegenerate) {
  CourtGeometry bow;
  bow.corners = {{{100, 100}, {500, 100}, {0, 700}, {600, 700}}};
  EXPECT_THROW(bow.validate(), ValidationError);
  CourtGeometry flat;
  flat.corners = {{{0, 0}, {1, 0}, {2, 0}, {3, 0}}};
  EXPECT_THROW(flat.validate(), ValidationError);
  EXPECT_NO_THROW(test_court().validate());
}

TEST(FilterPlayers, TwoInsideOneSpectator) {
  RawFrameDetections det;
  det.people = {person_at(300, 650), person_at(800, 300), person_at(300, 200)};
  const auto pair = filter_players(det, test_court(), Sport::badminton);
  ASSERT_TRUE(pair.has_value());
  EXPECT_EQ(ankle_midpoint(pair->top).y, 200);
  EXPECT_EQ(ankle_midpoint(pair->bottom).y, 650);
}

TEST(FilterPlayers, NoneInsideForBadminton) {
  RawFrameDetections det;
  det.people = {person_at(800, 300), person_at(-200, 300)};
  EXPECT_FALSE(filter_players(det, test_court(), Sport::badminton).has_value());
  det.people = {person_at(300, 650)};
  EXPECT_FALSE(filter_players(det, test_court(), Sport::badminton).has_value());
  det.people.clear();
  EXPECT_FALSE(filter_players(det, test_court(), Sport::badminton).has_value());
}

TEST(FilterPlayers, TennisPicksPeopleNearestTheBaselines) {
  // Players stand behind the baselines; a line judge sits off the right
  // sideline at mid-court, far from both baselines in court units.
  RawFrameDetections det;
  det.people = {person_at(700, 400), person_at(300, 80), person_at(300, 740)};
  const auto pair = filter_players(det, test_court(), Sport::tennis);
  ASSERT_TRUE(pair.has_value());
  EXPECT_EQ(ankle_midpoint(pair->top).y, 80);
  EXPECT_EQ(ankle_midpoint(pair->bottom).y, 740);
  EXPECT_FALSE(filter_players(det, test_court(), Sport::badminton).has_value());
}

TEST(FilterPlayers, TennisSupplementsSingleInsidePlayer) {
  RawFrameDetections det;
  det.people = {person_at(300, 600), person_at(620, 690), person_at(300, 70)};
  const auto pair = filter_players(det, test_court(), Sport::tennis);
  ASSERT_TRUE(pair.has_value());
  EXPECT_EQ(ankle_midpoint(pair->top).y, 70);
  EXPECT_EQ(ankle_midpoint(pair->bottom).y, 600);
}

TEST(FilterPlayers, StableUnderPermutation) {
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> ux(-100, 700), uy(0, 800), uc(0.2, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    RawFrameDetections det;
    const int n = 1 + static_cast<int>(gen() % 5);
    for (int i = 0; i < n; ++i) det.people.push_back(person_at(ux(gen), uy(gen), uc(gen)));
    for (const Sport sport : {Sport::badminton, Sport::tennis}) {
      const auto base = filter_players(det, test_court(trial % 2 == 0), sport);
      auto shuffled = det;
      std::shuffle(shuffled.people.begin(), shuffled.people.end(), gen);
      const auto other = filter_players(shuffled, test_court(trial % 2 == 0), sport);
      ASSERT_EQ(base.has_value(), other.has_value());
      if (base) {
        EXPECT_EQ(base->top, other->top);
        EXPECT_EQ(base->bottom, other->bottom);
      }
    }
  }
}

TEST(ClearInvalidFrame, ZeroesContentKeepsMask) {
  StrokeSample s = random_sample(8, 1, 8);
  clear_invalid_frame(s, 3);
  EXPECT_EQ(s.mask[3], 1);
  for (int p = 0; p < kPlayers; ++p) {
    for (int j = 0; j < kJoints; ++j) EXPECT_EQ(s.joint(p, 3, j, 0), 0.0);
    for (int b = 0; b < kBones; ++b) EXPECT_EQ(s.bone(p, 3, b, 1), 0.0);
    EXPECT_EQ(s.positions[s.position_index(p, 3, 0)], 0.0);
  }
  EXPECT_EQ(s.shuttle[s.shuttle_index(3, 0)], 0.0);
  EXPECT_NE(s.joint(0, 2, 0, 0), 0.0);
}

TEST(IngestClip, ClearsExactlyTheFailingFrames) {
  RawClip raw;
  raw.width = 640;
  raw.height = 720;
  raw.court = test_court();
  const std::vector<int> failing{4, 17, 33};
  for (int f = 0; f < 50; ++f) {
    RawFrameDetections det;
    det.people = {person_at(300, 200 + f), person_at(300, 650)};
    if (std::find(failing.begin(), failing.end(), f) != failing.end()) det.people.pop_back();
    det.shuttle = Point2{320.0 + f, 100.0};
    raw.frames.push_back(det);
  }
  const auto [sample, cleared] = ingest_clip(raw, 50, 1, {"m", 0, 1});
  EXPECT_EQ(cleared, 3);
  for (int f = 0; f < 50; ++f) {
    const bool should_clear = std::find(failing.begin(), failing.end(), f) != failing.end();
    EXPECT_EQ(sample.mask[static_cast<std::size_t>(f)], 1);
    EXPECT_EQ(sample.joint(0, f, 15, 1) == 0.0, should_clear) << "frame " << f;
    EXPECT_EQ(sample.shuttle[sample.shuttle_index(f, 0)] == 0.0, should_clear);
  }
  // Positions are court-plane coordinates of the ankle midpoint.
  const CourtHomography h(test_court());
  const Point2 expected = h.map({300, 650});
  EXPECT_NEAR(sample.positions[sample.position_index(1, 0, 0)], expected.x, 1e-12);
  EXPECT_NEAR(sample.positions[sample.position_index(1, 0, 1)], expected.y, 1e-12);
  // Pixel coordinates are divided by the frame size.
  EXPECT_DOUBLE_EQ(sample.shuttle[sample.shuttle_index(0, 0)], 320.0 / 640.0);
  EXPECT_DOUBLE_EQ(sample.shuttle[sample.shuttle_index(0, 1)], 100.0 / 720.0);
}

TEST(RawClipJson, RoundTrip) {
  RawClip raw;
  raw.width = 1280;
  raw.height = 720;
  raw.sport = Sport::tennis;
  raw.court = test_court();
  RawFrameDetections det;
  det.people = {person_at(300, 200, 0.5)};
  det.shuttle = Point2{1.5, 2.5};
  raw.frames = {det, RawFrameDetections{}};
  const RawClip back = raw_clip_from_json(raw_clip_to_json(raw));
  EXPECT_EQ(back.sport, Sport::tennis);
  EXPECT_EQ(back.court.net_y, raw.court.net_y);
  ASSERT_EQ(back.frames.size(), 2u);
  EXPECT_EQ(back.frames[0].people[0], det.people[0]);
  EXPECT_EQ(back.frames[0].shuttle, det.shuttle);
  EXPECT_FALSE(back.frames[1].shuttle.has_value());
}

TEST(RawClipJson, RejectsWrongKeypointCount) {
  auto doc = raw_clip_to_json(RawClip{640, 480, Sport::badminton, test_court(), {RawFrameDetections{{person_at(1, 1)}, {}}}});
  doc["frames"][0]["people"][0].erase(0);
  EXPECT_THROW(raw_clip_from_json(doc), ValidationError);
}

TEST(ComputeBones, ZeroJointsGiveZeroBones) {
  const std::vector<double> joints(static_cast<std::size_t>(kPlayers * 5 * kJoints * 2), 0.0);
  for (double b : compute_bones(joints, 5)) EXPECT_EQ(b, 0.0);
}

TEST(ComputeBones, TranslationInvariant) {
  const StrokeSample s = random_sample(6, 2, 6);
  auto moved = s.joints;
  for (std::size_t i = 0; i < moved.size(); i += 2) moved[i] += 1.0, moved[i + 1] += 1.0;
  const auto a = compute_bones(s.joints, 6);
  const auto b = compute_bones(moved, 6);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ComputeBones, MatchesPerEdgeSubtraction) {
  const StrokeSample s = random_sample(7, 3, 7);
  const auto bones = compute_bones(s.joints, 7);
  // COCO tree written out edge by edge.
  const int parent[kBones] = {0, 0, 1, 2, 0, 0, 5, 7, 6, 8, 5, 6, 11, 13, 12, 14};
  const int child[kBones] = {1, 2, 3, 4, 5, 6, 7, 9, 8, 10, 11, 12, 13, 15, 14, 16};
  for (int p = 0; p < kPlayers; ++p)
    for (int f = 0; f < 7; ++f)
      for (int b = 0; b < kBones; ++b)
        for (int c = 0; c < 2; ++c)
          EXPECT_EQ(bones[s.bone_index(p, f, b, c)], s.joint(p, f, child[b], c) - s.joint(p, f, parent[b], c));
}

TEST(ComputeBones, RejectsBadShape) {
  const std::vector<double> joints(10, 0.0);
  EXPECT_THROW(compute_bones(joints, 5), ValidationError);
}

namespace {
ClipFeatures ramp_clip(int n) {
  ClipFeatures clip;
  clip.width = 2.0;
  clip.height = 4.0;
  for (int f = 0; f < n; ++f) {
    FrameFeatures fr;
    fr.shuttle = {2.0 * f, 4.0 * f};
    for (auto& v : fr.joints) v = 2.0;
    fr.positions = {0.25, 0.5, 0.75, 1.0};
    clip.frames.push_back(fr);
  }
  return clip;
}
}  // namespace

TEST(NormalizeAndPad, IdentityAtExactLength) {
  const auto s = normalize_and_pad(ramp_clip(30), 30);
  EXPECT_EQ(s.valid_frames(), 30);
  for (int f = 0; f < 30; ++f) EXPECT_DOUBLE_EQ(s.shuttle[s.shuttle_index(f, 0)], f);
  EXPECT_DOUBLE_EQ(s.joint(1, 4, 7, 1), 0.5);
}

TEST(NormalizeAndPad, PadsWithMaskedZeros) {
  const auto s = normalize_and_pad(ramp_clip(10), 30);
  for (int f = 0; f < 30; ++f) {
    EXPECT_EQ(s.mask[static_cast<std::size_t>(f)], f < 10 ? 1 : 0);
    if (f >= 10) {
      EXPECT_EQ(s.shuttle[s.shuttle_index(f, 1)], 0.0);
      for (int p = 0; p < kPlayers; ++p) {
        for (int j = 0; j < kJoints; ++j) EXPECT_EQ(s.joint(p, f, j, 0), 0.0);
        for (int b = 0; b < kBones; ++b) EXPECT_EQ(s.bone(p, f, b, 0), 0.0);
        EXPECT_EQ(s.positions[s.position_index(p, f, 1)], 0.0);
      }
    }
  }
}

TEST(NormalizeAndPad, SubsamplesWithRoundedLinspace) {
  const auto s = normalize_and_pad(ramp_clip(200), 100);
  EXPECT_EQ(s.valid_frames(), 100);
  for (int i = 0; i < 100; ++i) {
    const double expected = std::round(i * 199.0 / 99.0);
    EXPECT_EQ(s.shuttle[s.shuttle_index(i, 0)], expected) << i;
  }
}

TEST(NormalizeAndPad, ResampleKeepsEndsAndRoundsHalfUp) {
  const auto idx = resample_indices(4, 3);
  EXPECT_EQ(idx, (std::vector<int>{0, 2, 3}));
  for (int n = 2; n < 60; ++n)
    for (int L = 2; L < n; ++L) {
      const auto r = resample_indices(n, L);
      EXPECT_EQ(r.front(), 0);
      EXPECT_EQ(r.back(), n - 1);
      EXPECT_TRUE(std::is_sorted(r.begin(), r.end()));
    }
}

TEST(NormalizeAndPad, EmptyClipRejected) {
  EXPECT_THROW(normalize_and_pad(ClipFeatures{}, 10), ValidationError);
}

TEST(ShiftAugment, ZeroProbabilityIsIdentity) {
  const StrokeSample s = random_sample(12, 4, 9);
  Rng rng(1);
  EXPECT_EQ(random_shift_augment(s, rng, 0.0), s);
}

TEST(ShiftAugment, ShiftMovesUnmaskedCoordinatesOnly) {
  const StrokeSample s = random_sample(12, 5, 9);
  StrokeSample t = s;
  apply_shift(t, 0.125);
  for (int f = 0; f < 12; ++f) {
    const double d = f < 9 ? 0.125 : 0.0;
    for (int p = 0; p < kPlayers; ++p) {
      for (int j = 0; j < kJoints; ++j) EXPECT_EQ(t.joint(p, f, j, 1), s.joint(p, f, j, 1) + d);
      EXPECT_EQ(t.positions[t.position_index(p, f, 0)], s.positions[s.position_index(p, f, 0)] + d);
    }
    EXPECT_EQ(t.shuttle[t.shuttle_index(f, 0)], s.shuttle[s.shuttle_index(f, 0)] + d);
  }
  EXPECT_EQ(t.bones, s.bones);
}

TEST(ShiftAugment, DeterministicUnderSeed) {
  const StrokeSample s = random_sample(12, 6, 12);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    EXPECT_EQ(random_shift_augment(s, a, 0.5), random_shift_augment(s, b, 0.5));
  }
}

TEST(ShiftAugment, ShiftRangeAndRate) {
  const StrokeSample s = random_sample(4, 7, 4);
  Rng rng(99);
  int shifted = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto t = random_shift_augment(s, rng);
    const double d = t.shuttle[0] - s.shuttle[0];
    if (d != 0.0) {
      ++shifted;
      EXPECT_GE(d, -0.3 - 1e-12);
      EXPECT_LT(d, 0.3 + 1e-12);
    }
  }
  EXPECT_NEAR(shifted / 4000.0, 0.3, 0.03);
}

TEST(SampleJson, RoundTripIsBitExact) {
  const StrokeSample s = random_sample(16, 8, 11);
  EXPECT_EQ(sample_from_json(sample_to_json(s)), s);
  const auto dir = std::filesystem::temp_directory_path() / "bst_sample_rt";
  std::filesystem::remove_all(dir);
  const auto path = feature_path(dir, s.meta);
  EXPECT_EQ(path, dir / "features" / "m01" / "2_4.json");
  save_sample(path, s);
  EXPECT_EQ(load_sample(path), s);
  std::filesystem::remove_all(dir);
}

TEST(SampleJson, RejectsInconsistentShapes) {
  auto doc = sample_to_json(random_sample(5, 9, 5));
  doc["mask"]["data"].erase(0);
  EXPECT_THROW(sample_from_json(doc), ValidationError);
}

TEST(Sample, MaskedFramesCarryZeroFeatures) {
  const auto s = normalize_and_pad(ramp_clip(7), 20);
  double masked_sum = 0.0;
  for (int f = 0; f < 20; ++f) {
    if (s.mask[static_cast<std::size_t>(f)]) continue;
    for (int p = 0; p < kPlayers; ++p)
      for (int j = 0; j < kJoints; ++j) masked_sum += std::abs(s.joint(p, f, j, 0)) + std::abs(s.joint(p, f, j, 1));
    masked_sum += std::abs(s.shuttle[s.shuttle_index(f, 0)]);
  }
  EXPECT_EQ(masked_sum, 0.0);
}
