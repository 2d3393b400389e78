/*
 * Copyright (c) 2026, The dfov Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dfov/core.hpp"
#include "dfov/rng.hpp"
#include "test_util.hpp"

namespace dfov {
namespace {

TEST(Iou, IdenticalBoxes) { EXPECT_DOUBLE_EQ(iou({1, 2, 5, 9}, {1, 2, 5, 9}), 1.0); }

TEST(Iou, DisjointBoxes) { EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0); }

TEST(Iou, PartialOverlapIsOneSeventh) {
  // Intersection 1, union 4 + 4 - 1.
  EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
}

TEST(Iou, ZeroAreaThrows) { EXPECT_THROW(iou({0, 0, 0, 2}, {0, 0, 1, 1}), DomainError); }

TEST(Iou, SymmetricAndBoundedOnRandomBoxes) {
  Rng rng(7);
  auto box = [&] {
    const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
    return Box{x, y, x + rng.uniform(0.1, 30), y + rng.uniform(0.1, 30)};
  };
  for (int i = 0; i < 5000; ++i) {
    const Box a = box(), b = box();
    const double ab = iou(a, b);
    EXPECT_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(ClampBox, ClipsToFrame) {
  const Box c = clamp_box({-5, 3, 700, 500}, 640, 480);
  EXPECT_EQ(c, (Box{0, 3, 640, 480}));
}

TEST(ClassScores, ProbsRederivableFromLogits) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd z(7);
    for (int c = 0; c < 7; ++c) z[c] = rng.uniform(-8, 8);
    const double tau = rng.uniform(0.2, 5.0);
    const auto s = ClassScores::from_logits(z, tau);
    Eigen::VectorXd p = (z.array() / tau).exp();
    p /= p.sum();
    EXPECT_LT((s.probs - p).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Detection, ClassAndConfidenceFollowScores) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd z(7);
    for (int c = 0; c < 7; ++c) z[c] = rng.uniform(-5, 5);
    const auto d = Detection::from_logits({1, 1, 10, 10}, z, rng.uniform(0.5, 3));
    Eigen::Index best;
    const double top = d.scores.probs.maxCoeff(&best);
    EXPECT_EQ(d.class_id, best);
    EXPECT_EQ(d.confidence, top);
    EXPECT_TRUE(satisfies_invariants(d, 20, 20));
  }
}

TEST(Detection, BoxOutsideFrameBreaksInvariants) {
  const auto d = testing::detection_with({5, 5, 30, 12}, 2, 0.9);
  EXPECT_FALSE(satisfies_invariants(d, 20, 20));
}

TEST(Vocabulary, StandardHasSevenClasses) {
  const auto v = ClassVocabulary::standard();
  EXPECT_EQ(v.size(), 7);
  EXPECT_EQ(v.name(0), "stop_sign");
}

TEST(Vocabulary, HarmonizesSourceCategories) {
  const auto v = ClassVocabulary::standard();
  EXPECT_EQ(v.resolve("us_speedlimit_35"), v.index_of("speed_limit"));
  EXPECT_EQ(v.resolve("traffic_light", SignalState::Red), v.index_of("traffic_light_red"));
  EXPECT_FALSE(v.resolve("billboard").has_value());
}

TEST(FovMap, RoundTripsBoxes) {
  const auto m = FovMap::centered(1280, 720);
  const Box b{100, 50, 300, 200};
  const Box r = m.to_long(m.to_mid(b));
  EXPECT_NEAR(r.x_min, b.x_min, 1e-9);
  EXPECT_NEAR(r.y_max, b.y_max, 1e-9);
  // Long frame corners land on the central half of the mid frame.
  const Box whole = m.to_mid({0, 0, 1280, 720});
  EXPECT_DOUBLE_EQ(whole.x_min, 320);
  EXPECT_DOUBLE_EQ(whole.x_max, 960);
}

TEST(TagSet, Names) {
  TagSet t{DegradationTag::WeatherAffected, DegradationTag::GlarePresent};
  EXPECT_TRUE(t.contains(DegradationTag::GlarePresent));
  EXPECT_FALSE(t.contains(DegradationTag::Clean));
  EXPECT_EQ(t.names().size(), 2u);
}

std::vector<FramePair> well_formed(int n) {
  std::vector<FramePair> pairs;
  const std::int64_t period = 33'333'333;
  for (int i = 0; i < n; ++i) {
    FramePair p;
    p.mid = {StreamId::Mid, "s", i, i * period, RgbImage(8, 6)};
    p.lng = {StreamId::Long, "s", i, i * period + 1000, RgbImage(8, 6)};
    pairs.push_back(p);
  }
  return pairs;
}

TEST(ValidateSequence, WellFormedPairsHaveNoViolations) {
  EXPECT_TRUE(validate_sequence(well_formed(10)).ok());
}

TEST(ValidateSequence, SkewOfTwoPeriodsRecorded) {
  auto pairs = well_formed(10);
  pairs[9].mid.timestamp_ns = pairs[9].lng.timestamp_ns + 2 * 33'333'333;
  const auto r = validate_sequence(pairs);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].kind, ViolationKind::PairSkew);
  EXPECT_EQ(r.violations[0].pair_index, 9u);
}

TEST(ValidateSequence, FrameIndexRegressionAtFive) {
  auto pairs = well_formed(10);
  pairs[5].mid.frame_index = 2;
  pairs[5].lng.frame_index = 2;
  const auto r = validate_sequence(pairs);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].kind, ViolationKind::FrameIndexOrder);
  EXPECT_EQ(r.violations[0].pair_index, 5u);
}

TEST(ValidateSequence, ResolutionChangeFlagged) {
  auto pairs = well_formed(3);
  pairs[2].lng.image = RgbImage(4, 4);
  const auto r = validate_sequence(pairs);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].kind, ViolationKind::ResolutionChange);
}

TEST(RgbImage, ResizeKeepsShapeContract) {
  RgbImage img(4, 3, 7);
  img.resize(2, 5);
  EXPECT_EQ(img.width(), 2);
  EXPECT_EQ(img.height(), 5);
  EXPECT_EQ(img.bytes().size(), 30u);
  EXPECT_THROW(img.resize(0, 5), ValidationError);
}

}  // namespace
}  // namespace dfov
