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


#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "dfov/defense.hpp"
#include "dfov/perturb.hpp"
#include "dfov/synth.hpp"
#include "test_util.hpp"

namespace dfov::defense {
namespace {

constexpr int K = 7;

TEST(Quantize, DepthEightIsIdentity) {
  Rng rng(1);
  const auto img = testing::random_image(17, 9, rng);
  EXPECT_EQ(quantize_bits(img, 8), img);
}

TEST(Quantize, DepthOneSnapsToNearestExtreme) {
  RgbImage img(256, 1);
  for (int v = 0; v < 256; ++v) img.at(v, 0, 0) = img.at(v, 0, 1) = img.at(v, 0, 2) = static_cast<std::uint8_t>(v);
  const auto q = quantize_bits(img, 1);
  for (int v = 0; v < 256; ++v) EXPECT_EQ(q.at(v, 0, 1), v < 128 ? 0 : 255) << v;
}

TEST(Quantize, DepthFiveMatchesClosedForm) {
  RgbImage img(256, 1);
  for (int v = 0; v < 256; ++v) img.at(v, 0, 2) = static_cast<std::uint8_t>(v);
  const auto q = quantize_bits(img, 5);
  const double step = 255.0 / 31.0;
  for (int v = 0; v < 256; ++v) EXPECT_EQ(q.at(v, 0, 2), std::lround(std::lround(v / step) * step)) << v;
}

TEST(Quantize, DepthOutsideRangeRejected) {
  EXPECT_THROW(quantize_bits(RgbImage(2, 2), 0), ValidationError);
  EXPECT_THROW(quantize_bits(RgbImage(2, 2), 9), ValidationError);
}

TEST(Median, ConstantImageUnchanged) {
  const RgbImage img(12, 7, 133);
  EXPECT_EQ(median_filter(img, 3), img);
  EXPECT_EQ(median_filter(img, 5), img);
}

TEST(Median, SaltPixelRemoved) {
  RgbImage img(9, 9, 0);
  img.at(4, 4, 0) = img.at(4, 4, 1) = img.at(4, 4, 2) = 255;
  EXPECT_EQ(median_filter(img, 3), RgbImage(9, 9, 0));
}

RgbImage naive_median(const RgbImage& img, int k) {
  RgbImage out(img.width(), img.height());
  const int r = k / 2;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        std::vector<int> v;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            v.push_back(img.at(std::clamp(x + dx, 0, img.width() - 1), std::clamp(y + dy, 0, img.height() - 1), c));
        std::sort(v.begin(), v.end());
        out.at(x, y, c) = static_cast<std::uint8_t>(v[v.size() / 2]);
      }
  return out;
}

TEST(Median, RandomImagesMatchSortOracle) {
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const auto img = testing::random_image(16, 16, rng);
    EXPECT_EQ(median_filter(img, 3), naive_median(img, 3));
    EXPECT_EQ(median_filter(img, 5), naive_median(img, 5));
  }
  const auto odd = testing::random_image(1, 7, rng);
  EXPECT_EQ(median_filter(odd, 3), naive_median(odd, 3));
}

TEST(Squeeze, OutputBufferReusedAcrossSizes) {
  Rng rng(12);
  RgbImage out;
  for (auto [w, h] : {std::pair{32, 24}, std::pair{16, 8}, std::pair{40, 30}}) {
    const auto img = testing::random_image(w, h, rng);
    quantize_bits(img, 4, out);
    EXPECT_EQ(out, quantize_bits(img, 4));
    median_filter(img, 3, out);
    EXPECT_EQ(out, median_filter(img, 3));
    apply_squeeze(img, Squeeze::Both, DefenseConfig{}, out);
    EXPECT_EQ(out, median_filter(quantize_bits(img, 5), 3));
  }
}

TEST(Median, EvenKernelRejected) { EXPECT_THROW(median_filter(RgbImage(3, 3), 4), ValidationError); }

TEST(Soften, UniformLogitsGiveHalfHalf) {
  const auto p = soften_scores(Eigen::Vector2d(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Soften, ThreeZeroZeroAtTauThree) {
  const auto p = soften_scores(Eigen::Vector3d(3, 0, 0), 3.0);
  const double e = std::numbers::e;
  EXPECT_NEAR(p[0], e / (e + 2), 1e-12);
  EXPECT_NEAR(p[1], 1 / (e + 2), 1e-12);
  EXPECT_NEAR(p[0], 0.5761, 5e-5);
  EXPECT_NEAR(p[2], 0.2119, 5e-5);
}

TEST(Soften, EntropyRisesWithTemperatureTowardUniform) {
  const Eigen::Vector4d z(2.0, -1.0, 0.5, 0.0);
  double prev = -1;
  for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0, 16.0, 256.0}) {
    const double h = entropy(soften_scores(z, tau));
    EXPECT_GT(h, prev);
    prev = h;
  }
  EXPECT_NEAR(prev, std::log(4.0), 1e-4);
}

TEST(Soften, LargeLogitsStayFinite) {
  const auto p = soften_scores(Eigen::Vector3d(1000, 999, -1000), 1.0);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(Soften, InvalidInputsRejected) {
  EXPECT_THROW(soften_scores(Eigen::Vector2d(1, 0), 0.0), ValidationError);
  EXPECT_THROW(soften_scores(Eigen::VectorXd(0), 1.0), ValidationError);
}

TEST(Soften, DetectionKeepsClass) {
  const auto d = testing::detection_with({1, 1, 4, 4}, 3, 0.8);
  const auto s = soften(d, 3.0);
  EXPECT_EQ(s.class_id, 3);
  EXPECT_LT(s.confidence, d.confidence);
  EXPECT_EQ(s.scores.logits, d.scores.logits);
}

TEST(Entropy, HandValues) {
  EXPECT_DOUBLE_EQ(entropy(Eigen::Vector3d(0, 1, 0)), 0.0);
  EXPECT_NEAR(entropy(Eigen::Vector4d::Constant(0.25)), std::log(4.0), 1e-12);
  EXPECT_NEAR(entropy(Eigen::Vector3d(0.5, 0.25, 0.25)), 1.5 * std::log(2.0), 1e-12);
  EXPECT_NEAR(1.5 * std::log(2.0), 1.0397, 5e-5);
  EXPECT_THROW(entropy(Eigen::Vector2d(0.5, 0.6)), ValidationError);
}

/// Detection whose probability entropy equals `h` (bisection on confidence).
Detection with_entropy(double h, const Box& b = {10, 10, 20, 20}) {
  double lo = 1.0 / K + 1e-12, hi = 1.0 - 1e-12;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (entropy(testing::detection_with(b, 0, mid).scores.probs) > h ? lo : hi) = mid;
  }
  return testing::detection_with(b, 0, 0.5 * (lo + hi));
}

const ClassVocabulary& vocab() {
  static const auto v = ClassVocabulary::standard();
  return v;
}

ScoredStream stream(std::vector<Detection> d, bool scored = true) { return {&vocab(), scored, std::move(d)}; }

TEST(Gate, LowerEntropyWins) {
  const FovMap map = FovMap::centered(64, 48);
  const auto r = gate_streams(stream({with_entropy(0.2)}), stream({with_entropy(0.9)}), {}, &map);
  EXPECT_NEAR(r.decision.h_mid, 0.2, 1e-9);
  EXPECT_NEAR(r.decision.h_long, 0.9, 1e-9);
  EXPECT_EQ(r.decision.chosen, StreamId::Mid);
  ASSERT_EQ(r.selected.size(), 1u);
  EXPECT_EQ(r.selected[0].source, StreamId::Mid);
}

TEST(Gate, TieGoesLong) {
  const FovMap map = FovMap::centered(64, 48);
  const auto d = with_entropy(0.5);
  const auto r = gate_streams(stream({d}), stream({d}), {}, &map);
  EXPECT_EQ(r.decision.chosen, StreamId::Long);
  // Long detections come back in mid coordinates.
  EXPECT_EQ(r.selected[0].detection.bbox, map.to_mid(d.bbox));
}

TEST(Gate, EmptyMidLosesToConfidentLong) {
  const FovMap map = FovMap::centered(64, 48);
  const auto r = gate_streams(stream({}), stream({testing::detection_with({1, 1, 9, 9}, 2, 0.97)}), {}, &map);
  EXPECT_NEAR(r.decision.h_mid, std::log(7.0), 1e-12);
  EXPECT_EQ(r.decision.chosen, StreamId::Long);
}

TEST(Gate, UnscoredStreamNeverChosen) {
  const FovMap map = FovMap::centered(64, 48);
  const auto r = gate_streams(stream({}), stream({}, false), {}, &map);
  EXPECT_EQ(r.decision.chosen, StreamId::Mid);
  EXPECT_TRUE(std::isinf(r.decision.h_long));
}

TEST(Gate, VocabularyMismatchRejected) {
  const ClassVocabulary other({"a", "b"});
  ScoredStream l{&other, true, {}};
  EXPECT_THROW(gate_streams(stream({}), l, {}, nullptr), ConfigError);
}

TEST(Gate, PerObjectPicksLowerEntropyPerPair) {
  const FovMap map = FovMap::centered(64, 48);
  DefenseConfig c;
  c.gate_mode = GateMode::PerObject;
  // Pair A is sharper in mid, pair B in long.
  const Box a_long{4, 4, 12, 12}, b_long{30, 20, 40, 30};
  const auto a_mid = map.to_mid(a_long), b_mid = map.to_mid(b_long);
  const auto r = gate_streams(stream({with_entropy(0.1, a_mid), with_entropy(1.2, b_mid)}),
                              stream({with_entropy(0.8, a_long), with_entropy(0.3, b_long)}), c, &map);
  ASSERT_EQ(r.decision.per_object.size(), 2u);
  EXPECT_EQ(r.decision.per_object[0].chosen, StreamId::Mid);
  EXPECT_EQ(r.decision.per_object[1].chosen, StreamId::Long);
  EXPECT_EQ(r.selected.size(), 2u);
  EXPECT_THROW(gate_streams(stream({}), stream({}), c, nullptr), ConfigError);
}

TEST(CrossFov, IdenticalSetsAllConsistent) {
  const FovMap identity{1.0, 0.0, 0.0};
  std::vector<Detection> d{testing::detection_with({0, 0, 5, 5}, 1, 0.9), testing::detection_with({10, 10, 20, 20}, 4, 0.7),
                           testing::detection_with({30, 0, 40, 8}, 6, 0.6)};
  const auto a = cross_fov_associate(d, d, &identity, 0.3);
  ASSERT_EQ(a.pairs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.pairs[i].mid, i);
    EXPECT_EQ(a.pairs[i].lng, i);
    EXPECT_EQ(a.pairs[i].status, PairStatus::Consistent);
  }
  EXPECT_TRUE(a.unpaired_mid.empty());
}

TEST(CrossFov, DisjointBoxesUnpaired) {
  const FovMap identity{1.0, 0.0, 0.0};
  const std::vector m{testing::detection_with({0, 0, 5, 5}, 1, 0.9)};
  const std::vector l{testing::detection_with({50, 50, 55, 55}, 1, 0.9)};
  const auto a = cross_fov_associate(m, l, &identity, 0.3);
  EXPECT_TRUE(a.pairs.empty());
  EXPECT_EQ(a.unpaired_mid.size(), 1u);
  EXPECT_EQ(a.unpaired_long.size(), 1u);
}

TEST(CrossFov, OneConflictedPairFourUnpaired) {
  const FovMap identity{1.0, 0.0, 0.0};
  // (0,0,3,3) vs (0,0,3,1.5): IoU 4.5 / 9 = 0.5.
  const std::vector m{testing::detection_with({0, 0, 3, 3}, 1, 0.9), testing::detection_with({10, 0, 12, 2}, 1, 0.9),
                      testing::detection_with({20, 0, 22, 2}, 1, 0.9)};
  const std::vector l{testing::detection_with({0, 0, 3, 1.5}, 5, 0.9), testing::detection_with({40, 0, 42, 2}, 1, 0.9),
                      testing::detection_with({50, 0, 52, 2}, 1, 0.9)};
  const auto a = cross_fov_associate(m, l, &identity, 0.5);
  ASSERT_EQ(a.pairs.size(), 1u);
  EXPECT_EQ(a.pairs[0].status, PairStatus::Conflicted);
  EXPECT_DOUBLE_EQ(a.pairs[0].iou, 0.5);
  EXPECT_EQ(a.unpaired_mid.size() + a.unpaired_long.size(), 4u);
}

TEST(CrossFov, MapRequired) { EXPECT_THROW(cross_fov_associate({}, {}, nullptr, 0.3), ConfigError); }

TEST(CrossFov, LongBoxesMappedThroughFov) {
  const FovMap map = FovMap::centered(100, 100);
  const std::vector l{testing::detection_with({0, 0, 20, 20}, 2, 0.9)};
  const std::vector m{testing::detection_with(map.to_mid({0, 0, 20, 20}), 2, 0.9)};
  const auto a = cross_fov_associate(m, l, &map, 0.9);
  ASSERT_EQ(a.pairs.size(), 1u);
  EXPECT_DOUBLE_EQ(a.pairs[0].iou, 1.0);
}

TEST(DefenseConfig, JsonRoundTripAndValidation) {
  DefenseConfig c;
  c.bit_depth = 4;
  c.gate_mode = GateMode::PerObject;
  c.long_squeeze = Squeeze::Both;
  const auto b = defense_config_from_json(to_json(c));
  EXPECT_EQ(b.bit_depth, 4);
  EXPECT_EQ(b.gate_mode, GateMode::PerObject);
  EXPECT_EQ(b.long_squeeze, Squeeze::Both);
  c.temperature = 0;
  EXPECT_THROW(validate(c), ValidationError);
}

struct Fixture {
  io::LoadedSequence seq;
  std::shared_ptr<detect::TruthTable> truth = std::make_shared<detect::TruthTable>();

  explicit Fixture(int frames, std::uint64_t seed = 3) {
    synth::SceneOptions o;
    o.frames = frames;
    o.seed = seed;
    seq = synth::generate_sequence("fx", o);
    for (const auto& p : seq.pairs) {
      truth->add("fx", StreamId::Mid, p.frames.mid.frame_index,
                 {p.mid_objects, std::make_shared<RgbImage>(p.frames.mid.image)});
      truth->add("fx", StreamId::Long, p.frames.lng.frame_index,
                 {p.long_objects, std::make_shared<RgbImage>(p.frames.lng.image)});
    }
  }

  detect::RegisteredDetector oracle(detect::SyntheticOracleConfig c = {}) const {
    return detect::register_detector(std::make_shared<detect::SyntheticOracle>(c, vocab(), truth));
  }
};

TEST(DefendFrame, PerfectOracleReproducesClasses) {
  Fixture fx(10);
  const auto det = fx.oracle();
  for (const auto& p : fx.seq.pairs) {
    const auto df = defend_frame(p.frames, det, {.mid_squeeze = Squeeze::None, .long_squeeze = Squeeze::None}, fx.seq.fov);
    ASSERT_TRUE(df.scored);
    std::vector<int> got, want;
    for (const auto& s : df.selected) got.push_back(s.detection.class_id);
    for (const auto& g : (df.gate.chosen == StreamId::Mid ? p.mid_objects : p.long_objects)) want.push_back(g.class_id);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want);
  }
}

TEST(DefendFrame, GlareOnLongSelectsMid) {
  Fixture fx(100);
  detect::SyntheticOracleConfig oc;
  oc.occlusion_sensitivity = 0.5;
  const auto det = fx.oracle(oc);
  perturb::PerturbationSpec glare;
  glare.kind = perturb::Kind::SunGlare;
  glare.intensity = {{"saturated_area", 0.8}};
  glare.object_aware = true;
  DefenseConfig dc;
  dc.mid_squeeze = dc.long_squeeze = Squeeze::None;
  int mid = 0;
  for (const auto& p : fx.seq.pairs) {
    FramePair fp = p.frames;
    fp.lng = perturb::apply_perturbation(fp.lng, glare, p.long_objects).frame;
    mid += defend_frame(fp, det, dc, fx.seq.fov).gate.chosen == StreamId::Mid;
  }
  EXPECT_GE(mid, 90);
}

class DeadBackend : public detect::Detector {
 public:
  detect::Capabilities capabilities() override { return {"dead", ClassVocabulary::standard()}; }
  std::vector<Detection> infer(const ImageFrame&) override {
    throw TransportError(TransportError::Kind::Connection, "down");
  }
};

TEST(DefendFrame, BothStreamsUnscoredIsAGap) {
  Fixture fx(1);
  const auto det = detect::register_detector(std::make_shared<DeadBackend>());
  const auto df = defend_frame(fx.seq.pairs[0].frames, det, {}, fx.seq.fov);
  EXPECT_FALSE(df.scored);
  EXPECT_TRUE(df.selected.empty());
  EXPECT_EQ(df.failures.size(), 2u);
}

TEST(DefendFrame, UndefendedScoresMidOnly) {
  Fixture fx(1);
  const auto df = defend_frame(fx.seq.pairs[0].frames, fx.oracle(), DefenseConfig::undefended(), fx.seq.fov);
  EXPECT_TRUE(df.scored);
  EXPECT_FALSE(df.lng.scored);
  EXPECT_EQ(df.gate.chosen, StreamId::Mid);
  EXPECT_EQ(df.squeezed_mid, fx.seq.pairs[0].frames.mid.image);
}

TEST(DefendFrame, ReusedFrameMatchesFresh) {
  Fixture fx(6);
  const auto det = fx.oracle();
  DefendedFrame reused;
  for (const auto& cfg : {DefenseConfig{}, DefenseConfig::undefended(), DefenseConfig{}}) {
    for (const auto& p : fx.seq.pairs) {
      defend_frame(p.frames, det, cfg, fx.seq.fov, reused);
      const auto fresh = defend_frame(p.frames, det, cfg, fx.seq.fov);
      EXPECT_EQ(reused.squeezed_mid, fresh.squeezed_mid);
      EXPECT_EQ(reused.squeezed_long, fresh.squeezed_long);
      EXPECT_EQ(to_json(reused.gate), to_json(fresh.gate));
      ASSERT_EQ(reused.selected.size(), fresh.selected.size());
      for (std::size_t i = 0; i < fresh.selected.size(); ++i)
        EXPECT_EQ(reused.selected[i].detection.class_id, fresh.selected[i].detection.class_id);
    }
  }
}

}  // namespace
}  // namespace dfov::defense
