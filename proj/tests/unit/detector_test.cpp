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
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "dfov/detector.hpp"
#include "test_util.hpp"

namespace dfov::detect {
namespace {

constexpr int K = 7;

ImageFrame blank_frame(std::int64_t index, StreamId s = StreamId::Mid, int w = 64, int h = 48) {
  ImageFrame f;
  f.stream = s;
  f.seq_id = "oracle";
  f.frame_index = index;
  f.image = RgbImage(w, h, 90);
  return f;
}

GroundTruthObject object(const Box& b, int cls, double occlusion = 0.0, std::int64_t id = 0) {
  GroundTruthObject g;
  g.bbox = b;
  g.class_id = cls;
  g.occlusion_score = occlusion;
  g.object_id = id;
  return g;
}

TEST(Oracle, PerfectOracleReproducesGroundTruth) {
  const std::vector gt{object({4, 4, 20, 20}, 2), object({30, 10, 50, 40}, 5, 0.0, 1)};
  for (std::int64_t i = 0; i < 50; ++i) {
    const auto dets = synthetic_infer(blank_frame(i), gt, {}, K);
    ASSERT_EQ(dets.size(), 2u);
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(dets[j].bbox, gt[j].bbox);
      EXPECT_EQ(dets[j].class_id, gt[j].class_id);
      EXPECT_GT(dets[j].confidence, 0.9999);
    }
  }
}

TEST(Oracle, MissRateOneGivesNothing) {
  SyntheticOracleConfig c;
  c.miss_rate_base = 1.0;
  const std::vector gt{object({4, 4, 20, 20}, 2)};
  for (std::int64_t i = 0; i < 20; ++i) EXPECT_TRUE(synthetic_infer(blank_frame(i), gt, c, K).empty());
}

TEST(Oracle, OcclusionBlendsConfusionTowardUniform) {
  // beta = 0.5 * 0.4 = 0.2: row = 0.8 e_c + 0.2 / K, miss probability 0.2.
  SyntheticOracleConfig c;
  c.occlusion_sensitivity = 0.5;
  c.seed = 1234;
  const int cls = 3;
  const std::vector gt{object({4, 4, 20, 20}, cls, 0.4)};
  std::vector<double> counts(K, 0.0);
  const int trials = 10000;
  int detected = 0;
  for (int i = 0; i < trials; ++i) {
    const auto dets = synthetic_infer(blank_frame(i), gt, c, K);
    if (dets.empty()) continue;
    ++detected;
    counts[static_cast<std::size_t>(dets[0].class_id)] += 1;
  }
  EXPECT_NEAR(1.0 - double(detected) / trials, 0.2, 0.02);
  for (int k = 0; k < K; ++k) {
    const double expected = (k == cls ? 0.8 : 0.0) + 0.2 / K;
    EXPECT_NEAR(counts[static_cast<std::size_t>(k)] / detected, expected, 0.02) << "class " << k;
  }
}

TEST(Oracle, DeterministicPerFrameKey) {
  SyntheticOracleConfig c;
  c.occlusion_sensitivity = 0.8;
  c.localization_noise_px = 1.5;
  c.score_noise = 0.2;
  const std::vector gt{object({4, 4, 20, 20}, 1, 0.5)};
  for (std::int64_t i = 0; i < 30; ++i) {
    const auto a = synthetic_infer(blank_frame(i), gt, c, K);
    const auto b = synthetic_infer(blank_frame(i), gt, c, K);
    ASSERT_EQ(a.size(), b.size());
    if (!a.empty()) {
      EXPECT_EQ(a[0].bbox, b[0].bbox);
      EXPECT_EQ(a[0].scores.logits, b[0].scores.logits);
    }
  }
}

TEST(Oracle, CorrelatedDrawsKeepMarginalMissRate) {
  SyntheticOracleConfig c;
  c.occlusion_sensitivity = 0.5;
  c.correlation_frames = 5.0;
  c.stream_correlation = 0.5;
  std::vector<GroundTruthObject> gt;
  for (int j = 0; j < 40; ++j) gt.push_back(object({1.0 + j, 2, 10.0 + j, 12}, 0, 0.6, j));
  long misses = 0, total = 0, agree = 0, pairs = 0;
  std::vector<bool> prev;
  for (std::int64_t i = 0; i < 400; ++i) {
    const auto dets = synthetic_infer(blank_frame(i), gt, c, K);
    // With one detection per surviving object the survivors can be told
    // apart by their unjittered boxes.
    std::vector<bool> hit(gt.size(), false);
    for (const auto& d : dets)
      for (std::size_t j = 0; j < gt.size(); ++j)
        if (d.bbox == gt[j].bbox) hit[j] = true;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      misses += !hit[j];
      ++total;
      if (!prev.empty()) {
        agree += hit[j] == prev[j];
        ++pairs;
      }
    }
    prev = hit;
  }
  EXPECT_NEAR(double(misses) / total, 0.3, 0.03);
  // Independent draws would agree with probability 0.3^2 + 0.7^2 = 0.58.
  EXPECT_GT(double(agree) / pairs, 0.75);
}

TEST(Oracle, StreamCorrelationCouplesCameras) {
  SyntheticOracleConfig c;
  c.occlusion_sensitivity = 1.0;
  c.correlation_frames = 1.0;
  std::vector<GroundTruthObject> gt;
  for (int j = 0; j < 20; ++j) gt.push_back(object({1.0 + j, 2, 10.0 + j, 12}, 0, 0.5, j));
  auto agreement = [&](double rho) {
    c.stream_correlation = rho;
    long agree = 0, n = 0;
    for (std::int64_t i = 0; i < 300; ++i) {
      const auto m = synthetic_infer(blank_frame(i, StreamId::Mid), gt, c, K);
      const auto l = synthetic_infer(blank_frame(i, StreamId::Long), gt, c, K);
      for (const auto& g : gt) {
        const bool hm = std::any_of(m.begin(), m.end(), [&](const auto& d) { return d.bbox == g.bbox; });
        const bool hl = std::any_of(l.begin(), l.end(), [&](const auto& d) { return d.bbox == g.bbox; });
        agree += hm == hl;
        ++n;
      }
    }
    return double(agree) / n;
  };
  EXPECT_NEAR(agreement(0.0), 0.5, 0.04);
  EXPECT_GT(agreement(0.9), 0.8);
}

TEST(Oracle, MeasuredDegradationAgainstReference) {
  RgbImage ref(20, 20, 100), img(20, 20, 100);
  img.fill_rect(0, 0, 10, 20, 200, 100, 100);
  const auto g = object({0, 0, 20, 20}, 0, 0.9);
  EXPECT_DOUBLE_EQ(measured_degradation(img, &ref, g), 0.5);
  EXPECT_DOUBLE_EQ(measured_degradation(img, nullptr, g), 0.9);
  // Differences below the threshold are invisible.
  RgbImage faint(20, 20, 130);
  EXPECT_DOUBLE_EQ(measured_degradation(faint, &ref, g), 0.0);
}

TEST(Oracle, CoarsePerceptionIgnoresRequantization) {
  RgbImage ref(16, 16);
  Rng rng(2);
  ref = testing::random_image(16, 16, rng);
  const auto lut = quantization_lut(5);
  RgbImage squeezed = ref;
  for (auto& b : squeezed.bytes()) b = lut[b];
  const auto g = object({0, 0, 16, 16}, 0);
  EXPECT_DOUBLE_EQ(measured_degradation(squeezed, &ref, g, 0, 5), 0.0);
  EXPECT_GT(measured_degradation(squeezed, &ref, g, 0, 8), 0.5);
}

TEST(OracleConfig, ValidationAndJson) {
  SyntheticOracleConfig c;
  c.miss_rate_base = 1.2;
  EXPECT_THROW(validate(c, K), ValidationError);
  c.miss_rate_base = 0.1;
  c.confusion_kernel = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_THROW(validate(c, K), ValidationError);
  c.confusion_kernel = Eigen::MatrixXd::Constant(K, K, 1.0 / K);
  EXPECT_NO_THROW(validate(c, K));
  c.correlation_frames = 4;
  c.perception_bits = 6;
  const auto back = oracle_config_from_json(to_json(c));
  EXPECT_EQ(back.miss_rate_base, c.miss_rate_base);
  EXPECT_EQ(back.perception_bits, 6);
  EXPECT_EQ(back.correlation_frames, 4);
  EXPECT_LT((back.confusion_kernel - c.confusion_kernel).cwiseAbs().maxCoeff(), 1e-15);
}

class ScriptedBackend : public Detector {
 public:
  Capabilities caps{"scripted", ClassVocabulary::standard()};
  std::vector<Detection> next;
  bool fail = false;

  Capabilities capabilities() override { return caps; }
  std::vector<Detection> infer(const ImageFrame&) override {
    if (fail) throw TransportError(TransportError::Kind::Timeout, "stalled");
    return next;
  }
};

TEST(Registration, ProbabilityOnlyBackendRejected) {
  auto b = std::make_shared<ScriptedBackend>();
  b->caps.raw_logits = false;
  EXPECT_THROW(register_detector(b), ContractError);
}

TEST(Registration, VocabularyMismatchRejected) {
  auto b = std::make_shared<ScriptedBackend>();
  b->caps.vocabulary = ClassVocabulary({"a", "b"});
  EXPECT_THROW(register_detector(b, ClassVocabulary::standard()), ContractError);
  EXPECT_NO_THROW(register_detector(b));
}

TEST(Registration, ConfidenceFloorApplied) {
  // Floor 0.05 is only reachable with more than 20 classes.
  std::vector<std::string> names;
  for (int i = 0; i < 30; ++i) names.push_back("c" + std::to_string(i));
  auto b = std::make_shared<ScriptedBackend>();
  b->caps.vocabulary = ClassVocabulary(names);
  b->next = {testing::detection_with({1, 1, 5, 5}, 0, 0.9, 30),
             Detection::from_logits({1, 1, 5, 5}, Eigen::VectorXd::Zero(30)),
             testing::detection_with({2, 2, 6, 6}, 4, 0.05, 30)};
  const auto r = register_detector(b).infer(blank_frame(0));
  ASSERT_TRUE(r.scored());
  ASSERT_EQ(r.detections.size(), 2u);
  EXPECT_EQ(r.detections[1].class_id, 4);
}

TEST(Registration, TamperedConfidenceIsContractViolation) {
  auto b = std::make_shared<ScriptedBackend>();
  b->next = {testing::detection_with({1, 1, 5, 5}, 0, 0.9)};
  b->next[0].confidence = 0.5;
  const auto r = register_detector(b).infer(blank_frame(0));
  EXPECT_FALSE(r.scored());
  EXPECT_EQ(r.failure, TransportError::Kind::Malformed);
}

TEST(Registration, OutOfFrameBoxIsContractViolation) {
  auto b = std::make_shared<ScriptedBackend>();
  b->next = {testing::detection_with({1, 1, 500, 5}, 0, 0.9)};
  const auto r = register_detector(b).infer(blank_frame(0));
  EXPECT_FALSE(r.scored());
  EXPECT_TRUE(r.detections.empty());
}

TEST(Registration, TransportFailureMarksUnscored) {
  auto b = std::make_shared<ScriptedBackend>();
  b->fail = true;
  const auto r = register_detector(b).infer(blank_frame(0));
  EXPECT_EQ(r.status, FrameStatus::Unscored);
  EXPECT_EQ(r.failure, TransportError::Kind::Timeout);
}

TEST(SyntheticOracle, NeedsGroundTruth) {
  auto truth = std::make_shared<TruthTable>();
  truth->add("oracle", StreamId::Mid, 1, {{object({2, 2, 9, 9}, 4)}, nullptr});
  SyntheticOracle o({}, ClassVocabulary::standard(), truth);
  EXPECT_EQ(o.infer(blank_frame(1)).size(), 1u);
  EXPECT_THROW(o.infer(blank_frame(2)), ContractError);
  EXPECT_TRUE(o.capabilities().raw_logits);
}

}  // namespace
}  // namespace dfov::detect
