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
#include <vector>

#include <gtest/gtest.h>

#include "dfov/perturb.hpp"
#include "test_util.hpp"

namespace dfov::perturb {
namespace {

ImageFrame frame_of(const RgbImage& img, StreamId s = StreamId::Mid, std::int64_t index = 3) {
  ImageFrame f;
  f.stream = s;
  f.seq_id = "p";
  f.frame_index = index;
  f.image = img;
  return f;
}

ImageFrame random_frame(int w = 48, int h = 32, std::uint64_t seed = 1) {
  Rng rng(seed);
  return frame_of(testing::random_image(w, h, rng));
}

GroundTruthObject sign_at(const Box& b, int cls = 0) {
  GroundTruthObject g;
  g.bbox = b;
  g.class_id = cls;
  g.category = "stop_sign";
  g.object_id = 1;
  return g;
}

PerturbationSpec spec(Kind k, Params p, std::uint64_t seed = 5) {
  PerturbationSpec s;
  s.kind = k;
  s.intensity = std::move(p);
  s.rng_seed = seed;
  return s;
}

TEST(Perturb, ZeroIntensityIsIdentityForEveryKind) {
  const auto f = random_frame();
  const std::vector<GroundTruthObject> gt{sign_at({10, 8, 30, 24})};
  for (Kind k : kAllKinds) {
    auto s = spec(k, {});
    s.object_aware = k == Kind::Graffiti || k == Kind::VegetationOcclusion || k == Kind::SunGlare;
    const auto r = apply_perturbation(f, s, gt);
    EXPECT_EQ(r.frame.image, f.image) << to_string(k);
    EXPECT_EQ(r.occluded_fraction, 0.0);
  }
}

TEST(Perturb, DirtZeroCoverageIdentity) {
  const auto f = random_frame();
  EXPECT_EQ(apply_perturbation(f, spec(Kind::Dirt, {{"coverage", 0.0}})).frame.image, f.image);
}

TEST(Perturb, HorizontalMotionBlurIsNineTapBoxFilter) {
  const auto f = random_frame(40, 12);
  const auto out = apply_perturbation(f, spec(Kind::MotionBlur, {{"kernel_px", 9}})).frame.image;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 40; ++x)
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int t = -4; t <= 4; ++t) sum += f.image.at(std::clamp(x + t, 0, 39), y, c);
        ASSERT_EQ(out.at(x, y, c), std::lround(sum / 9.0)) << x << "," << y;
      }
}

TEST(Perturb, SunGlareSaturatesQuarterOfSignBox) {
  const auto f = random_frame(64, 48, 4);
  const std::vector<GroundTruthObject> gt{sign_at({20, 10, 40, 26})};
  auto s = spec(Kind::SunGlare, {{"saturated_area", 0.25}});
  s.object_aware = true;
  const auto out = apply_perturbation(f, s, gt).frame.image;
  int sat = 0;
  for (int y = 10; y < 26; ++y)
    for (int x = 20; x < 40; ++x)
      if (out.at(x, y, 0) == 255 || out.at(x, y, 1) == 255 || out.at(x, y, 2) == 255) ++sat;
  EXPECT_GE(sat, 0.25 * 20 * 16);
}

RgbImage magenta(int w, int h) {
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y, 0) = 255, img.at(x, y, 2) = 255;
  return img;
}

double changed_fraction(const RgbImage& a, const RgbImage& b, const PixelRect& r) {
  long n = 0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x)
      n += a.at(x, y, 0) != b.at(x, y, 0) || a.at(x, y, 1) != b.at(x, y, 1) || a.at(x, y, 2) != b.at(x, y, 2);
  return static_cast<double>(n) / static_cast<double>(r.area());
}

TEST(Perturb, MaskCoverageMatchesRequest) {
  const auto f = frame_of(magenta(80, 60));
  const PixelRect whole{0, 0, 80, 60};
  for (double c : {0.05, 0.2, 0.35, 0.7}) {
    EXPECT_NEAR(changed_fraction(f.image, apply_perturbation(f, spec(Kind::Dirt, {{"coverage", c}})).frame.image, whole), c, 0.02);
    EXPECT_NEAR(changed_fraction(f.image, apply_perturbation(f, spec(Kind::Snow, {{"surface_coverage", c}})).frame.image, whole), c, 0.02);
    EXPECT_NEAR(changed_fraction(f.image,
                                 apply_perturbation(f, spec(Kind::Rain, {{"droplet_coverage", c}, {"streak_alpha", 1.0}})).frame.image,
                                 whole),
                c, 0.02);
  }
}

TEST(Perturb, ObjectAttachedCoverageOnSignBox) {
  const auto f = frame_of(magenta(80, 60));
  const std::vector<GroundTruthObject> gt{sign_at({12, 14, 44, 38})};
  const PixelRect box{12, 14, 44, 38};
  for (double c : {0.1, 0.3, 0.6}) {
    auto g = spec(Kind::Graffiti, {{"char_coverage", c}});
    g.object_aware = true;
    EXPECT_NEAR(changed_fraction(f.image, apply_perturbation(f, g, gt).frame.image, box), c, 0.02);
    auto v = spec(Kind::VegetationOcclusion, {{"coverage", c}});
    v.object_aware = true;
    const auto r = apply_perturbation(f, v, gt);
    EXPECT_NEAR(changed_fraction(f.image, r.frame.image, box), c, 0.02);
    EXPECT_NEAR(r.effects[0].measured.at("visibility_fraction"), 1.0 - c, 0.02);
  }
}

TEST(Perturb, ValidationNamesParameter) {
  try {
    validate(spec(Kind::Dirt, {{"coverage", 1.5}}));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("coverage"), std::string::npos);
  }
  EXPECT_THROW(validate(spec(Kind::Fog, {{"thickness", 0.2}})), ValidationError);
  EXPECT_EQ(validation_errors(spec(Kind::Rain, {{"droplet_coverage", -0.1}, {"angle_deg", 90}})).size(), 2u);
}

TEST(Severity, RainAboveFifteenPercentIsCritical) {
  EXPECT_EQ(classify_severity(Kind::Rain, {{"droplet_coverage", 0.16}}), Severity::Critical);
}

TEST(Severity, MotionBlurSevenIsSubCritical) {
  EXPECT_EQ(classify_severity(Kind::MotionBlur, {{"kernel_px", 7}}), Severity::SubCritical);
  EXPECT_EQ(classify_severity(Kind::MotionBlur, {{"kernel_px", 8}}), Severity::Critical);
}

TEST(Severity, AllZeroIsSubCritical) {
  for (Kind k : kAllKinds) {
    Params p;
    for (const auto& r : parameter_ranges(k)) p[std::string(r.name)] = 0.0;
    if (k == Kind::Fog) continue;  // zero density is full contrast, checked below
    EXPECT_EQ(classify_severity(k, p), Severity::SubCritical) << to_string(k);
  }
  EXPECT_EQ(classify_severity(Kind::Fog, {{"density", 0.0}}), Severity::SubCritical);
}

TEST(Severity, UnknownParameterRejected) {
  EXPECT_THROW(classify_severity(Kind::Rain, {{"wetness", 0.1}}), ValidationError);
  EXPECT_EQ(classify_severity("fog", {{"contrast_ratio", 0.29}}), Severity::Critical);
}

TEST(Severity, AppliedEffectJsonCarriesSeverity) {
  const auto f = random_frame();
  const auto r = apply_perturbation(f, spec(Kind::Rain, {{"droplet_coverage", 0.16}}));
  EXPECT_EQ(to_json(r.effects[0])["severity"], "CRITICAL");
}

TEST(Clustering, ErrorProbabilities) {
  EXPECT_EQ(clustering_error_probability(1), 0.0);
  EXPECT_EQ(clustering_error_probability(2), 0.05);
  EXPECT_EQ(clustering_error_probability(3), 0.12);
  EXPECT_EQ(clustering_error_probability(7), 0.28);
}

TEST(Compound, RainBeforeHeadlightGlareWithBothTags) {
  auto f = random_frame();
  const auto c = compose_compound({spec(Kind::HeadlightGlare, {{"glare_lux", 120}}),
                                   spec(Kind::Rain, {{"droplet_coverage", 0.05}})});
  EXPECT_EQ(c.order(), (std::vector<std::string>{"rain", "headlight_glare"}));
  const auto r = c.apply(f);
  EXPECT_TRUE(r.frame.tags.contains(DegradationTag::WeatherAffected));
  EXPECT_TRUE(r.frame.tags.contains(DegradationTag::GlarePresent));
  EXPECT_FALSE(r.frame.tags.contains(DegradationTag::Clean));
  ASSERT_EQ(r.effects.size(), 2u);
  EXPECT_EQ(r.effects[0].kind, Kind::Rain);
}

TEST(Compound, SingleElementMatchesDirectApplication) {
  const auto f = random_frame();
  const auto s = spec(Kind::Snow, {{"surface_coverage", 0.2}, {"luminance_shift", 0.1}});
  EXPECT_EQ(compose_compound({s}).apply(f).frame.image, apply_perturbation(f, s).frame.image);
}

TEST(Compound, RainOverDirtInteracts) {
  const auto f = random_frame(64, 48, 9);
  const auto dirt = spec(Kind::Dirt, {{"coverage", 0.4}});
  const auto rain = spec(Kind::Rain, {{"droplet_coverage", 0.2}});
  const auto both = compose_compound({rain, dirt}).apply(f);
  const auto sequential = apply_perturbation(apply_perturbation(f, dirt).frame, rain);
  const auto& rain_effect = both.effects[0];
  ASSERT_EQ(rain_effect.kind, Kind::Rain);
  const double interaction = rain_effect.measured.at("interaction_px");
  EXPECT_GT(interaction, 0);
  const double diff = changed_fraction(both.frame.image, sequential.frame.image, {0, 0, 64, 48}) * 64 * 48;
  EXPECT_GT(diff, 0);
  EXPECT_LE(diff, interaction);
}

TEST(Compound, TwoGeometricDistortionsRejected) {
  const auto rs = spec(Kind::RollingShutter, {{"velocity", 1}});
  EXPECT_THROW(compose_compound({rs, rs}), CompositionError);
  EXPECT_THROW(compose_compound({}), CompositionError);
}

TEST(Schedule, PersistenceOfTwoPointEightSecondsIsEightyFourFrames) {
  std::vector<PerturbationSpec> specs{spec(Kind::Fog, {{"density", 0.5}})};
  const auto s = schedule_sequence(300, specs, 30.0, 17);
  ASSERT_EQ(s.entries.size(), 1u);
  EXPECT_EQ(s.entries[0].offset_frame - s.entries[0].onset_frame, 84);
  long active = 0;
  for (std::int64_t i = 0; i < 300; ++i) active += s.active(i);
  EXPECT_EQ(active, 84);
}

TEST(Schedule, FullSequencePersistenceStartsAtZero) {
  auto sp = spec(Kind::Fog, {{"density", 0.5}});
  sp.persistence_s = 4.0;
  const auto s = schedule_sequence(120, std::vector{sp}, 30.0, 3);
  EXPECT_EQ(s.onset_frame(), 0);
  EXPECT_EQ(s.offset_frame(), 120);
  EXPECT_TRUE(s.active(119));
}

TEST(Schedule, EnvelopeRampRespectsMaxRate) {
  const auto s = schedule_sequence(200, std::vector{spec(Kind::Dirt, {{"coverage", 0.3}})}, 30.0, 8);
  const auto& env = s.entries[0].envelope;
  for (std::size_t i = 1; i < env.size(); ++i) EXPECT_LE(std::abs(env[i] - env[i - 1]), 0.25 + 1e-12);
  const auto mid = s.entries[0].onset_frame + 40;
  ASSERT_EQ(s.resolved_at(mid).size(), 1u);
  EXPECT_DOUBLE_EQ(s.resolved_at(mid)[0].intensity.at("coverage"), 0.3);
}

TEST(Schedule, DeterministicPerSeed) {
  const std::vector specs{spec(Kind::Fog, {{"density", 0.5}}), spec(Kind::Rain, {{"droplet_coverage", 0.1}})};
  const auto a = schedule_sequence(300, specs, 30.0, 99);
  const auto b = schedule_sequence(300, specs, 30.0, 99);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].onset_frame, b.entries[i].onset_frame);
    EXPECT_EQ(a.entries[i].envelope, b.entries[i].envelope);
  }
}

TEST(Schedule, PersistenceLongerThanSequenceRejected) {
  auto sp = spec(Kind::Fog, {{"density", 0.5}});
  sp.persistence_s = 10;
  EXPECT_THROW(schedule_sequence(100, std::vector{sp}, 30.0, 1), ValidationError);
}

TEST(Schedule, StreamTargetRespected) {
  auto sp = spec(Kind::Dirt, {{"coverage", 0.3}});
  sp.streams = StreamTarget::Long;
  sp.persistence_s = 1.0;
  const auto s = schedule_sequence(30, std::vector{sp}, 30.0, 1);
  auto f = random_frame();
  f.frame_index = 10;
  EXPECT_EQ(apply_scheduled(f, s).frame.image, f.image);
  f.stream = StreamId::Long;
  EXPECT_NE(apply_scheduled(f, s).frame.image, f.image);
}

TEST(SpecJson, RoundTrip) {
  auto s = spec(Kind::Graffiti, {{"char_coverage", 0.3}}, 77);
  s.object_aware = true;
  s.streams = StreamTarget::Mid;
  const auto back = spec_from_json(to_json(s));
  EXPECT_EQ(back.kind, s.kind);
  EXPECT_EQ(back.intensity, s.intensity);
  EXPECT_EQ(back.rng_seed, 77u);
  EXPECT_TRUE(back.object_aware);
  EXPECT_EQ(back.streams, StreamTarget::Mid);
}

}  // namespace
}  // namespace dfov::perturb
