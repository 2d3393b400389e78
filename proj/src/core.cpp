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

#include "dfov/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>

#include "dfov/errors.hpp"

namespace dfov {

CameraStream camera_stream(StreamId id) noexcept {
  switch (id) {
    case StreamId::Mid:
      return {StreamId::Mid, 50.0, 0.5, 50.0};
    case StreamId::Long:
      return {StreamId::Long, 25.0, 10.0, 200.0};
  }
  return {StreamId::Mid, 50.0, 0.5, 50.0};
}

std::string_view to_string(StreamId id) noexcept { return id == StreamId::Mid ? "MID" : "LONG"; }

std::string_view camera_dir(StreamId id) noexcept {
  return id == StreamId::Mid ? "F_MIDRANGECAM_C" : "F_LONGRANGECAM_C";
}

StreamId parse_stream(std::string_view s) {
  if (s == "MID" || s == "mid" || s == "MID_RANGE" || s == "F_MIDRANGECAM_C") return StreamId::Mid;
  if (s == "LONG" || s == "long" || s == "LONG_RANGE" || s == "F_LONGRANGECAM_C")
    return StreamId::Long;
  throw ValidationError("unknown stream '" + std::string(s) + "'");
}

namespace {
constexpr std::array<std::pair<DegradationTag, std::string_view>, 4> kTagNames{{
    {DegradationTag::Clean, "clean"},
    {DegradationTag::PartiallyOccluded, "partially_occluded"},
    {DegradationTag::WeatherAffected, "weather_affected"},
    {DegradationTag::GlarePresent, "glare_present"},
}};
}  // namespace

std::vector<std::string> TagSet::names() const {
  std::vector<std::string> out;
  for (const auto& [tag, name] : kTagNames)
    if (contains(tag)) out.emplace_back(name);
  return out;
}

DegradationTag parse_tag(std::string_view s) {
  for (const auto& [tag, name] : kTagNames)
    if (name == s) return tag;
  throw ValidationError("unknown degradation tag '" + std::string(s) + "'");
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw DomainError("iou of a zero-area rectangle");
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

Box clamp_box(const Box& b, int w, int h) noexcept {
  return {std::clamp(b.x_min, 0.0, double(w)), std::clamp(b.y_min, 0.0, double(h)),
          std::clamp(b.x_max, 0.0, double(w)), std::clamp(b.y_max, 0.0, double(h))};
}

PixelRect pixel_rect(const Box& b, int w, int h) noexcept {
  return {std::clamp(static_cast<int>(std::floor(b.x_min)), 0, w),
          std::clamp(static_cast<int>(std::floor(b.y_min)), 0, h),
          std::clamp(static_cast<int>(std::ceil(b.x_max)), 0, w),
          std::clamp(static_cast<int>(std::ceil(b.y_max)), 0, h)};
}

ClassScores ClassScores::from_logits(Eigen::VectorXd logits, double temperature) {
  ClassScores s;
  s.probs = soften_scores(logits, temperature);
  s.logits = std::move(logits);
  s.temperature = temperature;
  return s;
}

Detection Detection::from_scores(const Box& bbox, ClassScores scores) {
  Detection d;
  d.bbox = bbox;
  d.class_id = static_cast<int>(argmax(scores.probs));
  d.confidence = scores.probs[d.class_id];
  d.scores = std::move(scores);
  return d;
}

Detection Detection::from_logits(const Box& bbox, Eigen::VectorXd logits, double temperature) {
  return from_scores(bbox, ClassScores::from_logits(std::move(logits), temperature));
}

bool satisfies_invariants(const Detection& d, int w, int h) {
  if (!d.bbox.valid() || !d.bbox.inside(w, h)) return false;
  const auto& p = d.scores.probs;
  if (p.size() == 0 || p.size() != d.scores.logits.size()) return false;
  if (std::abs(p.sum() - 1.0) > 1e-9 || (p.array() < 0).any() || (p.array() > 1).any())
    return false;
  if (d.class_id < 0 || d.class_id >= p.size()) return false;
  return argmax(p) == d.class_id && p[d.class_id] == d.confidence;
}

std::string_view to_string(SignalState s) noexcept {
  switch (s) {
    case SignalState::Red: return "red";
    case SignalState::Green: return "green";
    case SignalState::Yellow: return "yellow";
    case SignalState::Arrow: return "arrow";
    case SignalState::Pedestrian: return "pedestrian";
  }
  return "red";
}

SignalState parse_signal_state(std::string_view s) {
  if (s == "red") return SignalState::Red;
  if (s == "green") return SignalState::Green;
  if (s == "yellow") return SignalState::Yellow;
  if (s == "arrow") return SignalState::Arrow;
  if (s == "pedestrian") return SignalState::Pedestrian;
  throw ValidationError("unknown signal state '" + std::string(s) + "'");
}

ClassVocabulary::ClassVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw ConfigError("class vocabulary is empty");
  for (std::size_t i = 0; i < names_.size(); ++i)
    for (std::size_t j = i + 1; j < names_.size(); ++j)
      if (names_[i] == names_[j]) throw ConfigError("duplicate class name '" + names_[i] + "'");
}

ClassVocabulary ClassVocabulary::standard() {
  return ClassVocabulary({"stop_sign", "speed_limit", "traffic_light_red", "traffic_light_green",
                          "traffic_light_yellow", "one_way", "yield"});
}

std::optional<int> ClassVocabulary::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

std::optional<int> ClassVocabulary::resolve(std::string_view category,
                                            std::optional<SignalState> signal) const {
  if (auto direct = index_of(category)) return direct;
  auto starts = [&](std::string_view p) { return category.substr(0, p.size()) == p; };
  if (category == "traffic_light" && signal) {
    const std::string name = "traffic_light_" + std::string(to_string(*signal));
    return index_of(name);
  }
  if (category == "us_stop" || category == "stop") return index_of("stop_sign");
  if (category == "us_oneway" || category == "oneway") return index_of("one_way");
  if (category == "us_yield") return index_of("yield");
  if (starts("us_speedlimit") || starts("speed_limit_") || starts("speedlimit"))
    return index_of("speed_limit");
  return std::nullopt;
}

bool GroundTruthObject::is_traffic_light() const noexcept {
  return signal_state.has_value() || category.rfind("traffic_light", 0) == 0;
}

std::string_view to_string(OddTag t) noexcept {
  switch (t) {
    case OddTag::Highway: return "highway";
    case OddTag::Night: return "night";
    case OddTag::Rainy: return "rainy";
    case OddTag::Urban: return "urban";
  }
  return "highway";
}

OddTag parse_odd(std::string_view s) {
  for (auto t : kAllOdds)
    if (to_string(t) == s) return t;
  if (s == "rain") return OddTag::Rainy;
  throw ValidationError("unknown ODD '" + std::string(s) + "'");
}

FovMap FovMap::centered(int width, int height, double scale) {
  return {scale, 0.5 * width * (1.0 - scale), 0.5 * height * (1.0 - scale)};
}

Box FovMap::to_mid(const Box& b) const noexcept {
  return {scale * b.x_min + offset_x, scale * b.y_min + offset_y, scale * b.x_max + offset_x,
          scale * b.y_max + offset_y};
}

Box FovMap::to_long(const Box& b) const noexcept {
  return {(b.x_min - offset_x) / scale, (b.y_min - offset_y) / scale,
          (b.x_max - offset_x) / scale, (b.y_max - offset_y) / scale};
}

std::string_view to_string(ViolationKind k) noexcept {
  switch (k) {
    case ViolationKind::StreamMismatch: return "stream_mismatch";
    case ViolationKind::SeqIdMismatch: return "seq_id_mismatch";
    case ViolationKind::FrameIndexOrder: return "frame_index_order";
    case ViolationKind::TimestampOrder: return "timestamp_order";
    case ViolationKind::PairSkew: return "pair_skew";
    case ViolationKind::ResolutionChange: return "resolution_change";
  }
  return "unknown";
}

SequenceReport validate_sequence(std::span<const FramePair> pairs,
                                 const SequenceCheckOptions& options) {
  SequenceReport report;
  if (pairs.empty()) return report;
  auto add = [&](ViolationKind k, std::size_t i, std::string detail) {
    report.violations.push_back({k, i, std::move(detail)});
  };
  const auto& first = pairs.front();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.mid.stream != StreamId::Mid || p.lng.stream != StreamId::Long)
      add(ViolationKind::StreamMismatch, i, "pair must hold (MID, LONG) frames");
    if (p.mid.seq_id != first.mid.seq_id || p.lng.seq_id != first.mid.seq_id)
      add(ViolationKind::SeqIdMismatch, i, "seq_id differs from '" + first.mid.seq_id + "'");
    const auto skew = std::llabs(p.mid.timestamp_ns - p.lng.timestamp_ns);
    if (skew > options.max_skew_ns)
      add(ViolationKind::PairSkew, i, "skew " + std::to_string(skew) + " ns");
    if (p.mid.width() != first.mid.width() || p.mid.height() != first.mid.height() ||
        p.lng.width() != first.lng.width() || p.lng.height() != first.lng.height())
      add(ViolationKind::ResolutionChange, i, "resolution differs from first pair");
    if (i == 0) continue;
    const auto& prev = pairs[i - 1];
    if (p.mid.frame_index <= prev.mid.frame_index || p.lng.frame_index <= prev.lng.frame_index)
      add(ViolationKind::FrameIndexOrder, i, "frame_index does not increase");
    if (p.mid.timestamp_ns <= prev.mid.timestamp_ns || p.lng.timestamp_ns <= prev.lng.timestamp_ns)
      add(ViolationKind::TimestampOrder, i, "timestamp does not increase");
  }
  return report;
}

}  // namespace dfov
