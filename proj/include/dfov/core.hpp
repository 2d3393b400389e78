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

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dfov/image.hpp"
#include "dfov/scores.hpp"

namespace dfov {

enum class StreamId : std::uint8_t { Mid, Long };

struct CameraStream {
  StreamId id;
  double fov_degrees;
  double range_min_m;
  double range_max_m;
};

/// Rig constants: mid 50 deg / 0.5-50 m, long 25 deg / 10-200 m.
CameraStream camera_stream(StreamId id) noexcept;
std::string_view to_string(StreamId id) noexcept;
/// Directory name of a stream in the sequence layout (F_MIDRANGECAM_C, ...).
std::string_view camera_dir(StreamId id) noexcept;
StreamId parse_stream(std::string_view s);

inline constexpr std::int64_t kDefaultFps = 30;

enum class DegradationTag : std::uint8_t {
  Clean = 1,
  PartiallyOccluded = 2,
  WeatherAffected = 4,
  GlarePresent = 8,
};

class TagSet {
 public:
  TagSet() = default;
  TagSet(std::initializer_list<DegradationTag> tags) {
    for (auto t : tags) insert(t);
  }

  void insert(DegradationTag t) noexcept { bits_ |= static_cast<std::uint8_t>(t); }
  void erase(DegradationTag t) noexcept { bits_ &= static_cast<std::uint8_t>(~static_cast<std::uint8_t>(t)); }
  bool contains(DegradationTag t) const noexcept { return bits_ & static_cast<std::uint8_t>(t); }
  bool empty() const noexcept { return bits_ == 0; }
  std::vector<std::string> names() const;

  friend bool operator==(TagSet, TagSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

DegradationTag parse_tag(std::string_view s);

struct ImageFrame {
  StreamId stream = StreamId::Mid;
  std::string seq_id;
  std::int64_t frame_index = 0;
  std::int64_t timestamp_ns = 0;
  RgbImage image;
  TagSet tags{DegradationTag::Clean};

  int width() const noexcept { return image.width(); }
  int height() const noexcept { return image.height(); }
};

/// Axis-aligned pixel rectangle (x_min, y_min, x_max, y_max).
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }
  bool valid() const noexcept { return x_min < x_max && y_min < y_max; }
  double center_x() const noexcept { return 0.5 * (x_min + x_max); }
  double center_y() const noexcept { return 0.5 * (y_min + y_max); }
  bool inside(int w, int h) const noexcept {
    return x_min >= 0 && y_min >= 0 && x_max <= w && y_max <= h;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union. Throws DomainError on a zero-area rectangle.
double iou(const Box& a, const Box& b);

/// Clamps to [0, w] x [0, h]. Result may be degenerate.
Box clamp_box(const Box& b, int w, int h) noexcept;

/// Integer pixel span [x0, x1) x [y0, y1) covered by a box, clipped to the image.
struct PixelRect {
  int x0, y0, x1, y1;
  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  long area() const noexcept { return static_cast<long>(width()) * height(); }
  bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
};
PixelRect pixel_rect(const Box& b, int w, int h) noexcept;

/// Per-class scores. `probs` is always the tempered softmax of `logits`.
struct ClassScores {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  double temperature = 1.0;

  static ClassScores from_logits(Eigen::VectorXd logits, double temperature = 1.0);
  /// Same logits re-tempered.
  ClassScores with_temperature(double tau) const { return from_logits(logits, tau); }
  int size() const noexcept { return static_cast<int>(logits.size()); }
};

struct Detection {
  Box bbox;
  int class_id = 0;
  ClassScores scores;
  double confidence = 0.0;
  std::optional<std::int64_t> track_id;

  /// Builds a detection whose class and confidence follow from the scores.
  static Detection from_scores(const Box& bbox, ClassScores scores);
  static Detection from_logits(const Box& bbox, Eigen::VectorXd logits, double temperature = 1.0);
};

/// argmax/max consistency plus box validity within (w, h).
bool satisfies_invariants(const Detection& d, int w, int h);

enum class SignalState : std::uint8_t { Red, Green, Yellow, Arrow, Pedestrian };
std::string_view to_string(SignalState s) noexcept;
SignalState parse_signal_state(std::string_view s);

/// Ordered class names; index is the class id. Categories from sources are
/// harmonized through `resolve` (e.g. us_speedlimit_35 -> speed_limit).
class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  explicit ClassVocabulary(std::vector<std::string> names);

  /// stop_sign, speed_limit, traffic_light_red, traffic_light_green,
  /// traffic_light_yellow, one_way, yield.
  static ClassVocabulary standard();

  int size() const noexcept { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::optional<int> index_of(std::string_view name) const;
  std::optional<int> resolve(std::string_view category,
                             std::optional<SignalState> signal = std::nullopt) const;

  friend bool operator==(const ClassVocabulary&, const ClassVocabulary&) = default;

 private:
  std::vector<std::string> names_;
};

struct GroundTruthObject {
  Box bbox;
  std::string category;
  int class_id = -1;
  double occlusion_score = 0.0;
  std::optional<SignalState> signal_state;
  std::optional<std::string> ocr_text;
  std::optional<std::int64_t> object_id;

  double visibility_fraction() const noexcept { return 1.0 - occlusion_score; }
  bool is_traffic_light() const noexcept;
};

enum class OddTag : std::uint8_t { Highway, Night, Rainy, Urban };
inline constexpr OddTag kAllOdds[] = {OddTag::Highway, OddTag::Night, OddTag::Rainy,
                                      OddTag::Urban};
std::string_view to_string(OddTag t) noexcept;
OddTag parse_odd(std::string_view s);

/// Static long -> mid coordinate map: p_mid = scale * p_long + offset.
struct FovMap {
  double scale = 0.5;
  double offset_x = 0.0;
  double offset_y = 0.0;

  /// Long camera imaging the central `scale` fraction of a w x h mid frame
  /// at the same resolution.
  static FovMap centered(int width, int height, double scale = 0.5);

  Box to_mid(const Box& long_box) const noexcept;
  Box to_long(const Box& mid_box) const noexcept;
};

struct FramePair {
  ImageFrame mid;
  ImageFrame lng;
};

struct SequenceCheckOptions {
  /// Half a frame period at 30 fps.
  std::int64_t max_skew_ns = 16'666'667;
};

enum class ViolationKind : std::uint8_t {
  StreamMismatch,
  SeqIdMismatch,
  FrameIndexOrder,
  TimestampOrder,
  PairSkew,
  ResolutionChange,
};
std::string_view to_string(ViolationKind k) noexcept;

struct Violation {
  ViolationKind kind;
  std::size_t pair_index;
  std::string detail;
};

struct SequenceReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

/// Checks monotone indices/timestamps, seq_id agreement, pair skew and
/// per-stream resolution. Violations are returned, never thrown.
SequenceReport validate_sequence(std::span<const FramePair> pairs,
                                 const SequenceCheckOptions& options = {});

}  // namespace dfov
