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
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfov/core.hpp"
#include "dfov/detector.hpp"
#include "dfov/image.hpp"
#include "dfov/scores.hpp"

namespace dfov::defense {

enum class GateMode : std::uint8_t { PerFrame, PerObject };
enum class Squeeze : std::uint8_t { None, Quantize, Median, Both };

std::string_view to_string(GateMode m) noexcept;
GateMode parse_gate_mode(std::string_view s);
std::string_view to_string(Squeeze s) noexcept;
Squeeze parse_squeeze(std::string_view s);

struct DefenseConfig {
  int bit_depth = 5;
  int median_kernel = 3;
  double temperature = 3.0;
  GateMode gate_mode = GateMode::PerFrame;
  double cross_fov_iou_min = 0.3;
  Squeeze mid_squeeze = Squeeze::Quantize;
  Squeeze long_squeeze = Squeeze::Median;
  /// Off: the mid stream passes through ungated and the long stream is not
  /// scored.
  bool gating = true;

  /// Undefended single-stream detector: no squeeze, tau = 1, no gate.
  static DefenseConfig undefended();
};

void validate(const DefenseConfig& c);
nlohmann::json to_json(const DefenseConfig& c);
DefenseConfig defense_config_from_json(const nlohmann::json& j);

/// v -> round(round(v / step) * step), step = 255 / (2^depth - 1).
RgbImage quantize_bits(const RgbImage& image, int depth);
/// As above, writing into `out` and reusing its storage.
void quantize_bits(const RgbImage& image, int depth, RgbImage& out);
/// Per-channel median over a kernel x kernel window with clamped borders.
RgbImage median_filter(const RgbImage& image, int kernel);
void median_filter(const RgbImage& image, int kernel, RgbImage& out);
RgbImage apply_squeeze(const RgbImage& image, Squeeze s, const DefenseConfig& c);
void apply_squeeze(const RgbImage& image, Squeeze s, const DefenseConfig& c, RgbImage& out);

/// Detection re-scored at temperature tau from its raw logits.
Detection soften(const Detection& d, double tau);

/// Confidence-weighted mean of per-detection entropies; ln K without detections.
double frame_entropy(std::span<const Detection> dets, int num_classes);

enum class PairStatus : std::uint8_t { Consistent, Conflicted };
std::string_view to_string(PairStatus s) noexcept;

struct FovPair {
  std::size_t mid;
  std::size_t lng;
  double iou;
  PairStatus status;
};

struct Association {
  std::vector<FovPair> pairs;
  std::vector<std::size_t> unpaired_mid;
  std::vector<std::size_t> unpaired_long;
};

/// Greedy best-IoU matching in mid coordinates. Throws ConfigError without a map.
Association cross_fov_associate(std::span<const Detection> mid, std::span<const Detection> lng,
                                const FovMap* map, double iou_min);

struct ScoredStream {
  const ClassVocabulary* vocabulary = nullptr;
  bool scored = true;
  /// Tempered detections in the stream's own pixel coordinates.
  std::vector<Detection> detections;
};

struct ObjectChoice {
  std::optional<std::size_t> mid;
  std::optional<std::size_t> lng;
  std::optional<PairStatus> status;
  StreamId chosen;
};

struct GateDecision {
  double h_mid = 0.0;
  double h_long = 0.0;
  StreamId chosen = StreamId::Long;
  std::vector<ObjectChoice> per_object;
};

struct SelectedDetection {
  /// Mid-frame coordinates.
  Detection detection;
  StreamId source;
};

struct GateResult {
  GateDecision decision;
  std::vector<SelectedDetection> selected;
};

/// Lower frame entropy wins, ties go to LONG. Unscored streams count as
/// infinitely uncertain. Throws ConfigError when vocabularies differ or the
/// per-object mode lacks a map.
GateResult gate_streams(const ScoredStream& mid, const ScoredStream& lng, const DefenseConfig& config,
                        const FovMap* map);

struct DefendedFrame {
  std::int64_t frame_index = 0;
  std::int64_t timestamp_ns = 0;
  /// False when no stream produced scores; a gap for the temporal layer.
  bool scored = false;
  ScoredStream mid;
  ScoredStream lng;
  GateDecision gate;
  std::vector<SelectedDetection> selected;
  RgbImage squeezed_mid;
  RgbImage squeezed_long;
  std::vector<std::string> failures;
};

DefendedFrame defend_frame(const FramePair& pair, const detect::RegisteredDetector& detector,
                           const DefenseConfig& config, const FovMap& map);
/// Overwrites `out`, reusing its image buffers across frames.
void defend_frame(const FramePair& pair, const detect::RegisteredDetector& detector,
                  const DefenseConfig& config, const FovMap& map, DefendedFrame& out);

nlohmann::json to_json(const GateDecision& g);

}  // namespace dfov::defense
