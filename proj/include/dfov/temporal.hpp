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
#include <deque>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dfov/core.hpp"
#include "dfov/image.hpp"

namespace dfov::temporal {

struct FrameQuality {
  double contrast = 0.0;
  double sharpness = 0.0;
  double occlusion = 0.0;
  double weight = 0.0;
};

struct QualityOptions {
  /// Laplacian variance that scores sharpness 1.0; defaults to that of
  /// reference_checkerboard().
  double sharpness_reference = 0.0;
  /// Luma below which a pixel counts as occluded when no provenance exists.
  double dark_threshold = 40.0;
};

/// 64 x 64 black/white checkerboard with 8-pixel squares.
RgbImage reference_checkerboard();
double laplacian_variance(const RgbImage& image);
/// RMS luminance contrast / 128 and clipped Laplacian-variance sharpness;
/// occlusion from provenance when given, else the dark-pixel fraction.
FrameQuality quality_weight(const RgbImage& image, std::optional<double> provenance_occlusion = std::nullopt,
                            const QualityOptions& options = {});

struct WeightedScores {
  Eigen::VectorXd probs;
  double weight = 1.0;
};

struct Vote {
  int class_id = 0;
  double confidence = 0.0;
  /// Normalized weighted class scores.
  Eigen::VectorXd scores;
  bool unweighted_fallback = false;
};

/// argmax of sum w_i p_i; all-zero weights fall back to the plain mean.
/// Throws ValidationError on an empty window.
Vote weighted_vote(std::span<const WeightedScores> window);

struct VotingConfig {
  int window = 5;
  double persistence_conf = 0.6;
  int persistence_frames = 3;
  int buffer_len = 15;
  double fps = 30.0;
  double association_iou = 0.5;
  /// Emit the last voted detection of COASTING tracks.
  bool emit_coasting = false;
};

void validate(const VotingConfig& c);
nlohmann::json to_json(const VotingConfig& c);
VotingConfig voting_config_from_json(const nlohmann::json& j);

enum class TrackStatus : std::uint8_t { Candidate, Confirmed, Coasting, Dropped };
std::string_view to_string(TrackStatus s) noexcept;

struct Observation {
  std::int64_t frame_index;
  Detection detection;
  double weight;
};

struct TrackState {
  std::int64_t track_id = 0;
  TrackStatus status = TrackStatus::Candidate;
  int consecutive_conf_frames = 0;
  std::int64_t first_frame = 0;
  std::int64_t last_seen_frame = 0;
  int coast_age = 0;
  bool was_confirmed = false;
  Box box;
  std::deque<Observation> history;
  /// Voted class when the track was confirmed.
  std::optional<int> reference_class;
  std::optional<int> last_voted_class;
  /// Start of the current departure from the reference class.
  std::optional<std::int64_t> deviation_start;
  std::optional<Detection> last_output;
};

struct TrackTransition {
  std::int64_t frame_index;
  std::int64_t track_id;
  TrackStatus from;
  TrackStatus to;
};

struct RecoveryEvent {
  std::int64_t track_id;
  std::int64_t deviation_start;
  std::int64_t recovered_at;
  int restored_class;
};

/// Per-frame detector output as the temporal layer sees it.
struct FrameObservation {
  std::int64_t frame_index = 0;
  bool scored = true;
  std::vector<Detection> detections;
  /// Quality weight per detection (its source frame's omega).
  std::vector<double> weights;
};

struct VotedFrame {
  std::int64_t frame_index = 0;
  bool scored = true;
  std::vector<Detection> detections;
};

/// Causal trailing-window voter with persistence tracking. Frames must arrive
/// in strictly increasing index order.
class TemporalVoter {
 public:
  explicit TemporalVoter(VotingConfig config);

  VotedFrame push(const FrameObservation& frame);
  const std::vector<TrackState>& tracks() const noexcept { return tracks_; }
  const std::vector<TrackTransition>& transitions() const noexcept { return transitions_; }
  const std::vector<RecoveryEvent>& recoveries() const noexcept { return recoveries_; }
  const VotingConfig& config() const noexcept { return config_; }

 private:
  void set_status(TrackState& t, TrackStatus s, std::int64_t frame);

  VotingConfig config_;
  std::vector<TrackState> tracks_;
  std::vector<TrackTransition> transitions_;
  std::vector<RecoveryEvent> recoveries_;
  std::optional<std::int64_t> last_frame_;
  std::int64_t next_track_id_ = 0;
};

struct SequenceVote {
  std::vector<VotedFrame> frames;
  std::vector<TrackState> tracks;
  std::vector<TrackTransition> transitions;
  std::vector<RecoveryEvent> recoveries;
};

SequenceVote process_sequence(std::span<const FrameObservation> frames, const VotingConfig& config);

nlohmann::json to_json(const TrackTransition& t);
nlohmann::json to_json(const RecoveryEvent& e);

}  // namespace dfov::temporal
