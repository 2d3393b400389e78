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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dfov/core.hpp"

namespace dfov::metrics {

struct Match {
  std::size_t det;
  std::size_t gt;
  double iou;
};

struct MatchResult {
  std::vector<Match> matches;
  std::vector<std::size_t> missed;
  std::vector<std::size_t> false_positives;
};

/// Greedy one-to-one matching in descending confidence order (stable): each
/// detection takes the highest-IoU unmatched gt with IoU >= thresh. With
/// `class_aware` only gts of the detection's class are eligible.
MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                             double iou_thresh, bool class_aware = false);

struct ImageRecord {
  std::vector<Detection> detections;
  std::vector<GroundTruthObject> gt;
};

/// 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

/// 101-point interpolated AP from (confidence, is_tp) pairs already sorted in
/// ranking order.
double average_precision(std::span<const std::pair<double, bool>> ranked, long num_gt);

struct MapResult {
  /// Absent when the split holds no ground truth.
  std::optional<double> map50;
  std::optional<double> map;
  std::map<int, double> ap50_per_class;
  std::map<int, double> ap_per_class;
};

MapResult compute_map(std::span<const ImageRecord> images, int num_classes,
                      std::span<const double> thresholds = {});

enum class Outcome : std::uint8_t { Correct, Misclassified, Missed };
std::string_view to_string(Outcome o) noexcept;

struct ObjectResult {
  int true_class = 0;
  Outcome outcome = Outcome::Missed;
  std::optional<int> predicted;
  double confidence = 0.0;
};

struct FrameOutcome {
  std::int64_t frame_index = 0;
  bool active = false;
  bool scored = true;
  std::vector<ObjectResult> objects;
};

/// Class-agnostic match at `iou_thresh`, one result per gt object in order.
std::vector<ObjectResult> classify_objects(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                                           double iou_thresh = 0.5);

struct AttackEvent {
  int true_class;
  /// Absent for a miss.
  std::optional<int> predicted;
};

struct AsrResult {
  /// Percentages.
  double asr = 0.0;
  double asr_flip_only = 0.0;
  double asr_frames = 0.0;
  long total_objects = 0;
  long attacked = 0;
  long flips = 0;
  long misses = 0;
  long active_frames = 0;
  long attacked_frames = 0;
  long unscored_frames = 0;
  std::vector<AttackEvent> events;
};

/// Objects correct on the clean run but misclassified or missed on the paired
/// perturbed run, over perturbation-active frames. Throws DomainError when no
/// perturbed object exists and ValidationError when the runs are not paired.
AsrResult compute_asr(std::span<const FrameOutcome> clean, std::span<const FrameOutcome> perturbed);

/// (K+1) x (K+1) counts; row = true class, column = predicted class. Index K
/// is the background row (false positives) and the miss column.
class ConfusionTally {
 public:
  explicit ConfusionTally(int num_classes = 0);

  void add(int true_class, std::optional<int> predicted, double count = 1.0);
  void add_false_positive(int predicted, double count = 1.0);
  ConfusionTally& operator+=(const ConfusionTally& other);

  int num_classes() const noexcept { return k_; }
  const Eigen::MatrixXd& counts() const noexcept { return counts_; }
  double total() const noexcept { return counts_.sum(); }
  /// Counts over the grand total.
  Eigen::MatrixXd rates() const;

 private:
  int k_;
  Eigen::MatrixXd counts_;
};

/// Tallies one frame: matched pairs by class, misses, unmatched detections.
void tally_frame(ConfusionTally& tally, std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                 double iou_thresh = 0.5);

struct SeverityMatrix {
  /// (K+1) x (K+1) like ConfusionTally.
  Eigen::MatrixXd w;
  std::string provenance = "DEFAULT_MUTCD";

  /// Throws ValidationError on a nonzero diagonal or entries outside [0, 1].
  void validate() const;
  int num_classes() const noexcept { return static_cast<int>(w.rows()) - 1; }
};

SeverityMatrix default_mutcd(const ClassVocabulary& vocabulary);
/// {"provenance": ..., "weights": {true: {pred: w}}} with "<miss>" and
/// "<background>" for the extra column and row; unlisted cells keep defaults.
SeverityMatrix severity_from_json(const nlohmann::json& j, const ClassVocabulary& vocabulary);
nlohmann::json to_json(const SeverityMatrix& s, const ClassVocabulary& vocabulary);

struct Risk {
  double risk_cost = 0.0;
  std::optional<double> rw_map;
  double cfr = 0.0;
};

double risk_cost(const Eigen::MatrixXd& rates, const SeverityMatrix& severity);
/// R over joint rates, RW-mAP = mAP (1 - R), CFR = mass on maximal-weight cells.
Risk compute_risk(const ConfusionTally& tally, const SeverityMatrix& severity, std::optional<double> map);
/// ASR with each attack event weighted by its severity (percentage).
double rw_asr(const AsrResult& asr, const SeverityMatrix& severity);

/// 1 - sigma/mu (population sigma), floored at 0; 0 for an empty or zero-mean series.
double stability(std::span<const double> confidences);
/// Class changes per 100 frames.
double flip_rate(std::span<const int> classes);

struct ObjectTimeline {
  int true_class = 0;
  /// Voted class per frame; absent when not detected or unscored.
  std::vector<std::optional<int>> voted;
};

struct MtcdResult {
  double mean_frames = 0.0;
  double mean_seconds = 0.0;
  long events = 0;
  long censored = 0;
  std::vector<std::int64_t> delays;
};

/// For each (offset, object): first frame >= offset with the correct class,
/// minus offset. Objects never correct again contribute the remaining length
/// and are counted as censored. Offsets at or past the end are skipped.
MtcdResult compute_mtcd(std::span<const ObjectTimeline> objects, std::span<const std::int64_t> offsets, double fps);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Type-7 sample quantile of unsorted values.
double quantile(std::vector<double> values, double q);
/// Percentile bootstrap of the mean. Throws ValidationError with < 2 samples.
Interval bootstrap_ci(std::span<const double> samples, std::uint64_t seed, int resamples = 1000,
                      double level = 0.95);
/// Percentile bootstrap of sum(num) / sum(den) over resampled units.
Interval bootstrap_ratio_ci(std::span<const double> numerators, std::span<const double> denominators,
                            std::uint64_t seed, int resamples = 1000, double level = 0.95);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  bool significant = false;
  /// Zero variance of the differences; p is exact (0 or 1).
  bool exact = false;
  std::size_t n = 0;
};

TTest paired_ttest(std::span<const double> a, std::span<const double> b, double alpha = 0.05);

}  // namespace dfov::metrics
