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
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dfov/core.hpp"
#include "dfov/errors.hpp"

namespace dfov::detect {

/// Detections below this confidence are dropped at the contract boundary.
inline constexpr double kConfidenceFloor = 0.05;

struct Capabilities {
  std::string name;
  ClassVocabulary vocabulary;
  /// False for backends that only expose post-softmax probabilities.
  bool raw_logits = true;
  /// False declares single-client mode; calls are then serialized.
  bool concurrent = true;
  std::optional<int> max_width;
  std::optional<int> max_height;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual Capabilities capabilities() = 0;
  /// Raw detections. Throws TransportError on backend failure.
  virtual std::vector<Detection> infer(const ImageFrame& frame) = 0;
};

enum class FrameStatus : std::uint8_t { Scored, Unscored };

struct InferResult {
  FrameStatus status = FrameStatus::Scored;
  std::vector<Detection> detections;
  std::optional<TransportError::Kind> failure;
  std::string message;

  bool scored() const noexcept { return status == FrameStatus::Scored; }
};

std::string_view to_string(TransportError::Kind k) noexcept;

/// A detector admitted through registration. Applies the confidence floor,
/// checks every detection against the contract and turns transport failures
/// into UNSCORED results.
class RegisteredDetector {
 public:
  RegisteredDetector(std::shared_ptr<Detector> backend, Capabilities caps);

  InferResult infer(const ImageFrame& frame) const;
  const ClassVocabulary& vocabulary() const noexcept { return caps_.vocabulary; }
  const Capabilities& capabilities() const noexcept { return caps_; }
  bool single_client() const noexcept { return !caps_.concurrent; }

 private:
  std::shared_ptr<Detector> backend_;
  Capabilities caps_;
  std::shared_ptr<std::mutex> serial_;
};

/// Queries capabilities and rejects backends without raw logits or with a
/// vocabulary different from `expected`. Throws ContractError.
RegisteredDetector register_detector(std::shared_ptr<Detector> backend,
                                     const std::optional<ClassVocabulary>& expected = std::nullopt);

struct SyntheticOracleConfig {
  double miss_rate_base = 0.0;
  /// K x K row-stochastic; empty means identity.
  Eigen::MatrixXd confusion_kernel;
  double localization_noise_px = 0.0;
  /// Extra confusion (and a `miss_share` of it as extra miss probability) per
  /// unit of measured degradation on the object box.
  double occlusion_sensitivity = 0.0;
  double logit_scale = 1.0;
  std::uint64_t seed = 42;
  /// Upper bound of the per-detection score uncertainty drawn on clean input.
  double score_noise = 0.0;
  double miss_share = 1.0;
  /// Intensity resolution at which degradation is judged; 8 is full depth.
  int perception_bits = 8;
  /// Correlation time, in frames, of each object's miss and class draws
  /// along a sequence; 0 draws every frame independently.
  double correlation_frames = 0.0;
  /// Share of that noise common to both cameras' views of an object.
  double stream_correlation = 0.0;
};

void validate(const SyntheticOracleConfig& config, int num_classes);
nlohmann::json to_json(const SyntheticOracleConfig& config);
SyntheticOracleConfig oracle_config_from_json(const nlohmann::json& j);

/// Fraction of box pixels whose largest channel difference from the clean
/// reference exceeds `threshold`, both seen at `perception_bits` depth.
/// Without a reference the annotated occlusion score stands in.
double measured_degradation(const RgbImage& image, const RgbImage* reference,
                            const GroundTruthObject& object, int threshold = 40, int perception_bits = 8);

/// One detection per surviving gt object; deterministic per (seed, seq_id,
/// stream, frame_index).
std::vector<Detection> synthetic_infer(const ImageFrame& frame,
                                       std::span<const GroundTruthObject> gt,
                                       const SyntheticOracleConfig& config, int num_classes,
                                       const RgbImage* reference = nullptr);

struct FrameTruth {
  std::vector<GroundTruthObject> objects;
  std::shared_ptr<const RgbImage> reference;
};

/// Ground truth keyed by (seq_id, stream, frame_index).
class TruthTable {
 public:
  void add(const std::string& seq_id, StreamId stream, std::int64_t frame_index, FrameTruth truth);
  const FrameTruth* find(const ImageFrame& frame) const;
  void clear() { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::map<std::tuple<std::string, StreamId, std::int64_t>, FrameTruth> entries_;
};

class SyntheticOracle final : public Detector {
 public:
  SyntheticOracle(SyntheticOracleConfig config, ClassVocabulary vocabulary,
                  std::shared_ptr<const TruthTable> truth);

  Capabilities capabilities() override;
  /// Throws ContractError when the frame has no ground truth.
  std::vector<Detection> infer(const ImageFrame& frame) override;
  const SyntheticOracleConfig& config() const noexcept { return config_; }

 private:
  SyntheticOracleConfig config_;
  ClassVocabulary vocabulary_;
  std::shared_ptr<const TruthTable> truth_;
};

}  // namespace dfov::detect
