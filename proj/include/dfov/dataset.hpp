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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfov/core.hpp"

namespace dfov::io {

enum class Source : std::uint8_t { Aimotive, Udacity, Waymo, SelfRecorded };
std::string_view to_string(Source s) noexcept;
Source parse_source(std::string_view s);

struct SequenceManifest {
  std::string seq_id;
  OddTag odd = OddTag::Urban;
  Source source = Source::Aimotive;
  double fps = 30.0;
  double duration_s = 0.0;
  std::int64_t frame_count_mid = 0;
  std::int64_t frame_count_long = 0;
  bool contains_target = false;
};

struct LoadWarning {
  enum class Kind : std::uint8_t { MissingAnnotation, BoxClamped, BoxDropped, UnknownCategory, UnpairedFrame };
  Kind kind;
  std::string path;
  std::string detail;
};
std::string_view to_string(LoadWarning::Kind k) noexcept;

/// One synchronized time step with ground truth in each stream's pixel space.
struct AnnotatedPair {
  FramePair frames;
  std::vector<GroundTruthObject> mid_objects;
  std::vector<GroundTruthObject> long_objects;

  const std::vector<GroundTruthObject>& objects(StreamId s) const noexcept {
    return s == StreamId::Mid ? mid_objects : long_objects;
  }
};

struct LoadedSequence {
  SequenceManifest manifest;
  FovMap fov;
  std::vector<AnnotatedPair> pairs;
  std::vector<LoadWarning> warnings;
};

struct LoadOptions {
  ClassVocabulary vocabulary = ClassVocabulary::standard();
  /// When false, frames carry metadata only (empty images); used by scans.
  bool decode_images = true;
  std::int64_t max_skew_ns = SequenceCheckOptions{}.max_skew_ns;
};

/// Locates `<root>/<odd>/<seq_id>`.
std::optional<std::filesystem::path> find_sequence_dir(const std::filesystem::path& root,
                                                       std::string_view seq_id);

/// Loads one sequence directory. Frames of the two cameras are paired by
/// nearest timestamp; annotations are given in mid-camera pixels and mapped
/// into the long camera through the sequence's FovMap unless `bbox_long` is
/// present. Throws LoadError naming the offending file.
LoadedSequence load_sequence(const std::filesystem::path& root, std::string_view seq_id,
                             const LoadOptions& options = {});

/// Manifests for every sequence under root, sorted by seq_id.
std::vector<SequenceManifest> scan_dataset(const std::filesystem::path& root,
                                           const LoadOptions& options = {});

struct FilterPolicy {
  double min_duration_s = 15.0;
};

/// Keeps manifests with at least one light/sign and a long enough clip.
std::vector<SequenceManifest> apply_content_filter(const std::vector<SequenceManifest>& manifests,
                                                   const FilterPolicy& policy = {});

struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 42;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// ODD-stratified split. Global split sizes follow the ratios (largest
/// remainder); per-ODD quotas are allocated so each split mirrors the pool's
/// ODD mix. Manifests without targets are excluded from the pool.
SplitSpec make_splits(const std::vector<SequenceManifest>& manifests,
                      std::array<double, 3> ratios = {0.6, 0.2, 0.2}, std::uint64_t seed = 42);

/// Per-split ODD share deviations above `tolerance` (fractions, not points).
std::vector<std::string> check_split_balance(const SplitSpec& split,
                                             const std::vector<SequenceManifest>& manifests,
                                             double tolerance = 0.05);

struct YoloLabel {
  int class_id;
  double cx, cy, w, h;
};

/// Writes `<out>/<camera>/frame_%06d.txt` for every frame of both streams and
/// `<out>/classes.txt`. Returns the number of label files written.
std::size_t export_yolo(const LoadedSequence& sequence, const std::filesystem::path& out,
                        const ClassVocabulary& vocabulary = ClassVocabulary::standard());
std::string format_yolo_line(const GroundTruthObject& obj, int width, int height);
std::vector<YoloLabel> parse_yolo_labels(std::string_view text);

nlohmann::json to_json(const SequenceManifest& m);
SequenceManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitSpec& s);
SplitSpec split_from_json(const nlohmann::json& j);

/// Writes a sequence in the on-disk layout (frames, annotations,
/// sequence.json). Annotations are written in mid-camera pixels.
void write_sequence(const std::filesystem::path& root, const LoadedSequence& sequence,
                    const ClassVocabulary& vocabulary = ClassVocabulary::standard());

}  // namespace dfov::io
