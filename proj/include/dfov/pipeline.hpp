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
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfov/dataset.hpp"
#include "dfov/defense.hpp"
#include "dfov/detector.hpp"
#include "dfov/perturb.hpp"
#include "dfov/synth.hpp"
#include "dfov/temporal.hpp"

namespace dfov::pipeline {

struct SyntheticDatasetSpec {
  int sequences = 50;
  int frames = 120;
  int width = 320;
  int height = 180;
  int objects = 3;
  double fps = 30.0;
};

struct DetectorSpec {
  enum class Kind : std::uint8_t { Synthetic, Wire };
  Kind kind = Kind::Synthetic;
  detect::SyntheticOracleConfig oracle;
  std::string endpoint;
  int timeout_ms = 500;

  /// `synthetic`, `synthetic:<params.json>` or a wire endpoint URI.
  static DetectorSpec parse(std::string_view text);
};

struct MetricsOptions {
  int bootstrap_n = 1000;
  double alpha = 0.05;
  double ci_level = 0.95;
  double match_iou = 0.5;
  std::string severity_path;
};

/// How a suite is laid over the sequences: one spec per sequence in turn, or
/// every spec scheduled on every sequence.
enum class SuiteMode : std::uint8_t { Rotate, Compound };

struct RunConfig {
  /// Empty selects the in-memory synthetic dataset.
  std::string dataset_root;
  std::string split = "test";
  std::string splits_path;
  /// Shorter clips are left out when splits are derived on the fly.
  double min_duration_s = 15.0;
  SyntheticDatasetSpec synthetic;
  DetectorSpec detector;
  defense::DefenseConfig defense;
  temporal::VotingConfig voting;
  bool voting_enabled = true;
  std::string suite_path;
  std::vector<perturb::PerturbationSpec> suite;
  SuiteMode suite_mode = SuiteMode::Rotate;
  MetricsOptions metrics;
  std::string output_dir = "runs/latest";
  std::uint64_t seed = 42;
  /// 0 means one per available core.
  int workers = 0;
};

/// Oracle profile used by the reference experiments.
detect::SyntheticOracleConfig reference_oracle();
/// Mixed single-stream, dual-stream and object-attached perturbations.
std::vector<perturb::PerturbationSpec> reference_suite();
/// RunConfig with the reference oracle and suite.
RunConfig reference_run_config();

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
/// YAML or JSON by content; relative paths resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
/// Parses YAML (or JSON, a YAML subset) into JSON.
nlohmann::json yaml_to_json(const std::string& text);

struct ArmConfig {
  std::string name;
  defense::DefenseConfig defense;
  bool voting = false;
};

/// Undefended single-stream detector and the configured full defense.
std::vector<ArmConfig> evaluation_arms(const RunConfig& c);
/// baseline, +squeeze, +distill-temp, +gate, +crossfov, +voting.
std::vector<ArmConfig> ablation_arms(const RunConfig& c);

struct EvalOutput {
  nlohmann::json report;
  std::string report_csv;
  std::vector<std::string> audit;
  std::string degradation_csv;
  std::string recovery_csv;
  std::string ablation_csv;
  long unscored_frames = 0;
  bool partial() const noexcept { return unscored_frames > 0; }
};

/// Clean and perturbed passes of every arm over every sequence. Output is
/// independent of the worker count.
EvalOutput evaluate(const RunConfig& config, const std::vector<ArmConfig>& arms);

/// Writes report.json, report.csv, audit.jsonl, plot series and the archived
/// run_config.json into `dir`.
void write_outputs(const EvalOutput& out, const RunConfig& config, const std::filesystem::path& dir);

/// Human-readable summary table of a report.
std::string format_report(const nlohmann::json& report);

}  // namespace dfov::pipeline
