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
#include <filesystem>
#include <string>

#include <fmt/format.h>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dfov/png_io.hpp"
#include "test_util.hpp"

namespace dfov {
namespace {

namespace fs = std::filesystem;
using testing::run_command;
using testing::TempDir;

std::string cli(const std::string& args) { return fmt::format("{} {}", DFOV_CLI, args); }

/// Five small annotated sequences, one per ODD plus a second urban one.
void make_dataset(const fs::path& root, int sequences = 5) {
  const auto r = run_command(cli(fmt::format("synth --out {} --sequences {} --frames 24 --width 64 --height 36",
                                             root.string(), sequences)));
  ASSERT_EQ(r.exit_code, 0) << r.output;
}

void write_suite(const fs::path& p, const nlohmann::json& specs) {
  io::write_text_file(p, nlohmann::json{{"perturbations", specs}}.dump(2));
}

TEST(CliIngest, SplitsFiveSequencesThreeOneOne) {
  TempDir dir;
  make_dataset(dir / "data");
  const auto r = run_command(cli(fmt::format("ingest --root {} --out {} --min-duration 0.5", (dir / "data").string(),
                                             (dir / "out").string())));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto split = nlohmann::json::parse(testing::read_file(dir / "out" / "splits.json"));
  EXPECT_EQ(split["train"].size(), 3u);
  EXPECT_EQ(split["val"].size(), 1u);
  EXPECT_EQ(split["test"].size(), 1u);
  EXPECT_NE(r.output.find("urban"), std::string::npos);
}

TEST(CliIngest, RerunIsByteIdentical) {
  TempDir dir;
  make_dataset(dir / "data");
  for (const char* out : {"a", "b"})
    ASSERT_EQ(run_command(cli(fmt::format("ingest --root {} --out {} --min-duration 0.5", (dir / "data").string(),
                                          (dir / out).string())))
                  .exit_code,
              0);
  EXPECT_EQ(testing::read_file(dir / "a" / "splits.json"), testing::read_file(dir / "b" / "splits.json"));
  EXPECT_EQ(testing::read_file(dir / "a" / "manifests.json"), testing::read_file(dir / "b" / "manifests.json"));
}

TEST(CliIngest, RootWithoutAnnotationsIsConfigError) {
  TempDir dir;
  fs::create_directories(dir / "empty" / "urban");
  const auto r = run_command(cli(fmt::format("ingest --root {} --out {}", (dir / "empty").string(), (dir / "o").string())));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("no annotated sequences"), std::string::npos) << r.output;
}

TEST(CliIngest, MissingRootIsConfigError) {
  EXPECT_EQ(run_command(cli("ingest --root /nonexistent/dfov")).exit_code, 2);
}

TEST(CliPerturb, ZeroIntensityLeavesFramesUntouched) {
  TempDir dir;
  make_dataset(dir / "data", 1);
  write_suite(dir / "suite.json", nlohmann::json::array({{{"kind", "dirt"}, {"intensity", {{"coverage", 0.0}}}},
                                                        {{"kind", "fog"}, {"intensity", {{"density", 0.0}}}}}));
  const auto r = run_command(cli(fmt::format("perturb --root {} --suite {} --out {}", (dir / "data").string(),
                                             (dir / "suite.json").string(), (dir / "out").string())));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "data")) {
    if (e.path().extension() != ".png") continue;
    const auto rel = fs::relative(e.path(), dir / "data");
    ASSERT_TRUE(fs::exists(dir / "out" / "sequences" / rel)) << rel;
    EXPECT_EQ(io::read_png(e.path()), io::read_png(dir / "out" / "sequences" / rel)) << rel;
    EXPECT_EQ(testing::read_file(e.path()), testing::read_file(dir / "out" / "sequences" / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 48);
}

TEST(CliPerturb, RainAboveBoundaryMarkedCritical) {
  TempDir dir;
  make_dataset(dir / "data", 1);
  write_suite(dir / "suite.json", nlohmann::json::array({{{"kind", "rain"}, {"intensity", {{"droplet_coverage", 0.16}}}}}));
  const auto r = run_command(cli(fmt::format("perturb --root {} --suite {} --out {}", (dir / "data").string(),
                                             (dir / "suite.json").string(), (dir / "out").string())));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto s = nlohmann::json::parse(testing::read_file(dir / "out" / "severity_summary.json"));
  EXPECT_EQ(s["severity"]["rain"]["critical"].get<long>(), 48);
  EXPECT_EQ(s["severity"]["rain"]["sub_critical"].get<long>(), 0);
}

TEST(CliPerturb, SameSeedSameTree) {
  TempDir dir;
  make_dataset(dir / "data", 2);
  write_suite(dir / "suite.json", nlohmann::json::array({{{"kind", "snow"}, {"intensity", {{"surface_coverage", 0.3}}}, {"persistence_s", 0.4}},
                                                        {{"kind", "rain"}, {"intensity", {{"droplet_coverage", 0.1}}}, {"persistence_s", 0.3}}}));
  for (const char* out : {"a", "b", "c"}) {
    const std::string seed = std::string(out) == "c" ? "8" : "7";
    ASSERT_EQ(run_command(cli(fmt::format("perturb --root {} --suite {} --out {} --scheduled --seed {}",
                                          (dir / "data").string(), (dir / "suite.json").string(),
                                          (dir / out).string(), seed)))
                  .exit_code,
              0);
  }
  EXPECT_EQ(testing::tree_hash(dir / "a"), testing::tree_hash(dir / "b"));
  EXPECT_NE(testing::tree_hash(dir / "a"), testing::tree_hash(dir / "c"));
}

TEST(CliPerturb, InvalidSuiteNamesParameter) {
  TempDir dir;
  make_dataset(dir / "data", 1);
  write_suite(dir / "suite.json", nlohmann::json::array({{{"kind", "fog"}, {"intensity", {{"density", 3.0}}}}}));
  const auto r = run_command(cli(fmt::format("perturb --root {} --suite {} --out {}", (dir / "data").string(),
                                             (dir / "suite.json").string(), (dir / "out").string())));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("density"), std::string::npos) << r.output;
}

TEST(CliEvaluate, AblationHasSixRows) {
  TempDir dir;
  const auto r = run_command(cli(fmt::format("evaluate --ablate --sequences 3 --frames 90 --bootstrap 100 --out {}",
                                             (dir / "run").string())));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto rep = nlohmann::json::parse(testing::read_file(dir / "run" / "report.json"));
  ASSERT_EQ(rep["arms"].size(), 6u);
  EXPECT_EQ(rep["arms"][0]["name"], "baseline");
  EXPECT_EQ(rep["arms"][5]["name"], "+voting");
  const auto csv = testing::read_file(dir / "run" / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(CliEvaluate, UnreachableDetectorExitsThree) {
  TempDir dir;
  const auto r = run_command(cli(fmt::format("evaluate --sequences 1 --frames 90 --detector wire://127.0.0.1:{} --out {}",
                                             testing::unused_port(), (dir / "run").string())));
  EXPECT_EQ(r.exit_code, 3) << r.output;
  const auto rep = nlohmann::json::parse(testing::read_file(dir / "run" / "report.json"));
  EXPECT_TRUE(rep["partial"].get<bool>());
  EXPECT_TRUE(rep.contains("detector_failure"));
}

TEST(CliEvaluate, StdioAdapterScoresEveryFrame) {
  TempDir dir;
  const auto r = run_command(cli(fmt::format("evaluate --sequences 1 --frames 90 --bootstrap 50 --workers 1 "
                                             "--detector 'stdio:{} debug' --out {}",
                                             DFOV_FAKE_ADAPTER, (dir / "run").string())));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto rep = nlohmann::json::parse(testing::read_file(dir / "run" / "report.json"));
  EXPECT_FALSE(rep["partial"].get<bool>());
  EXPECT_EQ(rep["unscored_frames"].get<long>(), 0);
}

TEST(CliEvaluate, ArchivedConfigReproducesReport) {
  TempDir dir;
  ASSERT_EQ(run_command(cli(fmt::format("evaluate --sequences 3 --frames 90 --bootstrap 200 --seed 5 --out {}",
                                        (dir / "a").string())))
                .exit_code,
            0);
  const auto r = run_command(cli(fmt::format("evaluate --config {} --out {}", (dir / "a" / "run_config.json").string(),
                                             (dir / "b").string())));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(testing::read_file(dir / "a" / "report.json"), testing::read_file(dir / "b" / "report.json"));
}

TEST(CliEvaluate, BadConfigIsConfigError) {
  TempDir dir;
  io::write_text_file(dir / "bad.yaml", "seed: 1\nnot_a_key: 2\n");
  EXPECT_EQ(run_command(cli(fmt::format("evaluate --config {}", (dir / "bad.yaml").string()))).exit_code, 2);
}

TEST(CliReport, PrintsTable) {
  TempDir dir;
  ASSERT_EQ(run_command(cli(fmt::format("evaluate --sequences 2 --frames 90 --bootstrap 50 --out {}", (dir / "r").string())))
                .exit_code,
            0);
  const auto r = run_command(cli(fmt::format("report {}", (dir / "r").string())));
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.output.find("defended"), std::string::npos);
  EXPECT_EQ(run_command(cli(fmt::format("report {}", (dir / "nothing").string()))).exit_code, 2);
}

}  // namespace
}  // namespace dfov
