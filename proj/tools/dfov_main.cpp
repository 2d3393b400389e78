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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dfov/dataset.hpp"
#include "dfov/errors.hpp"
#include "dfov/perturb.hpp"
#include "dfov/pipeline.hpp"
#include "dfov/png_io.hpp"
#include "dfov/rng.hpp"
#include "dfov/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dfov;

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kTransport = 3, kInternal = 4 };

/// Thrown for user-facing failures that already carry their exit code.
struct Usage : std::runtime_error {
  Usage(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

json read_json_or_yaml(const fs::path& p) {
  const std::string text = io::read_text_file(p);
  json j = json::parse(text, nullptr, false);
  return j.is_discarded() ? pipeline::yaml_to_json(text) : j;
}

std::string odd_table(const std::vector<io::SequenceManifest>& manifests, const io::SplitSpec& split) {
  std::map<std::string, std::string> where;
  for (const auto& id : split.train) where[id] = "train";
  for (const auto& id : split.val) where[id] = "val";
  for (const auto& id : split.test) where[id] = "test";
  std::string s = fmt::format("{:<10} {:>9} {:>9} {:>11} {:>6} {:>6} {:>6}\n", "ODD", "sequences", "frames",
                              "duration_s", "train", "val", "test");
  for (OddTag odd : kAllOdds) {
    long n = 0, frames = 0, tr = 0, va = 0, te = 0;
    double dur = 0;
    for (const auto& m : manifests) {
      if (m.odd != odd) continue;
      ++n;
      frames += m.frame_count_mid;
      dur += m.duration_s;
      const auto it = where.find(m.seq_id);
      if (it == where.end()) continue;
      tr += it->second == "train";
      va += it->second == "val";
      te += it->second == "test";
    }
    s += fmt::format("{:<10} {:>9} {:>9} {:>11.1f} {:>6} {:>6} {:>6}\n", to_string(odd), n, frames, dur, tr, va, te);
  }
  return s;
}

struct IngestArgs {
  std::string root;
  std::string out = ".";
  std::uint64_t seed = 42;
  double min_duration = 15.0;
  std::vector<double> ratios{0.6, 0.2, 0.2};
};

int cmd_ingest(const IngestArgs& a) {
  if (!fs::is_directory(a.root)) throw Usage(kConfig, fmt::format("dataset root '{}' does not exist", a.root));
  const auto scanned = io::scan_dataset(a.root);
  std::vector<io::SequenceManifest> annotated;
  for (const auto& m : scanned)
    if (m.contains_target) annotated.push_back(m);
  if (annotated.empty()) throw Usage(kConfig, "no annotated sequences");
  const auto kept = io::apply_content_filter(scanned, {a.min_duration});
  if (kept.empty()) throw Usage(kConfig, fmt::format("no annotated sequences of at least {} s", a.min_duration));
  if (a.ratios.size() != 3) throw Usage(kConfig, "--ratios takes three values");
  const auto split = io::make_splits(kept, {a.ratios[0], a.ratios[1], a.ratios[2]}, a.seed);
  fs::create_directories(a.out);
  json mj = json::array();
  for (const auto& m : kept) mj.push_back(io::to_json(m));
  io::write_text_file(fs::path(a.out) / "manifests.json", mj.dump(2) + "\n");
  io::write_text_file(fs::path(a.out) / "splits.json", io::to_json(split).dump(2) + "\n");
  std::cout << odd_table(kept, split);
  for (const auto& w : io::check_split_balance(split, kept)) std::cerr << "warning: " << w << "\n";
  return kOk;
}

struct SplitArgs {
  std::string manifests;
  std::string out = "splits.json";
  std::uint64_t seed = 42;
  std::vector<double> ratios{0.6, 0.2, 0.2};
};

int cmd_split(const SplitArgs& a) {
  const json j = read_json_or_yaml(a.manifests);
  std::vector<io::SequenceManifest> manifests;
  for (const auto& m : j) manifests.push_back(io::manifest_from_json(m));
  if (a.ratios.size() != 3) throw Usage(kConfig, "--ratios takes three values");
  const auto split = io::make_splits(manifests, {a.ratios[0], a.ratios[1], a.ratios[2]}, a.seed);
  io::write_text_file(a.out, io::to_json(split).dump(2) + "\n");
  std::cout << odd_table(manifests, split);
  return kOk;
}

struct PerturbArgs {
  std::string root;
  std::string suite;
  std::string out;
  std::vector<std::string> sequences;
  bool scheduled = false;
  std::uint64_t seed = 42;
};

int cmd_perturb(const PerturbArgs& a) {
  const auto suite = perturb::suite_from_json(read_json_or_yaml(a.suite));
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < suite.size(); ++i)
    for (const auto& e : perturb::validation_errors(suite[i]))
      problems.push_back(fmt::format("suite[{}] {}: {}", i, perturb::to_string(suite[i].kind), e));
  if (!problems.empty()) {
    std::string msg = "invalid perturbation suite:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Usage(kConfig, msg);
  }
  std::vector<std::string> ids = a.sequences;
  if (ids.empty())
    for (const auto& m : io::scan_dataset(a.root)) ids.push_back(m.seq_id);
  if (ids.empty()) throw Usage(kConfig, "no sequences to perturb");

  json summary{{"seed", a.seed}, {"mode", a.scheduled ? "scheduled" : "static"}, {"sequences", json::array()}};
  std::map<std::string, std::pair<long, long>> totals;
  for (const auto& id : ids) {
    auto seq = io::load_sequence(a.root, id);
    auto specs = suite;
    for (auto& s : specs) s.rng_seed = mix_seed({s.rng_seed, a.seed, hash_string(id)});
    perturb::PerturbationSchedule sched;
    std::optional<perturb::CompositeTransform> composite;
    if (a.scheduled) {
      sched = perturb::schedule_sequence(static_cast<std::int64_t>(seq.pairs.size()), specs, seq.manifest.fps,
                                         mix_seed({a.seed, hash_string(id), 7}));
    }
    std::vector<perturb::PerturbationSpec> mid_specs, long_specs;
    for (const auto& s : specs) {
      if (s.applies_to(StreamId::Mid)) mid_specs.push_back(s);
      if (s.applies_to(StreamId::Long)) long_specs.push_back(s);
    }
    const auto mid_tf = perturb::compose_compound(mid_specs);
    const auto long_tf = perturb::compose_compound(long_specs);
    const fs::path prov_dir = fs::path(a.out) / "provenance" / id;
    fs::create_directories(prov_dir);
    std::map<std::string, std::pair<long, long>> counts;
    for (auto& pair : seq.pairs) {
      json frame_prov{{"frame_index", pair.frames.mid.frame_index}};
      for (auto stream : {StreamId::Mid, StreamId::Long}) {
        auto& frame = stream == StreamId::Mid ? pair.frames.mid : pair.frames.lng;
        const auto& gt = pair.objects(stream);
        perturb::PerturbResult r = a.scheduled ? perturb::apply_scheduled(frame, sched, gt)
                                               : (stream == StreamId::Mid ? mid_tf : long_tf).apply(frame, gt);
        json effects = json::array();
        for (const auto& e : r.effects) {
          json ej = perturb::to_json(e);
          auto& c = counts[std::string(perturb::to_string(e.kind))];
          (ej.value("severity", std::string()) == "CRITICAL" ? c.first : c.second)++;
          effects.push_back(std::move(ej));
        }
        frame_prov[std::string(to_string(stream))] = {{"effects", effects},
                                                      {"occluded_fraction", r.occluded_fraction},
                                                      {"tags", r.frame.tags.names()}};
        frame = std::move(r.frame);
      }
      io::write_text_file(prov_dir / fmt::format("frame_{:06d}.json", pair.frames.mid.frame_index),
                          frame_prov.dump(1) + "\n");
    }
    io::write_sequence(fs::path(a.out) / "sequences", seq);
    json per_kind = json::object();
    for (const auto& [k, v] : counts) {
      per_kind[k] = {{"critical", v.first}, {"sub_critical", v.second}};
      totals[k].first += v.first;
      totals[k].second += v.second;
    }
    summary["sequences"].push_back({{"seq_id", id}, {"frames", seq.pairs.size()}, {"severity", per_kind}});
  }
  json tot = json::object();
  for (const auto& [k, v] : totals) {
    tot[k] = {{"critical", v.first}, {"sub_critical", v.second}};
    std::cout << fmt::format("{:<22} critical {:>7}  sub_critical {:>7}\n", k, v.first, v.second);
  }
  summary["severity"] = tot;
  io::write_text_file(fs::path(a.out) / "severity_summary.json", summary.dump(2) + "\n");
  return kOk;
}

struct EvalArgs {
  std::string config;
  std::string root;
  std::string split;
  std::string splits;
  std::string detector;
  std::string suite;
  std::string out;
  std::string severity;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> sequences;
  std::optional<int> frames;
  std::optional<int> bootstrap;
  std::optional<double> min_duration;
  bool no_voting = false;
  bool ablate = false;
};

pipeline::RunConfig build_config(const EvalArgs& a) {
  pipeline::RunConfig c = a.config.empty() ? pipeline::reference_run_config() : pipeline::load_run_config(a.config);
  if (!a.root.empty()) c.dataset_root = a.root;
  if (!a.split.empty()) c.split = a.split;
  if (!a.splits.empty()) c.splits_path = a.splits;
  if (!a.detector.empty()) c.detector = pipeline::DetectorSpec::parse(a.detector);
  if (!a.suite.empty()) {
    c.suite_path = a.suite;
    c.suite = perturb::suite_from_json(read_json_or_yaml(a.suite));
  }
  if (!a.out.empty()) c.output_dir = a.out;
  if (!a.severity.empty()) c.metrics.severity_path = a.severity;
  if (a.seed) c.seed = *a.seed;
  if (a.workers) c.workers = *a.workers;
  if (a.sequences) c.synthetic.sequences = *a.sequences;
  if (a.frames) c.synthetic.frames = *a.frames;
  if (a.bootstrap) c.metrics.bootstrap_n = *a.bootstrap;
  if (a.min_duration) c.min_duration_s = *a.min_duration;
  if (a.no_voting) c.voting_enabled = false;
  // Round-trip so flag values pass the same checks as a config file.
  return pipeline::run_config_from_json(pipeline::to_json(c));
}

int cmd_evaluate(const EvalArgs& a) {
  const auto config = build_config(a);
  const auto arms = a.ablate ? pipeline::ablation_arms(config) : pipeline::evaluation_arms(config);
  const auto out = pipeline::evaluate(config, arms);
  pipeline::write_outputs(out, config, config.output_dir);
  std::cout << pipeline::format_report(out.report);
  std::cout << "wrote " << config.output_dir << "\n";
  if (out.partial()) {
    std::cerr << fmt::format("partial report: {} frames UNSCORED\n", out.unscored_frames);
    return kTransport;
  }
  return kOk;
}

int cmd_report(const std::string& run) {
  fs::path p(run);
  if (fs::is_directory(p)) p /= "report.json";
  const json j = json::parse(io::read_text_file(p), nullptr, false);
  if (j.is_discarded() || !j.contains("arms")) throw Usage(kConfig, fmt::format("{}: not a report", p.string()));
  std::cout << pipeline::format_report(j);
  return kOk;
}

struct SynthArgs {
  std::string out;
  int sequences = 5;
  int frames = 480;
  int width = 320;
  int height = 180;
  int objects = 3;
  std::uint64_t seed = 42;
};

int cmd_synth(const SynthArgs& a) {
  for (int i = 0; i < a.sequences; ++i) {
    synth::SceneOptions o;
    o.frames = a.frames;
    o.width = a.width;
    o.height = a.height;
    o.objects = a.objects;
    o.odd = kAllOdds[static_cast<std::size_t>(i) % 4];
    o.seed = mix_seed({a.seed, static_cast<std::uint64_t>(i)});
    io::write_sequence(a.out, synth::generate_sequence(fmt::format("syn_{:04d}", i), o));
  }
  std::cout << fmt::format("wrote {} sequences to {}\n", a.sequences, a.out);
  return kOk;
}

void add_eval_flags(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--config", a.config, "RunConfig file (YAML or JSON)");
  cmd->add_option("--root", a.root, "Dataset root; omit for the synthetic dataset");
  cmd->add_option("--split", a.split, "train, val, test or all");
  cmd->add_option("--splits", a.splits, "splits.json from ingest");
  cmd->add_option("--detector", a.detector, "synthetic, synthetic:<params.json>, wire://host:port or stdio:<cmd>");
  cmd->add_option("--suite", a.suite, "Perturbation suite file");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--severity", a.severity, "Severity matrix JSON");
  cmd->add_option("--seed", a.seed, "Seed (default 42)");
  cmd->add_option("--workers", a.workers, "Worker threads (0 = all cores)");
  cmd->add_option("--sequences", a.sequences, "Synthetic sequence count");
  cmd->add_option("--frames", a.frames, "Synthetic frames per sequence");
  cmd->add_option("--bootstrap", a.bootstrap, "Bootstrap resamples");
  cmd->add_option("--min-duration", a.min_duration, "Shortest clip kept, seconds");
  cmd->add_flag("--no-voting", a.no_voting, "Disable temporal voting in the defended arm");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-FoV traffic sign and light robustness toolkit"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Scan a dataset, write manifests.json and splits.json");
  c_ingest->add_option("--root", ingest.root, "Dataset root")->required();
  c_ingest->add_option("--out", ingest.out, "Output directory");
  c_ingest->add_option("--seed", ingest.seed, "Split seed");
  c_ingest->add_option("--min-duration", ingest.min_duration, "Shortest clip kept, seconds");
  c_ingest->add_option("--ratios", ingest.ratios, "train val test")->expected(3);

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Derive splits from manifests.json");
  c_split->add_option("--manifests", split.manifests, "manifests.json")->required();
  c_split->add_option("--out", split.out, "splits.json path");
  c_split->add_option("--seed", split.seed, "Split seed");
  c_split->add_option("--ratios", split.ratios, "train val test")->expected(3);

  PerturbArgs pert;
  auto* c_pert = app.add_subcommand("perturb", "Render a perturbation suite over sequences");
  c_pert->add_option("--root", pert.root, "Dataset root")->required();
  c_pert->add_option("--suite", pert.suite, "Suite file")->required();
  c_pert->add_option("--out", pert.out, "Output directory")->required();
  c_pert->add_option("--seq", pert.sequences, "Sequence ids (default all)");
  c_pert->add_flag("--scheduled", pert.scheduled, "Apply with onset/offset schedules instead of every frame");
  c_pert->add_option("--seed", pert.seed, "Seed");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "Clean and perturbed passes, undefended and defended arms");
  add_eval_flags(c_eval, eval);
  c_eval->add_flag("--ablate", eval.ablate, "Run the six incremental defense rows instead");

  EvalArgs abl;
  abl.ablate = true;
  auto* c_abl = app.add_subcommand("ablate", "Incremental defense ablation");
  add_eval_flags(c_abl, abl);

  std::string run_dir;
  auto* c_report = app.add_subcommand("report", "Print a run's summary table");
  c_report->add_option("run", run_dir, "Run directory or report.json")->required();

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Write a synthetic dual-camera dataset");
  c_syn->add_option("--out", syn.out, "Dataset root")->required();
  c_syn->add_option("--sequences", syn.sequences, "Sequence count");
  c_syn->add_option("--frames", syn.frames, "Frames per sequence");
  c_syn->add_option("--width", syn.width, "Frame width");
  c_syn->add_option("--height", syn.height, "Frame height");
  c_syn->add_option("--objects", syn.objects, "Objects per sequence");
  c_syn->add_option("--seed", syn.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_split) return cmd_split(split);
    if (*c_pert) return cmd_perturb(pert);
    if (*c_eval) return cmd_evaluate(eval);
    if (*c_abl) return cmd_evaluate(abl);
    if (*c_report) return cmd_report(run_dir);
    if (*c_syn) return cmd_synth(syn);
  } catch (const Usage& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kTransport;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kConfig;
  } catch (const CompositionError& e) {
    std::cerr << "composition error: " << e.what() << "\n";
    return kConfig;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
