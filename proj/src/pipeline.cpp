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

#include "dfov/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "dfov/errors.hpp"
#include "dfov/metrics.hpp"
#include "dfov/png_io.hpp"
#include "dfov/rng.hpp"
#include "dfov/wire.hpp"

namespace dfov::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

DetectorSpec DetectorSpec::parse(std::string_view text) {
  DetectorSpec d;
  if (text == "synthetic") {
    d.oracle = reference_oracle();
  } else if (text.starts_with("synthetic:")) {
    const fs::path p(std::string(text.substr(10)));
    json j = json::parse(io::read_text_file(p), nullptr, false);
    if (j.is_discarded()) throw ConfigError(fmt::format("{}: not valid JSON", p.string()));
    d.oracle = detect::oracle_config_from_json(j);
  } else {
    d.kind = Kind::Wire;
    d.endpoint = std::string(text);
    wire::Endpoint::parse(text);
  }
  return d;
}

detect::SyntheticOracleConfig reference_oracle() {
  detect::SyntheticOracleConfig c;
  c.miss_rate_base = 0.01;
  c.localization_noise_px = 0.5;
  c.occlusion_sensitivity = 0.5;
  c.logit_scale = 3.0;
  c.seed = 42;
  c.score_noise = 0.1;
  c.miss_share = 1.0;
  c.perception_bits = 5;
  c.correlation_frames = 5.0;
  c.stream_correlation = 0.5;
  return c;
}

std::vector<perturb::PerturbationSpec> reference_suite() {
  using perturb::Kind;
  using perturb::StreamTarget;
  auto spec = [](Kind k, perturb::Params p, StreamTarget s, bool aware = false) {
    perturb::PerturbationSpec x;
    x.kind = k;
    x.intensity = std::move(p);
    x.streams = s;
    x.object_aware = aware;
    return x;
  };
  std::vector<perturb::PerturbationSpec> suite{
      spec(Kind::Fog, {{"density", 0.5}}, StreamTarget::Both),
      spec(Kind::Rain, {{"droplet_coverage", 0.3}}, StreamTarget::Both),
      spec(Kind::Snow, {{"surface_coverage", 0.4}}, StreamTarget::Both),
      spec(Kind::HeadlightGlare, {{"glare_lux", 400}}, StreamTarget::Both),
      spec(Kind::SunGlare, {{"saturated_area", 0.6}}, StreamTarget::Both, true),
      spec(Kind::Dirt, {{"coverage", 0.35}}, StreamTarget::Mid),
      spec(Kind::VegetationOcclusion, {{"coverage", 0.6}}, StreamTarget::Both, true),
      spec(Kind::Graffiti, {{"char_coverage", 0.3}}, StreamTarget::Both, true),
      spec(Kind::MotionBlur, {{"kernel_px", 9}}, StreamTarget::Both),
  };
  for (std::size_t i = 0; i < suite.size(); ++i) suite[i].rng_seed = 1000 + i;
  return suite;
}

RunConfig reference_run_config() {
  RunConfig c;
  c.detector.oracle = reference_oracle();
  c.suite = reference_suite();
  return c;
}

namespace {

std::string_view to_string(SuiteMode m) { return m == SuiteMode::Rotate ? "rotate" : "compound"; }
SuiteMode parse_suite_mode(std::string_view s) {
  if (s == "rotate") return SuiteMode::Rotate;
  if (s == "compound") return SuiteMode::Compound;
  throw ConfigError(fmt::format("unknown suite_mode '{}'", s));
}

}  // namespace

json to_json(const RunConfig& c) {
  json det;
  if (c.detector.kind == DetectorSpec::Kind::Synthetic) {
    det = {{"kind", "synthetic"}, {"synthetic", detect::to_json(c.detector.oracle)}};
  } else {
    det = {{"kind", "wire"}, {"endpoint", c.detector.endpoint}, {"timeout_ms", c.detector.timeout_ms}};
  }
  json suite = json::array();
  for (const auto& s : c.suite) suite.push_back(perturb::to_json(s));
  return {{"dataset_root", c.dataset_root},
          {"split", c.split},
          {"splits_path", c.splits_path},
          {"min_duration_s", c.min_duration_s},
          {"synthetic_dataset",
           {{"sequences", c.synthetic.sequences},
            {"frames", c.synthetic.frames},
            {"width", c.synthetic.width},
            {"height", c.synthetic.height},
            {"objects", c.synthetic.objects},
            {"fps", c.synthetic.fps}}},
          {"detector", det},
          {"defense", defense::to_json(c.defense)},
          {"voting", temporal::to_json(c.voting)},
          {"voting_enabled", c.voting_enabled},
          {"suite_path", c.suite_path},
          {"suite", suite},
          {"suite_mode", to_string(c.suite_mode)},
          {"metrics",
           {{"bootstrap_n", c.metrics.bootstrap_n},
            {"alpha", c.metrics.alpha},
            {"ci_level", c.metrics.ci_level},
            {"match_iou", c.metrics.match_iou},
            {"severity_path", c.metrics.severity_path}}},
          {"output_dir", c.output_dir},
          {"seed", c.seed},
          {"workers", c.workers}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a mapping");
  static const std::set<std::string> known{"dataset_root", "split",  "splits_path",    "min_duration_s", "synthetic_dataset", "detector",
                                           "defense",      "voting", "voting_enabled", "suite_path",        "suite",
                                           "suite_mode",   "metrics", "output_dir",    "seed",              "workers"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError(fmt::format("unknown run config key '{}'", k));
  RunConfig c = reference_run_config();
  try {
    c.dataset_root = j.value("dataset_root", c.dataset_root);
    c.split = j.value("split", c.split);
    c.splits_path = j.value("splits_path", c.splits_path);
    c.min_duration_s = j.value("min_duration_s", c.min_duration_s);
    if (j.contains("synthetic_dataset")) {
      const auto& s = j["synthetic_dataset"];
      c.synthetic.sequences = s.value("sequences", c.synthetic.sequences);
      c.synthetic.frames = s.value("frames", c.synthetic.frames);
      c.synthetic.width = s.value("width", c.synthetic.width);
      c.synthetic.height = s.value("height", c.synthetic.height);
      c.synthetic.objects = s.value("objects", c.synthetic.objects);
      c.synthetic.fps = s.value("fps", c.synthetic.fps);
    }
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      if (d.is_string()) {
        c.detector = DetectorSpec::parse(d.get<std::string>());
      } else {
        const auto kind = d.value("kind", std::string("synthetic"));
        if (kind == "synthetic") {
          c.detector.kind = DetectorSpec::Kind::Synthetic;
          if (d.contains("synthetic")) c.detector.oracle = detect::oracle_config_from_json(d["synthetic"]);
        } else if (kind == "wire") {
          c.detector.kind = DetectorSpec::Kind::Wire;
          c.detector.endpoint = d.at("endpoint").get<std::string>();
          c.detector.timeout_ms = d.value("timeout_ms", c.detector.timeout_ms);
          wire::Endpoint::parse(c.detector.endpoint);
        } else {
          throw ConfigError(fmt::format("unknown detector kind '{}'", kind));
        }
      }
    }
    if (j.contains("defense")) c.defense = defense::defense_config_from_json(j["defense"]);
    if (j.contains("voting")) c.voting = temporal::voting_config_from_json(j["voting"]);
    c.voting_enabled = j.value("voting_enabled", c.voting_enabled);
    c.suite_path = j.value("suite_path", c.suite_path);
    if (j.contains("suite")) c.suite = perturb::suite_from_json(j["suite"]);
    if (j.contains("suite_mode")) c.suite_mode = parse_suite_mode(j["suite_mode"].get<std::string>());
    if (j.contains("metrics")) {
      const auto& m = j["metrics"];
      c.metrics.bootstrap_n = m.value("bootstrap_n", c.metrics.bootstrap_n);
      c.metrics.alpha = m.value("alpha", c.metrics.alpha);
      c.metrics.ci_level = m.value("ci_level", c.metrics.ci_level);
      c.metrics.match_iou = m.value("match_iou", c.metrics.match_iou);
      c.metrics.severity_path = m.value("severity_path", c.metrics.severity_path);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (c.synthetic.sequences < 1 || c.synthetic.frames < 1) throw ConfigError("synthetic dataset must be non-empty");
  if (c.metrics.bootstrap_n < 1) throw ConfigError("metrics.bootstrap_n must be >= 1");
  if (!(c.metrics.alpha > 0 && c.metrics.alpha < 1)) throw ConfigError("metrics.alpha must lie in (0, 1)");
  if (c.workers < 0) throw ConfigError("workers must be >= 0");
  for (const auto& s : c.suite) perturb::validate(s);
  return c;
}

namespace {

json yaml_node(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& e : n) a.push_back(yaml_node(e));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = yaml_node(kv.second);
      return o;
    }
    case YAML::NodeType::Scalar: break;
  }
  const std::string s = n.Scalar();
  if (n.Tag() == "!") return s;
  if (s == "~" || s == "null" || s == "Null" || s == "NULL") return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return s;
}

}  // namespace

json yaml_to_json(const std::string& text) {
  try {
    return yaml_node(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("YAML: ") + e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  const std::string text = io::read_text_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) j = yaml_to_json(text);
  const fs::path base = path.parent_path();
  auto resolve = [&](const char* key) {
    if (j.contains(key) && j[key].is_string()) {
      const fs::path p(j[key].get<std::string>());
      if (!p.empty() && p.is_relative()) j[key] = (base / p).lexically_normal().string();
    }
  };
  resolve("dataset_root");
  resolve("splits_path");
  resolve("suite_path");
  RunConfig c = run_config_from_json(j);
  if (!c.suite_path.empty()) {
    const std::string s = io::read_text_file(c.suite_path);
    json sj = json::parse(s, nullptr, false);
    if (sj.is_discarded()) sj = yaml_to_json(s);
    c.suite = perturb::suite_from_json(sj);
  }
  return c;
}

std::vector<ArmConfig> evaluation_arms(const RunConfig& c) {
  return {{"undefended", defense::DefenseConfig::undefended(), false}, {"defended", c.defense, c.voting_enabled}};
}

std::vector<ArmConfig> ablation_arms(const RunConfig& c) {
  std::vector<ArmConfig> rows;
  defense::DefenseConfig d = defense::DefenseConfig::undefended();
  d.bit_depth = c.defense.bit_depth;
  d.median_kernel = c.defense.median_kernel;
  d.cross_fov_iou_min = c.defense.cross_fov_iou_min;
  d.gate_mode = defense::GateMode::PerFrame;
  rows.push_back({"baseline", d, false});
  d.mid_squeeze = c.defense.mid_squeeze;
  d.long_squeeze = c.defense.long_squeeze;
  rows.push_back({"+squeeze", d, false});
  d.temperature = c.defense.temperature;
  rows.push_back({"+distill-temp", d, false});
  d.gating = true;
  rows.push_back({"+gate", d, false});
  d.gate_mode = defense::GateMode::PerObject;
  rows.push_back({"+crossfov", d, false});
  rows.push_back({"+voting", d, true});
  return rows;
}

namespace {

constexpr int kCurveBefore = 15;
constexpr int kCurveAfter = 45;

/// Per-sequence, per-arm accumulation.
struct ArmSeq {
  std::vector<metrics::FrameOutcome> clean, pert;
  std::vector<metrics::ImageRecord> images_clean, images_pert;
  metrics::ConfusionTally tally;
  std::vector<double> stability, flips;
  std::vector<std::int64_t> delays;
  long censored = 0;
  std::vector<long> curve_ok, curve_n;
  std::map<std::string, std::pair<long, long>> by_kind;
  long unscored = 0;
  std::vector<std::string> audit;
};

struct SeqResult {
  std::string seq_id;
  OddTag odd = OddTag::Urban;
  double fps = 30.0;
  std::int64_t frames = 0;
  std::vector<ArmSeq> arms;
};

class SequenceSource {
 public:
  explicit SequenceSource(const RunConfig& c) : config_(c) {
    if (c.dataset_root.empty()) {
      for (int i = 0; i < c.synthetic.sequences; ++i) ids_.push_back(fmt::format("syn_{:04d}", i));
      return;
    }
    const auto manifests = io::apply_content_filter(io::scan_dataset(c.dataset_root), {c.min_duration_s});
    io::SplitSpec split;
    if (!c.splits_path.empty()) {
      split = io::split_from_json(json::parse(io::read_text_file(c.splits_path)));
    } else {
      split = io::make_splits(manifests, {0.6, 0.2, 0.2}, c.seed);
    }
    if (c.split == "train") ids_ = split.train;
    else if (c.split == "val") ids_ = split.val;
    else if (c.split == "test") ids_ = split.test;
    else if (c.split == "all") {
      for (const auto& m : manifests) ids_.push_back(m.seq_id);
    } else {
      throw ConfigError(fmt::format("unknown split '{}'", c.split));
    }
    if (ids_.empty()) throw ConfigError(fmt::format("split '{}' holds no annotated sequences", c.split));
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::string& id(std::size_t i) const { return ids_[i]; }

  io::LoadedSequence load(std::size_t i) const {
    if (config_.dataset_root.empty()) {
      synth::SceneOptions o;
      o.width = config_.synthetic.width;
      o.height = config_.synthetic.height;
      o.frames = config_.synthetic.frames;
      o.fps = config_.synthetic.fps;
      o.objects = config_.synthetic.objects;
      o.odd = kAllOdds[i % 4];
      o.seed = mix_seed({config_.seed, i});
      return synth::generate_sequence(ids_[i], o);
    }
    return io::load_sequence(config_.dataset_root, ids_[i]);
  }

 private:
  const RunConfig& config_;
  std::vector<std::string> ids_;
};

struct PerturbedPair {
  FramePair frames;
  double occluded_mid = 0.0;
  double occluded_long = 0.0;
  bool active = false;
  std::vector<std::string> kinds;
};

json num_or_null(std::optional<double> v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

void run_arm(const ArmConfig& arm, const io::LoadedSequence& seq, const std::vector<PerturbedPair>& pert,
             const detect::RegisteredDetector& det, const perturb::PerturbationSchedule& sched,
             const RunConfig& cfg, ArmSeq& out) {
  const int k = det.vocabulary().size();
  out.tally = metrics::ConfusionTally(k);
  const auto n = seq.pairs.size();
  for (int pass = 0; pass < 2; ++pass) {
    const bool perturbed = pass == 1;
    std::optional<temporal::TemporalVoter> voter;
    if (arm.voting) voter.emplace(cfg.voting);
    auto& outcomes = perturbed ? out.pert : out.clean;
    auto& images = perturbed ? out.images_pert : out.images_clean;
    defense::DefendedFrame df;
    for (std::size_t f = 0; f < n; ++f) {
      const auto& ap = seq.pairs[f];
      const FramePair& frames = perturbed ? pert[f].frames : ap.frames;
      defense::defend_frame(frames, det, arm.defense, seq.fov, df);
      std::vector<Detection> final_dets;
      if (df.scored) {
        final_dets.reserve(df.selected.size());
        for (const auto& s : df.selected) final_dets.push_back(s.detection);
      } else {
        ++out.unscored;
      }
      if (voter) {
        temporal::FrameObservation obs;
        obs.frame_index = frames.mid.frame_index;
        obs.scored = df.scored;
        if (df.scored) {
          std::optional<double> qm, ql;
          for (const auto& s : df.selected) {
            auto& q = s.source == StreamId::Mid ? qm : ql;
            if (!q) {
              const auto& img = s.source == StreamId::Mid ? df.squeezed_mid : df.squeezed_long;
              const double occ = perturbed ? (s.source == StreamId::Mid ? pert[f].occluded_mid : pert[f].occluded_long) : 0.0;
              q = temporal::quality_weight(img, occ).weight;
            }
            obs.weights.push_back(*q);
          }
          obs.detections = final_dets;
        }
        final_dets = voter->push(obs).detections;
      }
      metrics::FrameOutcome fo;
      fo.frame_index = frames.mid.frame_index;
      fo.active = perturbed && pert[f].active;
      fo.scored = df.scored;
      fo.objects = metrics::classify_objects(final_dets, ap.mid_objects, cfg.metrics.match_iou);
      if (!perturbed) fo.active = pert[f].active;
      outcomes.push_back(std::move(fo));
      if (perturbed && df.scored) metrics::tally_frame(out.tally, final_dets, ap.mid_objects, cfg.metrics.match_iou);
      if (df.scored) images.push_back({std::move(final_dets), ap.mid_objects});

      json a{{"seq", seq.manifest.seq_id},
             {"arm", arm.name},
             {"pass", perturbed ? "perturbed" : "clean"},
             {"frame", frames.mid.frame_index},
             {"active", pert[f].active},
             {"scored", df.scored},
             {"gate", defense::to_json(df.gate)},
             {"detections", df.selected.size()}};
      if (!df.failures.empty()) a["failures"] = df.failures;
      out.audit.push_back(a.dump());
    }
  }

  // Per-kind attribution over active frames.
  for (std::size_t f = 0; f < n; ++f) {
    const auto& c = out.clean[f];
    const auto& p = out.pert[f];
    if (!pert[f].active || !c.scored || !p.scored) continue;
    long hit = 0;
    for (std::size_t j = 0; j < p.objects.size(); ++j)
      hit += c.objects[j].outcome == metrics::Outcome::Correct && p.objects[j].outcome != metrics::Outcome::Correct;
    for (const auto& kind : pert[f].kinds) {
      out.by_kind[kind].first += hit;
      out.by_kind[kind].second += static_cast<long>(p.objects.size());
    }
  }

  // Object timelines over the perturbed pass.
  const std::size_t objects = seq.pairs.empty() ? 0 : seq.pairs.front().mid_objects.size();
  std::vector<metrics::ObjectTimeline> timelines(objects);
  for (std::size_t o = 0; o < objects; ++o) {
    timelines[o].true_class = seq.pairs.front().mid_objects[o].class_id;
    std::vector<double> conf;
    std::vector<int> cls;
    for (std::size_t f = 0; f < n; ++f) {
      const auto& objs = out.pert[f].objects;
      std::optional<int> v;
      if (o < objs.size() && objs[o].outcome != metrics::Outcome::Missed) {
        v = objs[o].predicted;
        conf.push_back(objs[o].confidence);
        cls.push_back(*objs[o].predicted);
      }
      timelines[o].voted.push_back(v);
    }
    if (!conf.empty()) {
      out.stability.push_back(metrics::stability(conf));
      out.flips.push_back(metrics::flip_rate(cls));
    }
  }
  std::vector<std::int64_t> offsets;
  for (const auto& e : sched.entries) offsets.push_back(e.offset_frame);
  const auto mt = metrics::compute_mtcd(timelines, offsets, seq.manifest.fps);
  out.delays = mt.delays;
  out.censored = mt.censored;
  out.curve_ok.assign(kCurveBefore + kCurveAfter + 1, 0);
  out.curve_n.assign(kCurveBefore + kCurveAfter + 1, 0);
  for (auto off : offsets)
    for (const auto& tl : timelines)
      for (int rel = -kCurveBefore; rel <= kCurveAfter; ++rel) {
        const std::int64_t f = off + rel;
        if (f < 0 || f >= static_cast<std::int64_t>(n)) continue;
        const auto& v = tl.voted[static_cast<std::size_t>(f)];
        out.curve_n[static_cast<std::size_t>(rel + kCurveBefore)]++;
        out.curve_ok[static_cast<std::size_t>(rel + kCurveBefore)] += v && *v == tl.true_class;
      }
}

SeqResult process_sequence(std::size_t index, const SequenceSource& source, const RunConfig& cfg,
                           const std::vector<ArmConfig>& arms,
                           const std::shared_ptr<detect::RegisteredDetector>& shared_detector) {
  const io::LoadedSequence seq = source.load(index);
  SeqResult r;
  r.seq_id = seq.manifest.seq_id;
  r.odd = seq.manifest.odd;
  r.fps = seq.manifest.fps;
  r.frames = static_cast<std::int64_t>(seq.pairs.size());
  const auto n = static_cast<std::int64_t>(seq.pairs.size());

  std::vector<perturb::PerturbationSpec> specs;
  if (!cfg.suite.empty()) {
    if (cfg.suite_mode == SuiteMode::Rotate) specs.push_back(cfg.suite[index % cfg.suite.size()]);
    else specs = cfg.suite;
  }
  for (auto& s : specs) s.rng_seed = mix_seed({s.rng_seed, cfg.seed, hash_string(r.seq_id)});
  perturb::PerturbationSchedule sched;
  sched.frame_count = n;
  sched.fps = seq.manifest.fps;
  if (!specs.empty() && n > 0)
    sched = perturb::schedule_sequence(n, specs, seq.manifest.fps, mix_seed({cfg.seed, hash_string(r.seq_id), 7}));

  std::vector<PerturbedPair> pert(seq.pairs.size());
  for (std::size_t f = 0; f < seq.pairs.size(); ++f) {
    const auto& ap = seq.pairs[f];
    auto& pp = pert[f];
    const auto fi = ap.frames.mid.frame_index;
    pp.active = sched.active(fi);
    if (!pp.active) {
      pp.frames = ap.frames;
      continue;
    }
    auto m = perturb::apply_scheduled(ap.frames.mid, sched, ap.mid_objects);
    auto l = perturb::apply_scheduled(ap.frames.lng, sched, ap.long_objects);
    std::set<std::string> kinds;
    for (const auto& e : m.effects) kinds.insert(std::string(perturb::to_string(e.kind)));
    for (const auto& e : l.effects) kinds.insert(std::string(perturb::to_string(e.kind)));
    pp.kinds.assign(kinds.begin(), kinds.end());
    pp.occluded_mid = m.occluded_fraction;
    pp.occluded_long = l.occluded_fraction;
    pp.frames.mid = std::move(m.frame);
    pp.frames.lng = std::move(l.frame);
  }

  std::shared_ptr<detect::RegisteredDetector> det = shared_detector;
  if (!det) {
    auto truth = std::make_shared<detect::TruthTable>();
    for (const auto& ap : seq.pairs) {
      truth->add(r.seq_id, StreamId::Mid, ap.frames.mid.frame_index,
                 {ap.mid_objects, std::make_shared<RgbImage>(ap.frames.mid.image)});
      truth->add(r.seq_id, StreamId::Long, ap.frames.lng.frame_index,
                 {ap.long_objects, std::make_shared<RgbImage>(ap.frames.lng.image)});
    }
    auto oracle = std::make_shared<detect::SyntheticOracle>(cfg.detector.oracle, ClassVocabulary::standard(), truth);
    det = std::make_shared<detect::RegisteredDetector>(detect::register_detector(oracle, ClassVocabulary::standard()));
  }
  r.arms.resize(arms.size());
  for (std::size_t a = 0; a < arms.size(); ++a)
    run_arm(arms[a], seq, pert, *det, sched, cfg, r.arms[a]);
  return r;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

json interval_json(const std::optional<metrics::Interval>& i) {
  return i ? json::array({i->lo, i->hi}) : json(nullptr);
}

struct ArmSummary {
  json metrics;
  json ci;
  std::vector<double> seq_asr;
  std::vector<bool> seq_has_asr;
  std::optional<double> asr;
};

ArmSummary summarize(const std::vector<const SeqResult*>& seqs, std::size_t arm, const metrics::SeverityMatrix& sev,
                     const RunConfig& cfg, const std::string& arm_name, bool with_ci) {
  const auto vocab = ClassVocabulary::standard();
  const int k = vocab.size();
  std::vector<metrics::FrameOutcome> clean, pert;
  std::vector<metrics::ImageRecord> img_clean, img_pert;
  metrics::ConfusionTally tally(k);
  std::vector<double> stab, flips, seq_stab, seq_flip, seq_mtcd, seq_risk, seq_map50;
  std::vector<std::int64_t> delays;
  long censored = 0, unscored = 0;
  std::vector<double> num, den, num_flip, num_rw;
  ArmSummary s;
  for (const auto* r : seqs) {
    const auto& a = r->arms[arm];
    clean.insert(clean.end(), a.clean.begin(), a.clean.end());
    pert.insert(pert.end(), a.pert.begin(), a.pert.end());
    img_clean.insert(img_clean.end(), a.images_clean.begin(), a.images_clean.end());
    img_pert.insert(img_pert.end(), a.images_pert.begin(), a.images_pert.end());
    tally += a.tally;
    stab.insert(stab.end(), a.stability.begin(), a.stability.end());
    flips.insert(flips.end(), a.flips.begin(), a.flips.end());
    delays.insert(delays.end(), a.delays.begin(), a.delays.end());
    censored += a.censored;
    unscored += a.unscored;
    if (!a.stability.empty()) {
      seq_stab.push_back(mean(a.stability));
      seq_flip.push_back(mean(a.flips));
    }
    if (!a.delays.empty())
      seq_mtcd.push_back(static_cast<double>(std::accumulate(a.delays.begin(), a.delays.end(), std::int64_t{0})) /
                         static_cast<double>(a.delays.size()));
    if (a.tally.total() > 0) seq_risk.push_back(metrics::compute_risk(a.tally, sev, std::nullopt).risk_cost);
    if (auto m = metrics::compute_map(a.images_pert, k, std::vector<double>{0.5}).map50) seq_map50.push_back(*m);
    try {
      const auto asr = metrics::compute_asr(a.clean, a.pert);
      num.push_back(static_cast<double>(asr.attacked));
      num_flip.push_back(static_cast<double>(asr.flips));
      num_rw.push_back(metrics::rw_asr(asr, sev) * static_cast<double>(asr.total_objects) / 100.0);
      den.push_back(static_cast<double>(asr.total_objects));
      s.seq_asr.push_back(asr.asr);
      s.seq_has_asr.push_back(true);
    } catch (const DomainError&) {
      s.seq_asr.push_back(0.0);
      s.seq_has_asr.push_back(false);
    }
  }
  const auto map_clean = metrics::compute_map(img_clean, k);
  const auto map_pert = metrics::compute_map(img_pert, k);
  json m;
  m["map50_clean"] = num_or_null(map_clean.map50);
  m["map_clean"] = num_or_null(map_clean.map);
  m["map50"] = num_or_null(map_pert.map50);
  m["map"] = num_or_null(map_pert.map);
  json per_class = json::object();
  for (const auto& [c, v] : map_pert.ap50_per_class) per_class[vocab.name(c)] = v;
  m["ap50_per_class"] = per_class;
  std::optional<metrics::AsrResult> asr;
  try {
    asr = metrics::compute_asr(clean, pert);
  } catch (const DomainError&) {
  }
  m["asr_undefined"] = !asr.has_value();
  m["asr"] = asr ? json(asr->asr) : json(nullptr);
  m["asr_flip_only"] = asr ? json(asr->asr_flip_only) : json(nullptr);
  m["asr_frames"] = asr ? json(asr->asr_frames) : json(nullptr);
  m["rw_asr"] = asr ? json(metrics::rw_asr(*asr, sev)) : json(nullptr);
  m["objects"] = asr ? asr->total_objects : 0;
  m["attacked"] = asr ? asr->attacked : 0;
  m["flips"] = asr ? asr->flips : 0;
  m["misses"] = asr ? asr->misses : 0;
  m["active_frames"] = asr ? asr->active_frames : 0;
  if (asr) s.asr = asr->asr;
  const auto risk = metrics::compute_risk(tally, sev, map_pert.map50);
  m["risk_cost"] = risk.risk_cost;
  m["rw_map"] = num_or_null(risk.rw_map);
  m["cfr"] = risk.cfr;
  const double mt = delays.empty() ? 0.0
                                   : static_cast<double>(std::accumulate(delays.begin(), delays.end(), std::int64_t{0})) /
                                         static_cast<double>(delays.size());
  const double fps = seqs.empty() ? 30.0 : seqs.front()->fps;
  m["mtcd_frames"] = delays.empty() ? json(nullptr) : json(mt);
  m["mtcd_seconds"] = delays.empty() ? json(nullptr) : json(mt / fps);
  m["mtcd_events"] = delays.size();
  m["mtcd_censored"] = censored;
  m["stability"] = stab.empty() ? json(nullptr) : json(mean(stab));
  m["flip_rate"] = flips.empty() ? json(nullptr) : json(mean(flips));
  m["unscored_frames"] = unscored;
  s.metrics = m;

  if (with_ci) {
    const auto seed = [&](std::string_view metric) { return mix_seed({cfg.seed, hash_string(arm_name), hash_string(metric)}); };
    const int nb = cfg.metrics.bootstrap_n;
    const double lvl = cfg.metrics.ci_level;
    auto ratio = [&](const std::vector<double>& nu, std::string_view name) -> std::optional<metrics::Interval> {
      if (den.size() < 2) return std::nullopt;
      auto i = metrics::bootstrap_ratio_ci(nu, den, seed(name), nb, lvl);
      return metrics::Interval{100.0 * i.lo, 100.0 * i.hi};
    };
    auto means = [&](const std::vector<double>& v, std::string_view name) -> std::optional<metrics::Interval> {
      if (v.size() < 2) return std::nullopt;
      return metrics::bootstrap_ci(v, seed(name), nb, lvl);
    };
    s.ci = {{"asr", interval_json(ratio(num, "asr"))},
            {"asr_flip_only", interval_json(ratio(num_flip, "asr_flip_only"))},
            {"rw_asr", interval_json(ratio(num_rw, "rw_asr"))},
            {"map50_seq_mean", interval_json(means(seq_map50, "map50"))},
            {"risk_cost_seq_mean", interval_json(means(seq_risk, "risk_cost"))},
            {"mtcd_frames_seq_mean", interval_json(means(seq_mtcd, "mtcd"))},
            {"stability_seq_mean", interval_json(means(seq_stab, "stability"))},
            {"flip_rate_seq_mean", interval_json(means(seq_flip, "flip_rate"))}};
  }
  return s;
}

/// Stands in for a detector that could not be reached; every frame is UNSCORED.
class UnreachableDetector final : public detect::Detector {
 public:
  explicit UnreachableDetector(std::string why) : why_(std::move(why)) {}
  detect::Capabilities capabilities() override {
    detect::Capabilities c;
    c.name = "unreachable";
    c.vocabulary = ClassVocabulary::standard();
    c.concurrent = false;
    return c;
  }
  std::vector<Detection> infer(const ImageFrame&) override {
    throw TransportError(TransportError::Kind::Connection, why_);
  }

 private:
  std::string why_;
};

std::string fmt_num(const json& v) { return v.is_number() ? fmt::format("{:.6g}", v.get<double>()) : std::string(); }

}  // namespace

EvalOutput evaluate(const RunConfig& cfg, const std::vector<ArmConfig>& arms) {
  if (arms.empty()) throw ConfigError("no evaluation arms");
  for (const auto& a : arms) defense::validate(a.defense);
  temporal::validate(cfg.voting);
  const SequenceSource source(cfg);
  const auto vocab = ClassVocabulary::standard();
  metrics::SeverityMatrix sev = metrics::default_mutcd(vocab);
  if (!cfg.metrics.severity_path.empty())
    sev = metrics::severity_from_json(json::parse(io::read_text_file(cfg.metrics.severity_path)), vocab);

  std::shared_ptr<detect::RegisteredDetector> shared;
  std::string detector_failure;
  if (cfg.detector.kind == DetectorSpec::Kind::Wire) {
    wire::WireOptions wo;
    wo.timeout_ms = cfg.detector.timeout_ms;
    try {
      auto backend = wire::WireDetector::connect(wire::Endpoint::parse(cfg.detector.endpoint), wo);
      shared = std::make_shared<detect::RegisteredDetector>(detect::register_detector(backend, vocab));
    } catch (const TransportError& e) {
      detector_failure = e.what();
      auto stub = std::make_shared<UnreachableDetector>(e.what());
      shared = std::make_shared<detect::RegisteredDetector>(stub, stub->capabilities());
    }
  }

  std::vector<SeqResult> results(source.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= results.size()) return;
      try {
        results[i] = process_sequence(i, source, cfg, arms, shared);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = results.size();
        return;
      }
    }
  };
  unsigned workers = cfg.workers > 0 ? static_cast<unsigned>(cfg.workers) : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, results.size())));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalOutput out;
  std::vector<const SeqResult*> all;
  std::int64_t total_frames = 0;
  for (const auto& r : results) {
    all.push_back(&r);
    total_frames += r.frames;
  }
  json arms_json = json::array();
  std::vector<ArmSummary> summaries;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    ArmSummary s = summarize(all, a, sev, cfg, arms[a].name, true);
    json per_odd = json::object();
    for (OddTag odd : kAllOdds) {
      std::vector<const SeqResult*> group;
      for (const auto* r : all)
        if (r->odd == odd) group.push_back(r);
      if (group.empty()) continue;
      const auto g = summarize(group, a, sev, cfg, arms[a].name, false);
      per_odd[std::string(to_string(odd))] = {{"sequences", group.size()},
                                              {"asr", g.metrics["asr"]},
                                              {"map50", g.metrics["map50"]},
                                              {"rw_map", g.metrics["rw_map"]},
                                              {"stability", g.metrics["stability"]}};
    }
    for (const auto* r : all) out.unscored_frames += r->arms[a].unscored;
    arms_json.push_back({{"name", arms[a].name},
                         {"defense", defense::to_json(arms[a].defense)},
                         {"voting", arms[a].voting},
                         {"metrics", s.metrics},
                         {"ci", s.ci},
                         {"per_odd", per_odd}});
    summaries.push_back(std::move(s));
  }

  json comparison = json::object();
  if (arms.size() >= 2) {
    const auto& first = summaries.front();
    const auto& last = summaries.back();
    comparison["reference_arm"] = arms.front().name;
    comparison["final_arm"] = arms.back().name;
    comparison["asr_ratio"] = first.asr && last.asr && *first.asr > 0 ? json(*last.asr / *first.asr) : json(nullptr);
    std::vector<double> a, b;
    for (std::size_t i = 0; i < first.seq_asr.size(); ++i)
      if (first.seq_has_asr[i] && last.seq_has_asr[i]) {
        a.push_back(first.seq_asr[i]);
        b.push_back(last.seq_asr[i]);
      }
    if (a.size() >= 2) {
      const auto t = metrics::paired_ttest(a, b, cfg.metrics.alpha);
      comparison["paired_ttest"] = {{"n", t.n},
                                    {"t", std::isfinite(t.t) ? json(t.t) : json(t.t > 0 ? "inf" : "-inf")},
                                    {"p", t.p},
                                    {"significant", t.significant},
                                    {"exact", t.exact},
                                    {"alpha", cfg.metrics.alpha}};
    }
    json monotone = true;
    for (std::size_t i = 1; i < summaries.size(); ++i)
      if (summaries[i].asr && summaries[i - 1].asr && *summaries[i].asr > *summaries[i - 1].asr) monotone = false;
    comparison["asr_non_increasing"] = monotone;
  }

  json seq_list = json::array();
  for (const auto* r : all) seq_list.push_back({{"seq_id", r->seq_id}, {"odd", to_string(r->odd)}, {"frames", r->frames}});
  out.report = {{"schema", "dfov.report/1"},
                {"seed", cfg.seed},
                {"detector", cfg.detector.kind == DetectorSpec::Kind::Synthetic ? "synthetic" : cfg.detector.endpoint},
                {"sequences", seq_list},
                {"frames", total_frames},
                {"suite_mode", to_string(cfg.suite_mode)},
                {"suite_size", cfg.suite.size()},
                {"severity_provenance", sev.provenance},
                {"asr_denominator", "objects in perturbation-active frames"},
                {"asr_counts_misses", true},
                {"arms", arms_json},
                {"comparison", comparison},
                {"unscored_frames", out.unscored_frames},
                {"partial", out.unscored_frames > 0}};
  if (!detector_failure.empty()) out.report["detector_failure"] = detector_failure;

  std::string csv =
      "arm,map50_clean,map50,map,asr,asr_flip_only,asr_frames,rw_asr,risk_cost,rw_map,cfr,mtcd_frames,mtcd_seconds,"
      "stability,flip_rate,asr_ci_lo,asr_ci_hi\n";
  for (const auto& a : arms_json) {
    const auto& m = a["metrics"];
    const auto& ci = a["ci"]["asr"];
    csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", a["name"].get<std::string>(),
                       fmt_num(m["map50_clean"]), fmt_num(m["map50"]), fmt_num(m["map"]), fmt_num(m["asr"]),
                       fmt_num(m["asr_flip_only"]), fmt_num(m["asr_frames"]), fmt_num(m["rw_asr"]), fmt_num(m["risk_cost"]),
                       fmt_num(m["rw_map"]), fmt_num(m["cfr"]), fmt_num(m["mtcd_frames"]), fmt_num(m["mtcd_seconds"]),
                       fmt_num(m["stability"]), fmt_num(m["flip_rate"]), ci.is_array() ? fmt_num(ci[0]) : "",
                       ci.is_array() ? fmt_num(ci[1]) : "");
  }
  out.report_csv = csv;

  out.degradation_csv = "arm,perturbation,objects,attacked,asr\n";
  for (std::size_t a = 0; a < arms.size(); ++a) {
    std::map<std::string, std::pair<long, long>> kinds;
    for (const auto* r : all)
      for (const auto& [kname, v] : r->arms[a].by_kind) {
        kinds[kname].first += v.first;
        kinds[kname].second += v.second;
      }
    for (const auto& [kname, v] : kinds)
      out.degradation_csv += fmt::format("{},{},{},{},{:.6g}\n", arms[a].name, kname, v.second, v.first,
                                         v.second ? 100.0 * v.first / v.second : 0.0);
  }
  out.recovery_csv = "arm,frames_from_offset,objects,correct_fraction\n";
  for (std::size_t a = 0; a < arms.size(); ++a)
    for (int rel = -kCurveBefore; rel <= kCurveAfter; ++rel) {
      long ok = 0, tot = 0;
      for (const auto* r : all) {
        if (r->arms[a].curve_n.empty()) continue;
        ok += r->arms[a].curve_ok[static_cast<std::size_t>(rel + kCurveBefore)];
        tot += r->arms[a].curve_n[static_cast<std::size_t>(rel + kCurveBefore)];
      }
      if (tot > 0) out.recovery_csv += fmt::format("{},{},{},{:.6g}\n", arms[a].name, rel, tot, double(ok) / tot);
    }
  out.ablation_csv = "row,arm,asr,delta_vs_previous\n";
  for (std::size_t a = 0; a < summaries.size(); ++a) {
    const auto& s = summaries[a];
    const std::string delta = a > 0 && s.asr && summaries[a - 1].asr ? fmt::format("{:.6g}", *s.asr - *summaries[a - 1].asr) : "";
    out.ablation_csv += fmt::format("{},{},{},{}\n", a, arms[a].name, s.asr ? fmt::format("{:.6g}", *s.asr) : "", delta);
  }
  for (auto& r : results)
    for (auto& a : r.arms)
      for (auto& line : a.audit) out.audit.push_back(std::move(line));
  return out;
}

void write_outputs(const EvalOutput& out, const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_text_file(dir / "run_config.json", to_json(config).dump(2) + "\n");
  io::write_text_file(dir / "report.json", out.report.dump(2) + "\n");
  io::write_text_file(dir / "report.csv", out.report_csv);
  std::string audit;
  for (const auto& l : out.audit) audit += l + "\n";
  io::write_text_file(dir / "audit.jsonl", audit);
  io::write_text_file(dir / "degradation_by_perturbation.csv", out.degradation_csv);
  io::write_text_file(dir / "recovery_curve.csv", out.recovery_csv);
  io::write_text_file(dir / "ablation.csv", out.ablation_csv);
}

std::string format_report(const json& report) {
  std::string s = fmt::format("{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "arm", "mAP50", "ASR%", "flipASR%",
                              "RW-ASR%", "RW-mAP", "MTCD", "stab");
  for (const auto& a : report.at("arms")) {
    const auto& m = a.at("metrics");
    auto f = [&](const char* k) { return m.contains(k) && m[k].is_number() ? fmt::format("{:.3f}", m[k].get<double>()) : "-"; };
    s += fmt::format("{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", a.at("name").get<std::string>(), f("map50"),
                     f("asr"), f("asr_flip_only"), f("rw_asr"), f("rw_map"), f("mtcd_frames"), f("stability"));
  }
  if (report.contains("comparison") && report["comparison"].contains("asr_ratio") &&
      report["comparison"]["asr_ratio"].is_number())
    s += fmt::format("ASR ratio {} / {}: {:.3f}\n", report["comparison"]["final_arm"].get<std::string>(),
                     report["comparison"]["reference_arm"].get<std::string>(),
                     report["comparison"]["asr_ratio"].get<double>());
  return s;
}

}  // namespace dfov::pipeline
