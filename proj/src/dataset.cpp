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

#include "dfov/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <png.h>

#include "dfov/errors.hpp"
#include "dfov/png_io.hpp"
#include "dfov/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dfov::io {

std::string_view to_string(Source s) noexcept {
  switch (s) {
    case Source::Aimotive: return "aimotive";
    case Source::Udacity: return "udacity";
    case Source::Waymo: return "waymo";
    case Source::SelfRecorded: return "self_recorded";
  }
  return "aimotive";
}

Source parse_source(std::string_view s) {
  for (auto v : {Source::Aimotive, Source::Udacity, Source::Waymo, Source::SelfRecorded})
    if (to_string(v) == s) return v;
  throw ValidationError("unknown source '" + std::string(s) + "'");
}

std::string_view to_string(LoadWarning::Kind k) noexcept {
  switch (k) {
    case LoadWarning::Kind::MissingAnnotation: return "missing_annotation";
    case LoadWarning::Kind::BoxClamped: return "box_clamped";
    case LoadWarning::Kind::BoxDropped: return "box_dropped";
    case LoadWarning::Kind::UnknownCategory: return "unknown_category";
    case LoadWarning::Kind::UnpairedFrame: return "unpaired_frame";
  }
  return "unknown";
}

std::optional<fs::path> find_sequence_dir(const fs::path& root, std::string_view seq_id) {
  for (auto odd : kAllOdds) {
    const auto dir = root / std::string(to_string(odd)) / std::string(seq_id);
    if (fs::is_directory(dir)) return dir;
  }
  return std::nullopt;
}

namespace {

std::string frame_name(std::int64_t index, std::string_view ext) {
  return fmt::format("frame_{:06d}.{}", index, ext);
}

json parse_json_file(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError&) {
    throw LoadError(path.string(), "cannot read file");
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw LoadError(path.string(), std::string("malformed JSON: ") + e.what());
  }
}

struct StreamFiles {
  std::vector<std::int64_t> indices;
  std::vector<fs::path> paths;
};

StreamFiles list_frames(const fs::path& dir) {
  static const std::regex pattern(R"(frame_(\d{6})\.png)");
  std::vector<std::pair<std::int64_t, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern))
      found.emplace_back(std::stoll(m[1].str()), entry.path());
  }
  std::sort(found.begin(), found.end());
  StreamFiles out;
  for (auto& [i, p] : found) {
    out.indices.push_back(i);
    out.paths.push_back(std::move(p));
  }
  return out;
}

std::pair<int, int> png_dimensions(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw LoadError(path.string(), "unreadable image");
  const std::pair<int, int> dims{static_cast<int>(png.width), static_cast<int>(png.height)};
  png_image_free(&png);
  return dims;
}

std::vector<std::int64_t> stream_timestamps(const json& meta, StreamId s, const StreamFiles& files,
                                            double fps, std::int64_t start_ns,
                                            const fs::path& meta_path) {
  const std::string key = s == StreamId::Mid ? "mid" : "long";
  if (meta.contains("timestamps_ns") && meta["timestamps_ns"].contains(key)) {
    auto ts = meta["timestamps_ns"][key].get<std::vector<std::int64_t>>();
    if (ts.size() != files.indices.size())
      throw LoadError(meta_path.string(), "timestamps_ns." + key + " length does not match frames");
    return ts;
  }
  std::vector<std::int64_t> ts;
  ts.reserve(files.indices.size());
  for (auto i : files.indices)
    ts.push_back(start_ns + static_cast<std::int64_t>(std::llround(static_cast<double>(i) * 1e9 / fps)));
  return ts;
}

TagSet read_tags(const json& meta, std::string_view stream_key, std::int64_t index) {
  if (!meta.contains("degradation_tags")) return TagSet{DegradationTag::Clean};
  const auto& per_stream = meta["degradation_tags"];
  const std::string key(stream_key);
  if (!per_stream.contains(key)) return TagSet{DegradationTag::Clean};
  const auto idx = std::to_string(index);
  if (!per_stream[key].contains(idx)) return TagSet{DegradationTag::Clean};
  TagSet tags;
  for (const auto& t : per_stream[key][idx]) tags.insert(parse_tag(t.get<std::string>()));
  return tags;
}

Box box_from_json(const json& j, const fs::path& path) {
  if (!j.is_array() || j.size() != 4) throw LoadError(path.string(), "bbox must be [x1,y1,x2,y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

/// Clamps into the frame, logging the event. Returns nullopt when nothing is left.
std::optional<Box> clamp_logged(const Box& b, int w, int h, const fs::path& path,
                                std::vector<LoadWarning>& warnings) {
  if (b.inside(w, h) && b.valid()) return b;
  const Box c = clamp_box(b, w, h);
  if (!c.valid()) {
    warnings.push_back({LoadWarning::Kind::BoxDropped, path.string(),
                        fmt::format("box [{}, {}, {}, {}] outside {}x{}", b.x_min, b.y_min,
                                    b.x_max, b.y_max, w, h)});
    return std::nullopt;
  }
  warnings.push_back({LoadWarning::Kind::BoxClamped, path.string(),
                      fmt::format("box [{}, {}, {}, {}] clamped to {}x{}", b.x_min, b.y_min,
                                  b.x_max, b.y_max, w, h)});
  return c;
}

void read_annotations(const fs::path& path, const ClassVocabulary& vocab, const FovMap& fov,
                      std::pair<int, int> mid_dims, std::pair<int, int> long_dims,
                      AnnotatedPair& pair, std::vector<LoadWarning>& warnings) {
  const json doc = parse_json_file(path);
  const json* list = &doc;
  if (doc.is_object() && doc.contains("objects")) list = &doc["objects"];
  if (!list->is_array()) throw LoadError(path.string(), "annotation must be a list of objects");
  for (const auto& o : *list) {
    if (!o.is_object() || !o.contains("bbox") || !o.contains("category"))
      throw LoadError(path.string(), "annotation object needs bbox and category");
    GroundTruthObject g;
    try {
      g.bbox = box_from_json(o["bbox"], path);
      g.category = o["category"].get<std::string>();
      g.occlusion_score = o.value("occlusion", 0.0);
      if (o.contains("signal_state") && !o["signal_state"].is_null())
        g.signal_state = parse_signal_state(o["signal_state"].get<std::string>());
      if (o.contains("ocr_text") && !o["ocr_text"].is_null())
        g.ocr_text = o["ocr_text"].get<std::string>();
      if (o.contains("id") && !o["id"].is_null()) g.object_id = o["id"].get<std::int64_t>();
    } catch (const json::exception& e) {
      throw LoadError(path.string(), std::string("bad annotation field: ") + e.what());
    } catch (const ValidationError& e) {
      throw LoadError(path.string(), e.what());
    }
    if (g.occlusion_score < 0.0 || g.occlusion_score > 1.0)
      throw LoadError(path.string(), "occlusion must lie in [0, 1]");
    const auto cls = vocab.resolve(g.category, g.signal_state);
    if (!cls) {
      warnings.push_back({LoadWarning::Kind::UnknownCategory, path.string(), g.category});
      continue;
    }
    g.class_id = *cls;

    std::optional<Box> long_box;
    if (o.contains("bbox_long")) {
      if (!o["bbox_long"].is_null()) long_box = box_from_json(o["bbox_long"], path);
    } else {
      long_box = fov.to_long(g.bbox);
    }
    const Box mid_raw = g.bbox;
    if (auto m = clamp_logged(mid_raw, mid_dims.first, mid_dims.second, path, warnings)) {
      g.bbox = *m;
      pair.mid_objects.push_back(g);
    }
    if (long_box) {
      // A mapped box that falls outside the narrower view is simply not visible there.
      const bool explicit_long = o.contains("bbox_long");
      std::optional<Box> l;
      if (explicit_long) {
        l = clamp_logged(*long_box, long_dims.first, long_dims.second, path, warnings);
      } else {
        const Box c = clamp_box(*long_box, long_dims.first, long_dims.second);
        if (c.valid()) l = c;
      }
      if (l) {
        GroundTruthObject lg = g;
        lg.bbox = *l;
        pair.long_objects.push_back(std::move(lg));
      }
    }
  }
}

}  // namespace

LoadedSequence load_sequence(const fs::path& root, std::string_view seq_id,
                             const LoadOptions& options) {
  const auto dir_opt = find_sequence_dir(root, seq_id);
  if (!dir_opt) throw LoadError((root / std::string(seq_id)).string(), "sequence not found");
  const fs::path& dir = *dir_opt;

  std::vector<std::string> cameras;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("F_", 0) == 0 && name.find("CAM") != std::string::npos)
      cameras.push_back(name);
  }
  std::sort(cameras.begin(), cameras.end());
  const std::vector<std::string> expected{std::string(camera_dir(StreamId::Long)),
                                          std::string(camera_dir(StreamId::Mid))};
  if (cameras != expected)
    throw LoadError(dir.string(), fmt::format("expected exactly 2 camera streams ({}, {}), found {}",
                                              expected[1], expected[0], cameras.size()));

  LoadedSequence seq;
  auto& man = seq.manifest;
  man.seq_id = std::string(seq_id);
  man.odd = parse_odd(dir.parent_path().filename().string());

  json meta = json::object();
  const auto meta_path = dir / "sequence.json";
  if (fs::exists(meta_path)) meta = parse_json_file(meta_path);
  std::int64_t start_ns = 0;
  try {
    if (meta.contains("source")) man.source = parse_source(meta["source"].get<std::string>());
    man.fps = meta.value("fps", 30.0);
    start_ns = meta.value("start_ns", std::int64_t{0});
    if (meta.contains("fov_map")) {
      const auto& f = meta["fov_map"];
      seq.fov = {f.at("scale").get<double>(), f.at("offset_x").get<double>(),
                 f.at("offset_y").get<double>()};
    }
  } catch (const json::exception& e) {
    throw LoadError(meta_path.string(), std::string("bad field: ") + e.what());
  }
  if (!(man.fps > 0)) throw LoadError(meta_path.string(), "fps must be positive");

  const auto mid_files = list_frames(dir / std::string(camera_dir(StreamId::Mid)));
  const auto long_files = list_frames(dir / std::string(camera_dir(StreamId::Long)));
  man.frame_count_mid = static_cast<std::int64_t>(mid_files.indices.size());
  man.frame_count_long = static_cast<std::int64_t>(long_files.indices.size());
  man.duration_s = static_cast<double>(std::max(man.frame_count_mid, man.frame_count_long)) / man.fps;
  if (!meta.contains("fov_map") && !mid_files.paths.empty()) {
    const auto [w, h] = png_dimensions(mid_files.paths.front());
    seq.fov = FovMap::centered(w, h);
  }

  const auto mid_ts = stream_timestamps(meta, StreamId::Mid, mid_files, man.fps, start_ns, meta_path);
  const auto long_ts = stream_timestamps(meta, StreamId::Long, long_files, man.fps, start_ns, meta_path);

  std::pair<int, int> mid_dims{0, 0}, long_dims{0, 0};
  if (!mid_files.paths.empty()) mid_dims = png_dimensions(mid_files.paths.front());
  if (!long_files.paths.empty()) long_dims = png_dimensions(long_files.paths.front());

  // Nearest-timestamp pairing; both lists are time ordered.
  std::size_t j = 0;
  std::vector<bool> long_used(long_ts.size(), false);
  for (std::size_t i = 0; i < mid_ts.size(); ++i) {
    while (j + 1 < long_ts.size() &&
           std::llabs(long_ts[j + 1] - mid_ts[i]) <= std::llabs(long_ts[j] - mid_ts[i]))
      ++j;
    if (long_ts.empty() || long_used[j] || std::llabs(long_ts[j] - mid_ts[i]) > options.max_skew_ns) {
      seq.warnings.push_back({LoadWarning::Kind::UnpairedFrame, mid_files.paths[i].string(),
                              "no long-range frame within skew bound"});
      continue;
    }
    long_used[j] = true;
    AnnotatedPair pair;
    auto make_frame = [&](StreamId s, const StreamFiles& files, std::size_t k,
                          const std::vector<std::int64_t>& ts) {
      ImageFrame f;
      f.stream = s;
      f.seq_id = man.seq_id;
      f.frame_index = files.indices[k];
      f.timestamp_ns = ts[k];
      f.tags = read_tags(meta, s == StreamId::Mid ? "mid" : "long", files.indices[k]);
      if (options.decode_images) f.image = read_png(files.paths[k]);
      return f;
    };
    pair.frames.mid = make_frame(StreamId::Mid, mid_files, i, mid_ts);
    pair.frames.lng = make_frame(StreamId::Long, long_files, j, long_ts);
    if (options.decode_images) {
      mid_dims = {pair.frames.mid.width(), pair.frames.mid.height()};
      long_dims = {pair.frames.lng.width(), pair.frames.lng.height()};
    }

    for (const char* kind : {"lights", "signs"}) {
      const auto path = dir / "annotations" / kind / frame_name(mid_files.indices[i], "json");
      if (!fs::exists(path)) {
        seq.warnings.push_back({LoadWarning::Kind::MissingAnnotation, path.string(),
                                "annotation file missing; frame treated as unannotated"});
        continue;
      }
      read_annotations(path, options.vocabulary, seq.fov, mid_dims, long_dims, pair, seq.warnings);
    }
    if (!pair.mid_objects.empty() || !pair.long_objects.empty()) man.contains_target = true;
    seq.pairs.push_back(std::move(pair));
  }
  for (std::size_t k = 0; k < long_used.size(); ++k)
    if (!long_used[k])
      seq.warnings.push_back({LoadWarning::Kind::UnpairedFrame, long_files.paths[k].string(),
                              "no mid-range frame within skew bound"});
  return seq;
}

std::vector<SequenceManifest> scan_dataset(const fs::path& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw IoError(root.string(), "dataset root does not exist");
  LoadOptions scan = options;
  scan.decode_images = false;
  std::vector<SequenceManifest> out;
  for (auto odd : kAllOdds) {
    const auto odd_dir = root / std::string(to_string(odd));
    if (!fs::is_directory(odd_dir)) continue;
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(odd_dir))
      if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) out.push_back(load_sequence(root, id, scan).manifest);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.seq_id < b.seq_id; });
  return out;
}

std::vector<SequenceManifest> apply_content_filter(const std::vector<SequenceManifest>& manifests,
                                                   const FilterPolicy& policy) {
  std::vector<SequenceManifest> kept;
  for (const auto& m : manifests)
    if (m.contains_target && m.duration_s + 1e-9 >= policy.min_duration_s) kept.push_back(m);
  return kept;
}

namespace {

/// Largest-remainder apportionment of `total` by `weights` (summing to 1).
std::vector<int> apportion(int total, const std::vector<double>& weights) {
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i];
    out[i] = static_cast<int>(std::floor(exact + 1e-9));
    assigned += out[i];
    rema.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[rema[k % rema.size()].second];
  return out;
}

}  // namespace

SplitSpec make_splits(const std::vector<SequenceManifest>& manifests, std::array<double, 3> ratios,
                      std::uint64_t seed) {
  for (double r : ratios)
    if (r < 0.0) throw ValidationError("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");

  std::vector<const SequenceManifest*> pool;
  for (const auto& m : manifests)
    if (m.contains_target) pool.push_back(&m);
  const int nonzero = static_cast<int>(std::count_if(ratios.begin(), ratios.end(),
                                                     [](double r) { return r > 0; }));
  if (static_cast<int>(pool.size()) < nonzero)
    throw ValidationError(fmt::format("{} sequences cannot fill {} splits", pool.size(), nonzero));

  const std::vector<double> w(ratios.begin(), ratios.end());
  const auto totals = apportion(static_cast<int>(pool.size()), w);

  std::array<std::vector<std::string>, 4> groups;
  for (const auto* m : pool) groups[static_cast<std::size_t>(m->odd)].push_back(m->seq_id);

  // quota[o][s]: floors first, then greedy by remainder under row/column deficits.
  std::array<std::array<int, 3>, 4> quota{};
  std::array<std::array<double, 3>, 4> rem{};
  std::array<int, 4> row_def{};
  std::array<int, 3> col_def{totals[0], totals[1], totals[2]};
  for (std::size_t o = 0; o < 4; ++o) {
    std::sort(groups[o].begin(), groups[o].end());
    const int n = static_cast<int>(groups[o].size());
    row_def[o] = n;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = n * ratios[s];
      quota[o][s] = static_cast<int>(std::floor(exact + 1e-9));
      rem[o][s] = exact - quota[o][s];
      row_def[o] -= quota[o][s];
      col_def[s] -= quota[o][s];
    }
  }
  while (true) {
    int bo = -1, bs = -1;
    for (int o = 0; o < 4; ++o) {
      if (row_def[o] <= 0) continue;
      for (int s = 0; s < 3; ++s) {
        if (col_def[s] <= 0) continue;
        if (bo < 0 || rem[o][s] > rem[bo][bs]) bo = o, bs = s;
      }
    }
    if (bo < 0) break;
    ++quota[bo][bs];
    rem[bo][bs] -= 1.0;
    --row_def[bo];
    --col_def[bs];
  }

  SplitSpec spec;
  spec.seed = seed;
  std::array<std::vector<std::string>*, 3> outs{&spec.train, &spec.val, &spec.test};
  for (std::size_t o = 0; o < 4; ++o) {
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(o)}));
    auto ids = groups[o];
    rng.shuffle(ids);
    std::size_t k = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (int c = 0; c < quota[o][s]; ++c) outs[s]->push_back(ids[k++]);
  }
  for (auto* v : outs) std::sort(v->begin(), v->end());
  return spec;
}

std::vector<std::string> check_split_balance(const SplitSpec& split,
                                             const std::vector<SequenceManifest>& manifests,
                                             double tolerance) {
  std::map<std::string, OddTag> odd_of;
  std::array<double, 4> pool{};
  double pool_n = 0;
  for (const auto& m : manifests) {
    if (!m.contains_target) continue;
    odd_of[m.seq_id] = m.odd;
    pool[static_cast<std::size_t>(m.odd)] += 1;
    pool_n += 1;
  }
  std::vector<std::string> issues;
  const std::array<std::pair<const char*, const std::vector<std::string>*>, 3> parts{
      {{"train", &split.train}, {"val", &split.val}, {"test", &split.test}}};
  for (const auto& [name, ids] : parts) {
    if (ids->empty()) continue;
    std::array<double, 4> counts{};
    for (const auto& id : *ids) {
      auto it = odd_of.find(id);
      if (it == odd_of.end()) {
        issues.push_back(fmt::format("{}: '{}' is not in the pool", name, id));
        continue;
      }
      counts[static_cast<std::size_t>(it->second)] += 1;
    }
    for (std::size_t o = 0; o < 4; ++o) {
      const double dev = counts[o] / ids->size() - pool[o] / pool_n;
      if (std::abs(dev) > tolerance)
        issues.push_back(fmt::format("{}: {} share deviates by {:.3f}", name,
                                     to_string(kAllOdds[o]), dev));
    }
  }
  return issues;
}

std::string format_yolo_line(const GroundTruthObject& obj, int width, int height) {
  const double cx = obj.bbox.center_x() / width;
  const double cy = obj.bbox.center_y() / height;
  const double w = obj.bbox.width() / width;
  const double h = obj.bbox.height() / height;
  return fmt::format("{} {:.6f} {:.6f} {:.6f} {:.6f}", obj.class_id, cx, cy, w, h);
}

std::vector<YoloLabel> parse_yolo_labels(std::string_view text) {
  std::vector<YoloLabel> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    YoloLabel l{};
    if (std::sscanf(line.c_str(), "%d %lf %lf %lf %lf", &l.class_id, &l.cx, &l.cy, &l.w, &l.h) != 5)
      throw ValidationError("malformed YOLO line '" + line + "'");
    out.push_back(l);
  }
  return out;
}

std::size_t export_yolo(const LoadedSequence& sequence, const fs::path& out,
                        const ClassVocabulary& vocabulary) {
  std::size_t count = 0;
  try {
    fs::create_directories(out);
    std::string classes;
    for (const auto& n : vocabulary.names()) classes += n + "\n";
    write_text_file(out / "classes.txt", classes);
    for (auto s : {StreamId::Mid, StreamId::Long}) {
      const auto dir = out / std::string(camera_dir(s));
      fs::create_directories(dir);
      for (const auto& pair : sequence.pairs) {
        const auto& frame = s == StreamId::Mid ? pair.frames.mid : pair.frames.lng;
        std::string body;
        for (const auto& obj : pair.objects(s))
          body += format_yolo_line(obj, frame.width(), frame.height()) + "\n";
        write_text_file(dir / frame_name(frame.frame_index, "txt"), body);
        ++count;
      }
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError(out.string(), e.what());
  }
  return count;
}

json to_json(const SequenceManifest& m) {
  return {{"seq_id", m.seq_id},
          {"odd", to_string(m.odd)},
          {"source", to_string(m.source)},
          {"fps", m.fps},
          {"duration_s", m.duration_s},
          {"frame_count", {{"mid", m.frame_count_mid}, {"long", m.frame_count_long}}},
          {"contains_target", m.contains_target}};
}

SequenceManifest manifest_from_json(const json& j) {
  SequenceManifest m;
  m.seq_id = j.at("seq_id").get<std::string>();
  m.odd = parse_odd(j.at("odd").get<std::string>());
  m.source = parse_source(j.at("source").get<std::string>());
  m.fps = j.value("fps", 30.0);
  m.duration_s = j.at("duration_s").get<double>();
  m.frame_count_mid = j.at("frame_count").at("mid").get<std::int64_t>();
  m.frame_count_long = j.at("frame_count").at("long").get<std::int64_t>();
  m.contains_target = j.at("contains_target").get<bool>();
  return m;
}

json to_json(const SplitSpec& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"seed", s.seed}};
}

SplitSpec split_from_json(const json& j) {
  SplitSpec s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  s.seed = j.value("seed", std::uint64_t{42});
  return s;
}

void write_sequence(const fs::path& root, const LoadedSequence& sequence,
                    const ClassVocabulary& vocabulary) {
  const auto& man = sequence.manifest;
  const auto dir = root / std::string(to_string(man.odd)) / man.seq_id;
  try {
    for (auto s : {StreamId::Mid, StreamId::Long})
      fs::create_directories(dir / std::string(camera_dir(s)));
    fs::create_directories(dir / "annotations" / "lights");
    fs::create_directories(dir / "annotations" / "signs");
  } catch (const fs::filesystem_error& e) {
    throw IoError(dir.string(), e.what());
  }

  json meta{{"source", to_string(man.source)},
            {"fps", man.fps},
            {"fov_map",
             {{"scale", sequence.fov.scale},
              {"offset_x", sequence.fov.offset_x},
              {"offset_y", sequence.fov.offset_y}}}};
  json ts_mid = json::array(), ts_long = json::array();
  json tags_mid = json::object(), tags_long = json::object();
  for (const auto& pair : sequence.pairs) {
    const auto& m = pair.frames.mid;
    const auto& l = pair.frames.lng;
    ts_mid.push_back(m.timestamp_ns);
    ts_long.push_back(l.timestamp_ns);
    if (!(m.tags == TagSet{DegradationTag::Clean})) tags_mid[std::to_string(m.frame_index)] = m.tags.names();
    if (!(l.tags == TagSet{DegradationTag::Clean})) tags_long[std::to_string(l.frame_index)] = l.tags.names();
    write_png(dir / std::string(camera_dir(StreamId::Mid)) / frame_name(m.frame_index, "png"), m.image);
    write_png(dir / std::string(camera_dir(StreamId::Long)) / frame_name(l.frame_index, "png"), l.image);

    json lights = json::array(), signs = json::array();
    for (const auto& obj : pair.mid_objects) {
      json o{{"bbox", {obj.bbox.x_min, obj.bbox.y_min, obj.bbox.x_max, obj.bbox.y_max}},
             {"category", obj.class_id >= 0 ? vocabulary.name(obj.class_id) : obj.category},
             {"occlusion", obj.occlusion_score}};
      if (obj.signal_state) o["signal_state"] = to_string(*obj.signal_state);
      if (obj.ocr_text) o["ocr_text"] = *obj.ocr_text;
      if (obj.object_id) {
        o["id"] = *obj.object_id;
        json long_box = nullptr;
        for (const auto& lo : pair.long_objects)
          if (lo.object_id == obj.object_id)
            long_box = {lo.bbox.x_min, lo.bbox.y_min, lo.bbox.x_max, lo.bbox.y_max};
        o["bbox_long"] = long_box;
      }
      (obj.is_traffic_light() ? lights : signs).push_back(std::move(o));
    }
    write_text_file(dir / "annotations" / "lights" / frame_name(m.frame_index, "json"), lights.dump(1));
    write_text_file(dir / "annotations" / "signs" / frame_name(m.frame_index, "json"), signs.dump(1));
  }
  meta["timestamps_ns"] = {{"mid", ts_mid}, {"long", ts_long}};
  if (!tags_mid.empty() || !tags_long.empty())
    meta["degradation_tags"] = {{"mid", tags_mid}, {"long", tags_long}};
  write_text_file(dir / "sequence.json", meta.dump(1));
}

}  // namespace dfov::io
