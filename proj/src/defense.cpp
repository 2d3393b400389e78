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

#include "dfov/defense.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace dfov::defense {

std::string_view to_string(GateMode m) noexcept { return m == GateMode::PerFrame ? "PER_FRAME" : "PER_OBJECT"; }

GateMode parse_gate_mode(std::string_view s) {
  if (s == "PER_FRAME" || s == "per_frame") return GateMode::PerFrame;
  if (s == "PER_OBJECT" || s == "per_object") return GateMode::PerObject;
  throw ValidationError(fmt::format("unknown gate mode '{}'", s));
}

std::string_view to_string(Squeeze s) noexcept {
  switch (s) {
    case Squeeze::None: return "none";
    case Squeeze::Quantize: return "quantize";
    case Squeeze::Median: return "median";
    case Squeeze::Both: return "both";
  }
  return "none";
}

Squeeze parse_squeeze(std::string_view s) {
  for (auto v : {Squeeze::None, Squeeze::Quantize, Squeeze::Median, Squeeze::Both})
    if (to_string(v) == s) return v;
  throw ValidationError(fmt::format("unknown squeeze '{}'", s));
}

DefenseConfig DefenseConfig::undefended() {
  DefenseConfig c;
  c.temperature = 1.0;
  c.mid_squeeze = Squeeze::None;
  c.long_squeeze = Squeeze::None;
  c.gating = false;
  return c;
}

void validate(const DefenseConfig& c) {
  if (c.bit_depth < 1 || c.bit_depth > 8) throw ValidationError(fmt::format("bit_depth = {} outside [1, 8]", c.bit_depth));
  if (c.median_kernel < 1 || c.median_kernel % 2 == 0)
    throw ValidationError(fmt::format("median_kernel = {} must be odd and >= 1", c.median_kernel));
  if (!(c.temperature > 0)) throw ValidationError("temperature must be positive");
  if (!(c.cross_fov_iou_min > 0 && c.cross_fov_iou_min <= 1))
    throw ValidationError("cross_fov_iou_min must lie in (0, 1]");
}

nlohmann::json to_json(const DefenseConfig& c) {
  return {{"bit_depth", c.bit_depth},
          {"median_kernel", c.median_kernel},
          {"temperature", c.temperature},
          {"gate_mode", to_string(c.gate_mode)},
          {"cross_fov_iou_min", c.cross_fov_iou_min},
          {"mid_squeeze", to_string(c.mid_squeeze)},
          {"long_squeeze", to_string(c.long_squeeze)},
          {"gating", c.gating}};
}

DefenseConfig defense_config_from_json(const nlohmann::json& j) {
  DefenseConfig c;
  try {
    c.bit_depth = j.value("bit_depth", c.bit_depth);
    c.median_kernel = j.value("median_kernel", c.median_kernel);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("gate_mode")) c.gate_mode = parse_gate_mode(j["gate_mode"].get<std::string>());
    c.cross_fov_iou_min = j.value("cross_fov_iou_min", c.cross_fov_iou_min);
    if (j.contains("mid_squeeze")) c.mid_squeeze = parse_squeeze(j["mid_squeeze"].get<std::string>());
    if (j.contains("long_squeeze")) c.long_squeeze = parse_squeeze(j["long_squeeze"].get<std::string>());
    c.gating = j.value("gating", c.gating);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("defense config: ") + e.what());
  }
  validate(c);
  return c;
}

void quantize_bits(const RgbImage& image, int depth, RgbImage& out) {
  const auto lut = quantization_lut(depth);
  if (image.empty()) {
    out = RgbImage();
    return;
  }
  out.resize(image.width(), image.height());
  const auto src = image.bytes();
  auto dst = out.bytes();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = lut[src[i]];
}

RgbImage quantize_bits(const RgbImage& image, int depth) {
  RgbImage out;
  quantize_bits(image, depth, out);
  return out;
}

namespace {

inline void sort2(std::uint8_t& a, std::uint8_t& b) {
  const std::uint8_t lo = std::min(a, b);
  b = std::max(a, b);
  a = lo;
}

void median3(const RgbImage& image, RgbImage& out) {
  const int w = image.width(), h = image.height();
  const std::size_t stride = 3 * static_cast<std::size_t>(w);
  // Rows padded by one clamped pixel on each side.
  std::vector<std::uint8_t> pad(3 * (stride + 6));
  auto fill = [&](int y, std::uint8_t* dst) {
    const std::uint8_t* row = image.row(clamp_index(y, h));
    std::copy(row, row + 3, dst);
    std::copy(row, row + stride, dst + 3);
    std::copy(row + stride - 3, row + stride, dst + 3 + stride);
  };
  std::uint8_t* rows[3] = {pad.data(), pad.data() + stride + 6, pad.data() + 2 * (stride + 6)};
  fill(-1, rows[0]);
  fill(0, rows[1]);
  for (int y = 0; y < h; ++y) {
    fill(y + 1, rows[2]);
    const std::uint8_t* a = rows[0];
    const std::uint8_t* b = rows[1];
    const std::uint8_t* c = rows[2];
    std::uint8_t* dst = out.row(y);
    for (std::size_t i = 0; i < stride; ++i) {
      std::uint8_t p0 = a[i], p1 = a[i + 3], p2 = a[i + 6];
      std::uint8_t p3 = b[i], p4 = b[i + 3], p5 = b[i + 6];
      std::uint8_t p6 = c[i], p7 = c[i + 3], p8 = c[i + 6];
      sort2(p1, p2); sort2(p4, p5); sort2(p7, p8);
      sort2(p0, p1); sort2(p3, p4); sort2(p6, p7);
      sort2(p1, p2); sort2(p4, p5); sort2(p7, p8);
      sort2(p0, p3); sort2(p5, p8); sort2(p4, p7);
      sort2(p3, p6); sort2(p1, p4); sort2(p2, p5);
      sort2(p4, p7); sort2(p4, p2); sort2(p6, p4);
      sort2(p4, p2);
      dst[i] = p4;
    }
    std::rotate(rows, rows + 1, rows + 3);
  }
}

}  // namespace

void median_filter(const RgbImage& image, int kernel, RgbImage& out) {
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError(fmt::format("median kernel {} must be odd and >= 1", kernel));
  if (kernel == 1 || image.pixel_count() == 0) {
    out = image;
    return;
  }
  out.resize(image.width(), image.height());
  if (kernel == 3) {
    median3(image, out);
    return;
  }
  const int r = kernel / 2, w = image.width(), h = image.height();
  std::vector<std::uint8_t> window(static_cast<std::size_t>(kernel) * kernel);
  const auto mid = static_cast<long>(window.size() / 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        std::size_t n = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) window[n++] = image.at(clamp_index(x + dx, w), clamp_index(y + dy, h), c);
        std::nth_element(window.begin(), window.begin() + mid, window.end());
        out.at(x, y, c) = window[static_cast<std::size_t>(mid)];
      }
}

RgbImage median_filter(const RgbImage& image, int kernel) {
  RgbImage out;
  median_filter(image, kernel, out);
  return out;
}

void apply_squeeze(const RgbImage& image, Squeeze s, const DefenseConfig& c, RgbImage& out) {
  switch (s) {
    case Squeeze::None: out = image; return;
    case Squeeze::Quantize: quantize_bits(image, c.bit_depth, out); return;
    case Squeeze::Median: median_filter(image, c.median_kernel, out); return;
    case Squeeze::Both: median_filter(quantize_bits(image, c.bit_depth), c.median_kernel, out); return;
  }
}

RgbImage apply_squeeze(const RgbImage& image, Squeeze s, const DefenseConfig& c) {
  RgbImage out;
  apply_squeeze(image, s, c, out);
  return out;
}

Detection soften(const Detection& d, double tau) {
  Detection out = Detection::from_scores(d.bbox, d.scores.with_temperature(tau));
  out.track_id = d.track_id;
  return out;
}

double frame_entropy(std::span<const Detection> dets, int k) {
  if (dets.empty()) return std::log(static_cast<double>(k));
  double num = 0.0, den = 0.0;
  for (const auto& d : dets) {
    num += d.confidence * entropy(d.scores.probs);
    den += d.confidence;
  }
  return den > 0 ? num / den : std::log(static_cast<double>(k));
}

std::string_view to_string(PairStatus s) noexcept { return s == PairStatus::Consistent ? "CONSISTENT" : "CONFLICTED"; }

Association cross_fov_associate(std::span<const Detection> mid, std::span<const Detection> lng, const FovMap* map,
                                double iou_min) {
  if (!map) throw ConfigError("cross-FoV association needs a mid/long coordinate map");
  struct Cand {
    double iou;
    std::size_t m, l;
  };
  std::vector<Cand> cands;
  for (std::size_t m = 0; m < mid.size(); ++m)
    for (std::size_t l = 0; l < lng.size(); ++l) {
      const Box lb = map->to_mid(lng[l].bbox);
      if (!lb.valid() || !mid[m].bbox.valid()) continue;
      const double v = iou(mid[m].bbox, lb);
      if (v >= iou_min) cands.push_back({v, m, l});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
  std::vector<bool> used_m(mid.size()), used_l(lng.size());
  Association out;
  for (const auto& c : cands) {
    if (used_m[c.m] || used_l[c.l]) continue;
    used_m[c.m] = used_l[c.l] = true;
    out.pairs.push_back({c.m, c.l, c.iou,
                         mid[c.m].class_id == lng[c.l].class_id ? PairStatus::Consistent : PairStatus::Conflicted});
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const FovPair& a, const FovPair& b) { return a.mid < b.mid; });
  for (std::size_t m = 0; m < mid.size(); ++m)
    if (!used_m[m]) out.unpaired_mid.push_back(m);
  for (std::size_t l = 0; l < lng.size(); ++l)
    if (!used_l[l]) out.unpaired_long.push_back(l);
  return out;
}

namespace {

SelectedDetection from_long(const Detection& d, const FovMap* map) {
  SelectedDetection s{d, StreamId::Long};
  if (map) s.detection.bbox = map->to_mid(d.bbox);
  return s;
}

double stream_entropy(const ScoredStream& s, int k) {
  return s.scored ? frame_entropy(s.detections, k) : std::numeric_limits<double>::infinity();
}

}  // namespace

GateResult gate_streams(const ScoredStream& mid, const ScoredStream& lng, const DefenseConfig& config,
                        const FovMap* map) {
  if (!mid.vocabulary || !lng.vocabulary || !(*mid.vocabulary == *lng.vocabulary))
    throw ConfigError("mid and long streams use different class vocabularies");
  const int k = mid.vocabulary->size();
  GateResult out;
  auto& g = out.decision;
  g.h_mid = stream_entropy(mid, k);
  g.h_long = stream_entropy(lng, k);
  g.chosen = g.h_mid < g.h_long ? StreamId::Mid : StreamId::Long;
  if (config.gate_mode == GateMode::PerFrame) {
    if (g.chosen == StreamId::Mid) {
      for (const auto& d : mid.detections) out.selected.push_back({d, StreamId::Mid});
    } else if (lng.scored) {
      if (!map) throw ConfigError("long-stream detections need a mid/long coordinate map");
      for (const auto& d : lng.detections) out.selected.push_back(from_long(d, map));
    }
    return out;
  }
  const std::vector<Detection> none;
  const auto& md = mid.scored ? mid.detections : none;
  const auto& ld = lng.scored ? lng.detections : none;
  const Association a = cross_fov_associate(md, ld, map, config.cross_fov_iou_min);
  for (const auto& p : a.pairs) {
    const double hm = entropy(md[p.mid].scores.probs), hl = entropy(ld[p.lng].scores.probs);
    const StreamId pick = hm < hl ? StreamId::Mid : StreamId::Long;
    g.per_object.push_back({p.mid, p.lng, p.status, pick});
    out.selected.push_back(pick == StreamId::Mid ? SelectedDetection{md[p.mid], StreamId::Mid} : from_long(ld[p.lng], map));
  }
  for (auto m : a.unpaired_mid) {
    g.per_object.push_back({m, std::nullopt, std::nullopt, StreamId::Mid});
    out.selected.push_back({md[m], StreamId::Mid});
  }
  for (auto l : a.unpaired_long) {
    g.per_object.push_back({std::nullopt, l, std::nullopt, StreamId::Long});
    out.selected.push_back(from_long(ld[l], map));
  }
  return out;
}

void defend_frame(const FramePair& pair, const detect::RegisteredDetector& detector,
                  const DefenseConfig& config, const FovMap& map, DefendedFrame& out) {
  out.scored = false;
  out.mid = {};
  out.lng = {};
  out.gate = {};
  out.selected.clear();
  out.failures.clear();
  out.frame_index = pair.mid.frame_index;
  out.timestamp_ns = pair.mid.timestamp_ns;
  const auto* vocab = &detector.vocabulary();
  auto score = [&](const ImageFrame& raw, Squeeze sq, RgbImage& squeezed, ScoredStream& dst) {
    dst.vocabulary = vocab;
    ImageFrame f;
    f.stream = raw.stream;
    f.seq_id = raw.seq_id;
    f.frame_index = raw.frame_index;
    f.timestamp_ns = raw.timestamp_ns;
    f.tags = raw.tags;
    f.image = std::move(squeezed);
    apply_squeeze(raw.image, sq, config, f.image);
    auto r = detector.infer(f);
    squeezed = std::move(f.image);
    dst.scored = r.scored();
    if (!r.scored()) {
      out.failures.push_back(fmt::format("{}: {}", to_string(raw.stream), r.message));
      return;
    }
    dst.detections.reserve(r.detections.size());
    for (const auto& d : r.detections) dst.detections.push_back(config.temperature == 1.0 ? d : soften(d, config.temperature));
  };
  score(pair.mid, config.mid_squeeze, out.squeezed_mid, out.mid);
  if (!config.gating) {
    out.lng.vocabulary = vocab;
    out.lng.scored = false;
    out.scored = out.mid.scored;
    out.gate.chosen = StreamId::Mid;
    out.gate.h_mid = out.mid.scored ? frame_entropy(out.mid.detections, vocab->size()) : std::numeric_limits<double>::infinity();
    out.gate.h_long = std::numeric_limits<double>::infinity();
    out.squeezed_long = RgbImage();
    if (out.mid.scored)
      for (const auto& d : out.mid.detections) out.selected.push_back({d, StreamId::Mid});
    return;
  }
  score(pair.lng, config.long_squeeze, out.squeezed_long, out.lng);
  out.scored = out.mid.scored || out.lng.scored;
  if (!out.scored) return;
  auto g = gate_streams(out.mid, out.lng, config, &map);
  out.gate = std::move(g.decision);
  out.selected = std::move(g.selected);
}

DefendedFrame defend_frame(const FramePair& pair, const detect::RegisteredDetector& detector,
                           const DefenseConfig& config, const FovMap& map) {
  DefendedFrame out;
  defend_frame(pair, detector, config, map, out);
  return out;
}

nlohmann::json to_json(const GateDecision& g) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"H_mid", num(g.h_mid)}, {"H_long", num(g.h_long)}, {"chosen", to_string(g.chosen)}};
  if (!g.per_object.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& o : g.per_object) {
      nlohmann::json e{{"chosen", to_string(o.chosen)}};
      e["mid"] = o.mid ? nlohmann::json(*o.mid) : nlohmann::json(nullptr);
      e["long"] = o.lng ? nlohmann::json(*o.lng) : nlohmann::json(nullptr);
      e["pair"] = o.status ? nlohmann::json(to_string(*o.status)) : nlohmann::json("UNPAIRED");
      arr.push_back(std::move(e));
    }
    j["per_object"] = std::move(arr);
  }
  return j;
}

}  // namespace dfov::defense
