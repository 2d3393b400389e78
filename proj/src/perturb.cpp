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

#include "dfov/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "dfov/errors.hpp"
#include "dfov/rng.hpp"
#include "noise.hpp"

namespace dfov::perturb {

namespace {

struct KindInfo {
  Kind kind;
  std::string_view name;
  Stage stage;
  std::vector<ParamRange> params;
  std::vector<std::string_view> intensity;  // all zero => identity
  bool object_aware_allowed;
};

const std::vector<KindInfo>& kind_table() {
  static const std::vector<KindInfo> table{
      {Kind::Rain, "rain", Stage::Weather,
       {{"droplet_coverage", 0, 1, 0}, {"streak_len_px", 0, 200, 20}, {"streak_alpha", 0, 1, 0.6},
        {"angle_deg", -45, 45, 10}},
       {"droplet_coverage"}, false},
      {Kind::Fog, "fog", Stage::Weather, {{"density", 0, 1, 0}, {"airlight", 0, 255, 220}},
       {"density"}, false},
      {Kind::Snow, "snow", Stage::Weather,
       {{"surface_coverage", 0, 1, 0}, {"luminance_shift", 0, 1, 0}, {"flake_radius_px", 1, 8, 2, true}},
       {"surface_coverage", "luminance_shift"}, false},
      {Kind::SunGlare, "sun_glare", Stage::Optics,
       {{"saturated_area", 0, 1, 0}, {"bloom_peak", 0, 255, 96}, {"bloom_sigma_frac", 0.01, 2, 0.5},
        {"center_x", 0, 1, 0.5}, {"center_y", 0, 1, 0.25}},
       {"saturated_area"}, true},
      {Kind::HeadlightGlare, "headlight_glare", Stage::Optics,
       {{"glare_lux", 0, 2000, 0}, {"radius_frac", 0.005, 1, 0.08}, {"center_x", 0, 1, 0.5},
        {"center_y", 0, 1, 0.6}},
       {"glare_lux"}, false},
      {Kind::LensFlare, "lens_flare", Stage::Optics,
       {{"area", 0, 1, 0}, {"ghosts", 1, 12, 5, true}, {"strength", 0, 255, 90},
        {"source_x", 0, 1, 0.85}, {"source_y", 0, 1, 0.15}},
       {"area"}, false},
      {Kind::Dirt, "dirt", Stage::Surface,
       {{"coverage", 0, 1, 0}, {"opacity", 0, 1, 1}, {"scale_px", 2, 1024, 24}}, {"coverage"}, false},
      {Kind::Graffiti, "graffiti", Stage::Surface, {{"char_coverage", 0, 1, 0}}, {"char_coverage"},
       true},
      {Kind::VegetationOcclusion, "vegetation_occlusion", Stage::Surface,
       {{"coverage", 0, 1, 0}, {"full_occlusion_s", 0, 600, 0}}, {"coverage"}, true},
      {Kind::MotionBlur, "motion_blur", Stage::Sensor,
       {{"kernel_px", 0, 101, 0, true}, {"vertical", 0, 1, 0, true}}, {"kernel_px"}, false},
      {Kind::RollingShutter, "rolling_shutter", Stage::Sensor,
       {{"velocity", -4, 4, 0}, {"misalign_frames", 0, 60, 0}}, {"velocity"}, false},
      {Kind::FocusDrift, "focus_drift", Stage::Sensor, {{"sigma", 0, 10, 0}}, {"sigma"}, false},
  };
  return table;
}

const KindInfo& info(Kind k) { return kind_table()[static_cast<std::size_t>(k)]; }

double get(const Params& p, std::string_view key, double fallback = 0.0) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

using Mask = std::vector<std::uint8_t>;

std::size_t mask_count(const Mask& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

/// Mutable rendering state shared by the stages of one composite application.
struct Canvas {
  ImageFrame frame;
  Mask occlusion;
  Mask dirt;
  Mask streaks;
  std::vector<AppliedEffect> effects;

  int w() const { return frame.width(); }
  int h() const { return frame.height(); }
  std::size_t n() const { return frame.image.pixel_count(); }
  void occlude(const Mask& m) {
    if (occlusion.empty()) occlusion.assign(n(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) occlusion[i] |= m[i];
  }
};

std::uint64_t dynamic_seed(const PerturbationSpec& s, const ImageFrame& f) {
  return mix_seed({s.rng_seed, static_cast<std::uint64_t>(f.frame_index),
                   static_cast<std::uint64_t>(f.stream), 0x7261696eULL});
}

std::uint64_t static_seed(const PerturbationSpec& s, const ImageFrame& f) {
  return mix_seed({s.rng_seed, static_cast<std::uint64_t>(f.stream), 0x73746174ULL});
}

/// Selects exactly round(fraction * |region|) pixels of the region with the
/// largest `score`; ties resolve by raster order.
Mask top_fraction(int w, const PixelRect& region, double fraction,
                  const std::function<double(int, int)>& score, int h) {
  Mask mask(static_cast<std::size_t>(w) * h, 0);
  const long n = region.area();
  const long k = std::lround(fraction * static_cast<double>(n));
  if (k <= 0) return mask;
  std::vector<std::pair<double, long>> vals;
  vals.reserve(static_cast<std::size_t>(n));
  for (int y = region.y0; y < region.y1; ++y)
    for (int x = region.x0; x < region.x1; ++x)
      vals.emplace_back(-score(x, y), static_cast<long>(y) * w + x);
  if (k < n) std::nth_element(vals.begin(), vals.begin() + (k - 1), vals.end());
  const auto kth = vals[static_cast<std::size_t>(k - 1)];
  for (const auto& v : vals)
    if (v <= kth) mask[static_cast<std::size_t>(v.second)] = 1;
  return mask;
}

double region_fraction(const Mask& m, int w, const PixelRect& r) {
  if (r.empty()) return 0.0;
  long c = 0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) c += m[static_cast<std::size_t>(y) * w + x];
  return static_cast<double>(c) / static_cast<double>(r.area());
}

void blend_mask(RgbImage& img, const Mask& m, std::array<double, 3> color, double alpha) {
  auto bytes = img.bytes();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    for (int c = 0; c < 3; ++c)
      bytes[3 * i + c] = to_u8((1.0 - alpha) * bytes[3 * i + c] + alpha * color[c]);
  }
}

void render_rain(Canvas& cv, const PerturbationSpec& s, const Params& p) {
  const double coverage = get(p, "droplet_coverage");
  const int len = std::max(1, static_cast<int>(std::lround(get(p, "streak_len_px"))));
  const double alpha = get(p, "streak_alpha");
  const double theta = get(p, "angle_deg") * std::numbers::pi / 180.0;
  const int w = cv.w(), h = cv.h();
  Mask mask(cv.n(), 0);
  const auto target = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(cv.n())));
  std::size_t covered = 0;
  Rng rng(dynamic_seed(s, cv.frame));
  const double dx = std::sin(theta), dy = std::cos(theta);
  const std::size_t max_draws = 64 * (cv.n() / static_cast<std::size_t>(len) + 16);
  for (std::size_t draw = 0; covered < target && draw < max_draws; ++draw) {
    const double x0 = rng.uniform(-len * std::abs(dx), w);
    const double y0 = rng.uniform(-len, h);
    for (int t = 0; t < len && covered < target; ++t) {
      const long x = std::lround(x0 + t * dx), y = std::lround(y0 + t * dy);
      if (x < 0 || y < 0 || x >= w || y >= h) continue;
      auto& m = mask[static_cast<std::size_t>(y) * w + x];
      if (!m) {
        m = 1;
        ++covered;
      }
    }
  }
  blend_mask(cv.frame.image, mask, {205, 210, 215}, alpha);
  cv.streaks = mask;
  cv.frame.tags.insert(DegradationTag::WeatherAffected);
  cv.effects.push_back({Kind::Rain, p,
                        {{"droplet_coverage", static_cast<double>(covered) / cv.n()},
                         {"streak_len_px", static_cast<double>(len)}},
                        {}});
}

void render_fog(Canvas& cv, const PerturbationSpec&, const Params& p) {
  const double d = get(p, "density");
  const double a = get(p, "airlight");
  for (auto& v : cv.frame.image.bytes()) v = to_u8(v * (1.0 - d) + a * d);
  cv.frame.tags.insert(DegradationTag::WeatherAffected);
  cv.effects.push_back({Kind::Fog, p, {{"density", d}, {"contrast_ratio", 1.0 - d}}, {}});
}

void render_snow(Canvas& cv, const PerturbationSpec& s, const Params& p) {
  const double coverage = get(p, "surface_coverage");
  const double shift = get(p, "luminance_shift");
  const int r = static_cast<int>(std::lround(get(p, "flake_radius_px", 2)));
  const int w = cv.w(), h = cv.h();
  if (shift > 0)
    for (auto& v : cv.frame.image.bytes()) v = to_u8(v + shift * (255.0 - v));
  Mask mask(cv.n(), 0);
  const auto target = static_cast<std::size_t>(std::lround(coverage * static_cast<double>(cv.n())));
  std::size_t covered = 0;
  Rng rng(dynamic_seed(s, cv.frame));
  const std::size_t max_draws = 64 * cv.n() + 1024;
  for (std::size_t draw = 0; covered < target && draw < max_draws; ++draw) {
    const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
    const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
    for (int y = std::max(0, cy - r); y <= std::min(h - 1, cy + r) && covered < target; ++y)
      for (int x = std::max(0, cx - r); x <= std::min(w - 1, cx + r) && covered < target; ++x) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r) continue;
        auto& m = mask[static_cast<std::size_t>(y) * w + x];
        if (!m) {
          m = 1;
          ++covered;
        }
      }
  }
  blend_mask(cv.frame.image, mask, {246, 248, 252}, 1.0);
  cv.occlude(mask);
  cv.frame.tags.insert(DegradationTag::WeatherAffected);
  if (coverage > 0) cv.frame.tags.insert(DegradationTag::PartiallyOccluded);
  cv.effects.push_back({Kind::Snow, p,
                        {{"surface_coverage", static_cast<double>(covered) / cv.n()},
                         {"luminance_shift", shift}},
                        {}});
}

void add_bloom(RgbImage& img, double cx, double cy, double sigma, double peak,
               std::array<double, 3> tint) {
  if (peak <= 0 || sigma <= 0) return;
  const int w = img.width(), h = img.height();
  const int reach = static_cast<int>(std::ceil(3.5 * sigma));
  const int x0 = std::max(0, static_cast<int>(cx) - reach), x1 = std::min(w, static_cast<int>(cx) + reach + 1);
  const int y0 = std::max(0, static_cast<int>(cy) - reach), y1 = std::min(h, static_cast<int>(cy) + reach + 1);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double g = peak * std::exp(-(dx * dx + dy * dy) * inv);
      if (g < 0.5) continue;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = to_u8(img.at(x, y, c) + g * tint[c]);
    }
}

double saturated_fraction(const RgbImage& img, const PixelRect& r) {
  if (r.empty()) return 0.0;
  long c = 0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x)
      if (img.at(x, y, 0) == 255 || img.at(x, y, 1) == 255 || img.at(x, y, 2) == 255) ++c;
  return static_cast<double>(c) / static_cast<double>(r.area());
}

void render_sun_glare(Canvas& cv, const PerturbationSpec& s, std::span<const GroundTruthObject> gt,
                      const Params& p) {
  const double area = get(p, "saturated_area");
  const double peak = get(p, "bloom_peak");
  const double sigma_frac = get(p, "bloom_sigma_frac", 0.5);
  const int w = cv.w(), h = cv.h();
  std::vector<std::pair<PixelRect, std::pair<double, double>>> targets;
  if (s.object_aware) {
    for (const auto& g : gt) {
      const auto r = pixel_rect(g.bbox, w, h);
      if (!r.empty()) targets.push_back({r, {g.bbox.center_x(), g.bbox.center_y()}});
    }
  } else {
    targets.push_back({PixelRect{0, 0, w, h}, {get(p, "center_x", 0.5) * w, get(p, "center_y", 0.25) * h}});
  }
  AppliedEffect eff{Kind::SunGlare, p, {}, {}};
  if (targets.empty()) eff.notes.push_back("object-aware glare without targets");
  double worst = 0.0;
  for (const auto& [r, c] : targets) {
    const auto k = static_cast<std::size_t>(std::ceil(area * static_cast<double>(r.area()) - 1e-9));
    std::vector<std::pair<double, long>> d;
    d.reserve(static_cast<std::size_t>(r.area()));
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        const double dx = x + 0.5 - c.first, dy = y + 0.5 - c.second;
        d.emplace_back(dx * dx + dy * dy, static_cast<long>(y) * w + x);
      }
    if (k > 0) {
      if (k < d.size()) std::nth_element(d.begin(), d.begin() + static_cast<long>(k - 1), d.end());
      const auto kth = d[std::min(k, d.size()) - 1];
      for (const auto& v : d)
        if (v <= kth)
          for (int ch = 0; ch < 3; ++ch) cv.frame.image.bytes()[3 * static_cast<std::size_t>(v.second) + ch] = 255;
    }
    const double half_diag = 0.5 * std::hypot(r.width(), r.height());
    add_bloom(cv.frame.image, c.first, c.second, sigma_frac * half_diag, peak, {1.0, 0.97, 0.85});
    worst = std::max(worst, saturated_fraction(cv.frame.image, r));
  }
  eff.measured["saturated_area"] = worst;
  cv.frame.tags.insert(DegradationTag::GlarePresent);
  cv.effects.push_back(std::move(eff));
}

void render_headlight(Canvas& cv, const PerturbationSpec&, std::span<const GroundTruthObject> gt,
                      const Params& p) {
  const double lux = get(p, "glare_lux");
  // 180 lux maps to a bloom peak of 255.
  const double peak = 255.0 * lux / kThresholds.headlight_glare_lux;
  const int w = cv.w(), h = cv.h();
  AppliedEffect eff{Kind::HeadlightGlare, p, {{"glare_lux", lux}, {"bloom_peak", peak}}, {}};
  bool centered_on_light = false;
  for (const auto& g : gt) {
    if (!g.is_traffic_light()) continue;
    const double radius = 0.5 * std::hypot(g.bbox.width(), g.bbox.height());
    add_bloom(cv.frame.image, g.bbox.center_x(), g.bbox.center_y(), radius, peak, {1.0, 0.92, 0.75});
    centered_on_light = true;
  }
  if (!centered_on_light) {
    const double sigma = get(p, "radius_frac", 0.08) * std::min(w, h);
    add_bloom(cv.frame.image, get(p, "center_x", 0.5) * w, get(p, "center_y", 0.6) * h, sigma, peak,
              {1.0, 0.92, 0.75});
  } else {
    eff.notes.push_back("bloom centered on traffic lights");
  }
  cv.frame.tags.insert(DegradationTag::GlarePresent);
  cv.effects.push_back(std::move(eff));
}

void render_lens_flare(Canvas& cv, const PerturbationSpec& s, std::span<const GroundTruthObject> gt,
                       const Params& p) {
  const double area = get(p, "area");
  const int ghosts = static_cast<int>(std::lround(get(p, "ghosts", 5)));
  const double strength = get(p, "strength", 90);
  const int w = cv.w(), h = cv.h();
  const double sx = get(p, "source_x", 0.85) * w, sy = get(p, "source_y", 0.15) * h;
  const double cx = 0.5 * w, cy = 0.5 * h;
  Rng rng(static_seed(s, cv.frame));
  std::vector<std::array<double, 3>> disks;  // center x, center y, relative radius
  for (int k = 0; k < ghosts; ++k) {
    const double t = 2.0 * (k + 1) / (ghosts + 1);
    disks.push_back({sx + t * (cx - sx), sy + t * (cy - sy), 0.5 + rng.uniform()});
  }
  auto render = [&](double scale) {
    Mask m(cv.n(), 0);
    for (const auto& d : disks) {
      const double r = scale * d[2];
      const int x0 = std::max(0, static_cast<int>(std::floor(d[0] - r)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(d[0] + r)));
      const int y0 = std::max(0, static_cast<int>(std::floor(d[1] - r)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(d[1] + r)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dx = x + 0.5 - d[0], dy = y + 0.5 - d[1];
          if (dx * dx + dy * dy <= r * r) m[static_cast<std::size_t>(y) * w + x] = 1;
        }
    }
    return m;
  };
  const double target = area * static_cast<double>(cv.n());
  double lo = 0.0, hi = 2.0 * std::hypot(w, h);
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (static_cast<double>(mask_count(render(mid))) < target ? lo : hi) = mid;
  }
  const Mask mask = render(hi);
  auto bytes = cv.frame.image.bytes();
  const std::array<double, 3> tint{0.55, 0.75, 1.0};
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i])
      for (int c = 0; c < 3; ++c) bytes[3 * i + c] = to_u8(bytes[3 * i + c] + strength * tint[c]);
  AppliedEffect eff{Kind::LensFlare, p,
                    {{"area", static_cast<double>(mask_count(mask)) / cv.n()}}, {}};
  double object_area = 0.0;
  for (const auto& g : gt) object_area = std::max(object_area, region_fraction(mask, w, pixel_rect(g.bbox, w, h)));
  if (!gt.empty()) eff.measured["object_area"] = object_area;
  cv.frame.tags.insert(DegradationTag::GlarePresent);
  cv.effects.push_back(std::move(eff));
}

void render_dirt(Canvas& cv, const PerturbationSpec& s, const Params& p) {
  const double coverage = get(p, "coverage");
  const double opacity = get(p, "opacity", 1.0);
  const double scale = get(p, "scale_px", 24);
  const int w = cv.w(), h = cv.h();
  const detail::PerlinNoise noise(static_seed(s, cv.frame));
  const Mask mask = top_fraction(
      w, PixelRect{0, 0, w, h}, coverage,
      [&](int x, int y) { return noise.fractal(x / scale, y / scale); }, h);
  blend_mask(cv.frame.image, mask, {70, 58, 44}, opacity);
  cv.dirt = mask;
  if (opacity >= 0.5) cv.occlude(mask);
  cv.frame.tags.insert(DegradationTag::PartiallyOccluded);
  cv.effects.push_back({Kind::Dirt, p,
                        {{"coverage", static_cast<double>(mask_count(mask)) / cv.n()}, {"opacity", opacity}},
                        {}});
}

void render_graffiti(Canvas& cv, const PerturbationSpec& s, std::span<const GroundTruthObject> gt,
                     const Params& p) {
  const double coverage = get(p, "char_coverage");
  const int w = cv.w(), h = cv.h();
  Mask mask(cv.n(), 0);
  long covered = 0, total = 0;
  int glyphs = 0, glyphs_hit = 0;
  AppliedEffect eff{Kind::Graffiti, p, {}, {}};
  for (std::size_t oi = 0; oi < gt.size(); ++oi) {
    const auto& g = gt[oi];
    if (g.is_traffic_light()) continue;
    const auto r = pixel_rect(g.bbox, w, h);
    if (r.empty()) continue;
    int n = 4;
    if (g.ocr_text) {
      n = static_cast<int>(std::count_if(g.ocr_text->begin(), g.ocr_text->end(),
                                         [](char c) { return c != ' '; }));
      n = std::clamp(n, 1, r.width());
    }
    // Uniform glyph partition of the sign box into n vertical cells.
    std::vector<int> edges(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) edges[static_cast<std::size_t>(i)] = r.x0 + static_cast<int>(std::lround(double(i) * r.width() / n));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed({static_seed(s, cv.frame), static_cast<std::uint64_t>(g.object_id.value_or(static_cast<std::int64_t>(oi)))}));
    rng.shuffle(order);
    long remaining = std::lround(coverage * static_cast<double>(r.area()));
    for (int gi : order) {
      if (remaining <= 0) break;
      const int gx0 = edges[static_cast<std::size_t>(gi)], gx1 = edges[static_cast<std::size_t>(gi) + 1];
      const long cell = static_cast<long>(gx1 - gx0) * r.height();
      long painted = 0;
      for (int y = r.y0; y < r.y1 && painted < remaining; ++y)
        for (int x = gx0; x < gx1 && painted < remaining; ++x) {
          mask[static_cast<std::size_t>(y) * w + x] = 1;
          ++painted;
        }
      if (cell > 0 && 2 * painted >= cell) ++glyphs_hit;
      remaining -= painted;
      covered += painted;
    }
    total += r.area();
    glyphs += n;
  }
  if (total == 0) eff.notes.push_back("no sign targets");
  blend_mask(cv.frame.image, mask, {22, 20, 26}, 1.0);
  cv.occlude(mask);
  if (covered > 0) cv.frame.tags.insert(DegradationTag::PartiallyOccluded);
  eff.measured["char_coverage"] = total ? static_cast<double>(covered) / static_cast<double>(total) : 0.0;
  eff.measured["glyphs_covered_fraction"] = glyphs ? static_cast<double>(glyphs_hit) / glyphs : 0.0;
  cv.effects.push_back(std::move(eff));
}

void render_vegetation(Canvas& cv, const PerturbationSpec& s, std::span<const GroundTruthObject> gt,
                       const Params& p) {
  const double coverage = get(p, "coverage");
  const int w = cv.w(), h = cv.h();
  std::vector<PixelRect> regions;
  if (s.object_aware) {
    for (const auto& g : gt) {
      const auto r = pixel_rect(g.bbox, w, h);
      if (!r.empty()) regions.push_back(r);
    }
  } else {
    regions.push_back({0, 0, w, h});
  }
  AppliedEffect eff{Kind::VegetationOcclusion, p, {}, {}};
  if (regions.empty()) eff.notes.push_back("object-aware foliage without targets");
  const detail::PerlinNoise noise(static_seed(s, cv.frame));
  Rng rng(static_seed(s, cv.frame));
  Mask mask(cv.n(), 0);
  double worst = 0.0;
  for (const auto& r : regions) {
    const bool from_left = rng.bernoulli(0.5);
    const double fs = std::max(4.0, r.width() / 4.0);
    const Mask m = top_fraction(
        w, r, coverage,
        [&](int x, int y) {
          const double t = double(x - r.x0) / std::max(1, r.width());
          return 0.65 * (from_left ? 1.0 - t : t) + 0.35 * noise.fractal(x / fs, y / fs);
        },
        h);
    for (std::size_t i = 0; i < m.size(); ++i) mask[i] |= m[i];
    worst = std::max(worst, region_fraction(m, w, r));
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask[static_cast<std::size_t>(y) * w + x]) continue;
      const double v = 0.5 + 0.5 * noise.noise(x / 3.0, y / 3.0);
      cv.frame.image.at(x, y, 0) = to_u8(30 + 30 * v);
      cv.frame.image.at(x, y, 1) = to_u8(80 + 60 * v);
      cv.frame.image.at(x, y, 2) = to_u8(22 + 20 * v);
    }
  cv.occlude(mask);
  cv.frame.tags.insert(DegradationTag::PartiallyOccluded);
  eff.measured["coverage"] = worst;
  eff.measured["full_occlusion_s"] = get(p, "full_occlusion_s");
  if (s.object_aware) eff.measured["visibility_fraction"] = 1.0 - worst;
  cv.effects.push_back(std::move(eff));
}

void render_motion_blur(Canvas& cv, const Params& p) {
  const int k = static_cast<int>(std::lround(get(p, "kernel_px")));
  const bool vertical = get(p, "vertical") >= 0.5;
  const RgbImage src = cv.frame.image;
  const int w = cv.w(), h = cv.h();
  const int lo = -(k - 1) / 2, hi = k / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int t = lo; t <= hi; ++t)
          sum += vertical ? src.at(x, clamp_index(y + t, h), c) : src.at(clamp_index(x + t, w), y, c);
        cv.frame.image.at(x, y, c) = static_cast<std::uint8_t>((sum + k / 2) / k);
      }
  cv.effects.push_back({Kind::MotionBlur, p, {{"kernel_px", static_cast<double>(k)}}, {}});
}

void render_rolling_shutter(Canvas& cv, const Params& p) {
  const double v = get(p, "velocity");
  const RgbImage src = cv.frame.image;
  const int w = cv.w(), h = cv.h();
  for (int y = 0; y < h; ++y) {
    const long shift = std::lround(v * y);
    for (int x = 0; x < w; ++x) {
      const int sx = clamp_index(static_cast<int>(x - shift), w);
      for (int c = 0; c < 3; ++c) cv.frame.image.at(x, y, c) = src.at(sx, y, c);
    }
  }
  cv.effects.push_back({Kind::RollingShutter, p,
                        {{"velocity", v}, {"max_shift_px", std::abs(v) * (h - 1)},
                         {"misalign_frames", get(p, "misalign_frames")}},
                        {}});
}

void render_focus(Canvas& cv, const Params& p) {
  const double sigma = get(p, "sigma");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= norm;
  const int w = cv.w(), h = cv.h();
  std::vector<double> tmp(3 * cv.n());
  const auto src = cv.frame.image.bytes();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 src[3 * (static_cast<std::size_t>(y) * w + clamp_index(x + i, w)) + c];
        tmp[3 * (static_cast<std::size_t>(y) * w + x) + c] = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[3 * (static_cast<std::size_t>(clamp_index(y + i, h)) * w + x) + c];
        cv.frame.image.at(x, y, c) = to_u8(acc);
      }
  cv.effects.push_back({Kind::FocusDrift, p, {{"sigma", sigma}}, {}});
}

bool is_identity(const PerturbationSpec& spec, const Params& p) {
  for (auto name : info(spec.kind).intensity)
    if (get(p, name) != 0.0) return false;
  return true;
}

void render(Canvas& cv, const PerturbationSpec& spec, std::span<const GroundTruthObject> gt) {
  validate(spec);
  const Params p = resolved_params(spec);
  if (is_identity(spec, p)) {
    cv.effects.push_back({spec.kind, p, {}, {"zero intensity; identity"}});
    return;
  }
  cv.frame.tags.erase(DegradationTag::Clean);
  switch (spec.kind) {
    case Kind::Rain: render_rain(cv, spec, p); break;
    case Kind::Fog: render_fog(cv, spec, p); break;
    case Kind::Snow: render_snow(cv, spec, p); break;
    case Kind::SunGlare: render_sun_glare(cv, spec, gt, p); break;
    case Kind::HeadlightGlare: render_headlight(cv, spec, gt, p); break;
    case Kind::LensFlare: render_lens_flare(cv, spec, gt, p); break;
    case Kind::Dirt: render_dirt(cv, spec, p); break;
    case Kind::Graffiti: render_graffiti(cv, spec, gt, p); break;
    case Kind::VegetationOcclusion: render_vegetation(cv, spec, gt, p); break;
    case Kind::MotionBlur: render_motion_blur(cv, p); break;
    case Kind::RollingShutter: render_rolling_shutter(cv, p); break;
    case Kind::FocusDrift: render_focus(cv, p); break;
  }
}

PerturbResult finish(Canvas&& cv) {
  PerturbResult out;
  out.occluded_fraction =
      cv.occlusion.empty() ? 0.0 : static_cast<double>(mask_count(cv.occlusion)) / cv.n();
  out.frame = std::move(cv.frame);
  out.effects = std::move(cv.effects);
  return out;
}

}  // namespace

std::string_view to_string(Kind k) noexcept { return info(k).name; }

Kind parse_kind(std::string_view s) {
  for (const auto& i : kind_table())
    if (i.name == s) return i.kind;
  throw ValidationError("unknown perturbation kind '" + std::string(s) + "'");
}

Stage stage_of(Kind k) noexcept { return info(k).stage; }

double clustering_error_probability(int sign_count) noexcept {
  if (sign_count <= 1) return 0.0;
  if (sign_count == 2) return kThresholds.clustering_error_2;
  if (sign_count == 3) return kThresholds.clustering_error_3;
  return kThresholds.clustering_error_4_plus;
}

std::span<const ParamRange> parameter_ranges(Kind k) { return info(k).params; }

std::vector<std::string> validation_errors(const PerturbationSpec& spec) {
  std::vector<std::string> errs;
  const auto& ki = info(spec.kind);
  for (const auto& [name, value] : spec.intensity) {
    auto it = std::find_if(ki.params.begin(), ki.params.end(),
                           [&](const ParamRange& r) { return r.name == name; });
    if (it == ki.params.end()) {
      errs.push_back(fmt::format("{}.{}: unknown parameter", ki.name, name));
      continue;
    }
    if (!std::isfinite(value) || value < it->lo || value > it->hi)
      errs.push_back(fmt::format("{}.{} = {} outside [{}, {}]", ki.name, name, value, it->lo, it->hi));
  }
  if (spec.object_aware && !ki.object_aware_allowed)
    errs.push_back(fmt::format("{}: object_aware is only valid for graffiti, vegetation_occlusion, sun_glare", ki.name));
  if (spec.kind == Kind::Graffiti && !spec.object_aware)
    errs.push_back("graffiti: requires object_aware (attaches to sign boxes)");
  if (!(spec.persistence_s > 0)) errs.push_back(fmt::format("{}.persistence_s must be positive", ki.name));
  return errs;
}

void validate(const PerturbationSpec& spec) {
  const auto errs = validation_errors(spec);
  if (errs.empty()) return;
  std::string msg = errs.front();
  for (std::size_t i = 1; i < errs.size(); ++i) msg += "; " + errs[i];
  throw ValidationError(msg);
}

Params resolved_params(const PerturbationSpec& spec) {
  Params p;
  for (const auto& r : info(spec.kind).params) p[std::string(r.name)] = get(spec.intensity, r.name, r.fallback);
  return p;
}

std::string_view to_string(Severity s) noexcept {
  return s == Severity::Critical ? "CRITICAL" : "SUB_CRITICAL";
}

std::vector<std::string> crossed_thresholds(Kind kind, const Params& m) {
  static constexpr std::string_view kContextKeys[] = {
      "visibility_fraction", "confuser_iou", "contrast_ratio", "object_area", "interaction_px",
      "glyphs_covered_fraction", "max_shift_px", "bloom_peak"};
  const auto& ki = info(kind);
  for (const auto& [key, value] : m) {
    const bool own = std::any_of(ki.params.begin(), ki.params.end(),
                                 [&](const ParamRange& r) { return r.name == key; });
    const bool ctx = std::find(std::begin(kContextKeys), std::end(kContextKeys), key) != std::end(kContextKeys);
    if (!own && !ctx) throw ValidationError(fmt::format("{}: unknown measured parameter '{}'", ki.name, key));
    if (!std::isfinite(value)) throw ValidationError(fmt::format("{}.{}: not finite", ki.name, key));
  }
  const auto& t = kThresholds;
  std::vector<std::string> out;
  auto above = [&](std::string_view key, double bound) {
    auto it = m.find(key);
    if (it != m.end() && it->second > bound) out.push_back(fmt::format("{} > {}", key, bound));
  };
  switch (kind) {
    case Kind::Rain:
      above("droplet_coverage", t.rain_droplet_coverage);
      above("streak_len_px", t.rain_streak_len_px);
      break;
    case Kind::Fog: {
      double contrast = 1.0;
      bool known = false;
      if (auto it = m.find("contrast_ratio"); it != m.end()) contrast = it->second, known = true;
      else if (auto d = m.find("density"); d != m.end()) contrast = 1.0 - d->second, known = true;
      if (known && contrast < t.fog_contrast_ratio)
        out.push_back(fmt::format("contrast_ratio < {}", t.fog_contrast_ratio));
      break;
    }
    case Kind::Snow:
      above("surface_coverage", t.snow_surface_coverage);
      above("luminance_shift", t.snow_luminance_shift);
      break;
    case Kind::SunGlare: above("saturated_area", t.sun_glare_saturated_area); break;
    case Kind::HeadlightGlare: above("glare_lux", t.headlight_glare_lux); break;
    case Kind::LensFlare:
      if (m.contains("object_area")) above("object_area", t.lens_flare_area);
      else above("area", t.lens_flare_area);
      break;
    case Kind::Dirt:
      // Dirt is critical from 20% coverage inclusive.
      if (auto it = m.find("coverage"); it != m.end() && it->second >= t.dirt_coverage)
        out.push_back(fmt::format("coverage >= {}", t.dirt_coverage));
      break;
    case Kind::Graffiti: above("char_coverage", t.graffiti_char_coverage); break;
    case Kind::VegetationOcclusion: above("full_occlusion_s", t.vegetation_full_occlusion_s); break;
    case Kind::MotionBlur: above("kernel_px", t.motion_blur_kernel_px); break;
    case Kind::RollingShutter: above("misalign_frames", t.rolling_shutter_misalign_frames); break;
    case Kind::FocusDrift: above("sigma", t.focus_sigma); break;
  }
  above("confuser_iou", t.confuser_iou);
  if (auto it = m.find("visibility_fraction"); it != m.end() && it->second < t.min_visibility)
    out.push_back(fmt::format("visibility_fraction < {}", t.min_visibility));
  return out;
}

Severity classify_severity(Kind kind, const Params& measured) {
  return crossed_thresholds(kind, measured).empty() ? Severity::SubCritical : Severity::Critical;
}

Severity classify_severity(std::string_view kind, const Params& measured) {
  return classify_severity(parse_kind(kind), measured);
}

PerturbResult apply_perturbation(const ImageFrame& frame, const PerturbationSpec& spec,
                                 std::span<const GroundTruthObject> gt) {
  Canvas cv{frame, {}, {}, {}, {}};
  render(cv, spec, gt);
  return finish(std::move(cv));
}

PerturbResult CompositeTransform::apply(const ImageFrame& frame,
                                        std::span<const GroundTruthObject> gt) const {
  Canvas cv{frame, {}, {}, {}, {}};
  for (const auto& spec : specs_) render(cv, spec, gt);
  if (!cv.dirt.empty() && !cv.streaks.empty()) {
    // Water running over a dirty lens leaves muddy streaks inside the dirt.
    Mask both(cv.n(), 0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < both.size(); ++i)
      if (cv.dirt[i] && cv.streaks[i]) both[i] = 1, ++count;
    blend_mask(cv.frame.image, both, {128, 108, 80}, 0.5);
    for (auto& e : cv.effects)
      if (e.kind == Kind::Rain || e.kind == Kind::Dirt) {
        e.notes.push_back("interaction: rain streaks over dirt mask");
        e.measured["interaction_px"] = static_cast<double>(count);
      }
  }
  return finish(std::move(cv));
}

std::vector<std::string> CompositeTransform::order() const {
  std::vector<std::string> out;
  for (const auto& s : specs_) out.emplace_back(to_string(s.kind));
  return out;
}

CompositeTransform compose_compound(std::vector<PerturbationSpec> specs) {
  if (specs.empty()) throw CompositionError("nothing to compose");
  int geometric = 0;
  for (const auto& s : specs) {
    validate(s);
    if (s.kind == Kind::RollingShutter) ++geometric;
  }
  if (geometric > 1) throw CompositionError("at most one geometric distortion (rolling_shutter) per composite");
  std::stable_sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) {
    if (stage_of(a.kind) != stage_of(b.kind)) return stage_of(a.kind) < stage_of(b.kind);
    return a.kind < b.kind;
  });
  return CompositeTransform(std::move(specs));
}

std::int64_t PerturbationSchedule::onset_frame() const noexcept {
  std::int64_t best = frame_count;
  for (const auto& e : entries) best = std::min(best, e.onset_frame);
  return best;
}

std::int64_t PerturbationSchedule::offset_frame() const noexcept {
  std::int64_t best = 0;
  for (const auto& e : entries) best = std::max(best, e.offset_frame);
  return best;
}

bool PerturbationSchedule::active(std::int64_t frame) const noexcept {
  for (const auto& e : entries)
    if (frame >= 0 && frame < frame_count && e.envelope[static_cast<std::size_t>(frame)] > 0) return true;
  return false;
}

std::vector<PerturbationSpec> PerturbationSchedule::resolved_at(std::int64_t frame) const {
  std::vector<PerturbationSpec> out;
  if (frame < 0 || frame >= frame_count) return out;
  for (const auto& e : entries) {
    const double env = e.envelope[static_cast<std::size_t>(frame)];
    if (env <= 0) continue;
    PerturbationSpec s = e.spec;
    const auto& ki = info(s.kind);
    Params p = resolved_params(e.spec);
    for (auto name : ki.intensity) {
      auto range = std::find_if(ki.params.begin(), ki.params.end(),
                                [&](const ParamRange& r) { return r.name == name; });
      double v = env * p[std::string(name)];
      if (range->integral) v = std::round(v);
      p[std::string(name)] = v;
    }
    s.intensity = std::move(p);
    out.push_back(std::move(s));
  }
  return out;
}

PerturbationSchedule schedule_sequence(std::int64_t frame_count, std::span<const PerturbationSpec> specs,
                                       double fps, std::uint64_t seed, const ScheduleOptions& options) {
  if (!(fps > 0)) throw ValidationError("fps must be positive");
  if (frame_count <= 0) throw ValidationError("sequence must have frames");
  if (!(options.max_rate > 0 && options.max_rate <= 1)) throw ValidationError("max_rate must lie in (0, 1]");
  PerturbationSchedule sched;
  sched.frame_count = frame_count;
  sched.fps = fps;
  sched.max_rate = options.max_rate;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    validate(specs[i]);
    const auto active = static_cast<std::int64_t>(std::llround(specs[i].persistence_s * fps));
    if (active > frame_count)
      throw ValidationError(fmt::format("{}: persistence {} s ({} frames) exceeds sequence of {} frames",
                                        to_string(specs[i].kind), specs[i].persistence_s, active, frame_count));
    const std::int64_t len = std::max<std::int64_t>(active, 1);
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(i)}));
    ScheduleEntry e;
    e.spec = specs[i];
    e.onset_frame = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(frame_count - len + 1)));
    e.offset_frame = e.onset_frame + len;
    e.envelope.assign(static_cast<std::size_t>(frame_count), 0.0);
    for (std::int64_t k = 0; k < len; ++k) {
      const double ramp_in = (k + 1) * options.max_rate;
      const double ramp_out = (len - k) * options.max_rate;
      e.envelope[static_cast<std::size_t>(e.onset_frame + k)] = std::min({1.0, ramp_in, ramp_out});
    }
    sched.entries.push_back(std::move(e));
  }
  return sched;
}

PerturbResult apply_scheduled(const ImageFrame& frame, const PerturbationSchedule& schedule,
                              std::span<const GroundTruthObject> gt) {
  std::vector<PerturbationSpec> active;
  for (auto& s : schedule.resolved_at(frame.frame_index))
    if (s.applies_to(frame.stream)) active.push_back(std::move(s));
  if (active.empty()) return {frame, {}, 0.0};
  return compose_compound(std::move(active)).apply(frame, gt);
}

namespace {
std::string_view to_string(StreamTarget t) {
  switch (t) {
    case StreamTarget::Both: return "both";
    case StreamTarget::Mid: return "mid";
    case StreamTarget::Long: return "long";
  }
  return "both";
}
StreamTarget parse_target(std::string_view s) {
  if (s == "both") return StreamTarget::Both;
  if (s == "mid" || s == "MID") return StreamTarget::Mid;
  if (s == "long" || s == "LONG") return StreamTarget::Long;
  throw ValidationError("unknown stream target '" + std::string(s) + "'");
}
}  // namespace

nlohmann::json to_json(const PerturbationSpec& spec) {
  nlohmann::json j{{"kind", to_string(spec.kind)},
                   {"intensity", nlohmann::json::object()},
                   {"object_aware", spec.object_aware},
                   {"persistence_s", spec.persistence_s},
                   {"rng_seed", spec.rng_seed},
                   {"streams", to_string(spec.streams)}};
  for (const auto& [k, v] : spec.intensity) j["intensity"][k] = v;
  if (spec.time_of_day_h) j["time_of_day_h"] = *spec.time_of_day_h;
  return j;
}

PerturbationSpec spec_from_json(const nlohmann::json& j) {
  PerturbationSpec s;
  try {
    s.kind = parse_kind(j.at("kind").get<std::string>());
    if (j.contains("intensity"))
      for (const auto& [k, v] : j["intensity"].items()) s.intensity[k] = v.get<double>();
    s.object_aware = j.value("object_aware", false);
    s.persistence_s = j.value("persistence_s", 2.8);
    s.rng_seed = j.value("rng_seed", std::uint64_t{0});
    s.streams = parse_target(j.value("streams", std::string("both")));
    if (j.contains("time_of_day_h") && !j["time_of_day_h"].is_null())
      s.time_of_day_h = j["time_of_day_h"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("perturbation spec: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const AppliedEffect& e) {
  nlohmann::json j{{"kind", to_string(e.kind)}, {"params", e.params}, {"measured", e.measured},
                   {"notes", e.notes}};
  j["severity"] = to_string(classify_severity(e.kind, e.measured.empty() ? e.params : e.measured));
  return j;
}

std::vector<PerturbationSpec> suite_from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() ? j.at("perturbations") : j;
  if (!list.is_array()) throw ValidationError("perturbation suite must be a list");
  std::vector<PerturbationSpec> out;
  for (const auto& item : list) out.push_back(spec_from_json(item));
  return out;
}

}  // namespace dfov::perturb
