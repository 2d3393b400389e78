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

#include "dfov/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <fmt/format.h>

#include "dfov/errors.hpp"
#include "dfov/rng.hpp"
#include "noise.hpp"

namespace dfov::synth {

namespace {

using Color = std::array<double, 3>;

struct Prop {
  int class_id;
  std::string category;
  std::optional<SignalState> signal;
  double cx, cy, w, h;
  double vx, vy, growth;
};

Box prop_box(const Prop& p, int t) {
  const double s = 1.0 + p.growth * t;
  const double cx = p.cx + p.vx * t, cy = p.cy + p.vy * t;
  return {cx - 0.5 * p.w * s, cy - 0.5 * p.h * s, cx + 0.5 * p.w * s, cy + 0.5 * p.h * s};
}

/// Color of a prop at normalized box position (u, v) in [0, 1)^2.
Color prop_color(const Prop& p, double u, double v) {
  const bool border = u < 0.15 || u > 0.85 || v < 0.15 || v > 0.85;
  const std::string& c = p.category;
  if (c == "stop_sign") return (border || (v > 0.42 && v < 0.58 && u > 0.25 && u < 0.75)) ? Color{235, 235, 235} : Color{200, 22, 30};
  if (c == "speed_limit") {
    if (border) return {20, 20, 20};
    const bool digit = v > 0.3 && v < 0.8 && ((u > 0.25 && u < 0.42) || (u > 0.58 && u < 0.75));
    return digit ? Color{25, 25, 25} : Color{240, 240, 240};
  }
  if (c == "one_way") return (v > 0.38 && v < 0.62 && u > 0.18 && u < 0.82) ? Color{245, 245, 245} : Color{15, 15, 15};
  if (c == "yield") return border ? Color{210, 20, 35} : Color{245, 245, 245};
  if (p.signal) {
    const double lamp_v = *p.signal == SignalState::Red ? 1.0 / 6 : *p.signal == SignalState::Yellow ? 0.5 : 5.0 / 6;
    const double du = (u - 0.5) / 0.38, dv = (v - lamp_v) / 0.13;
    if (du * du + dv * dv <= 1.0) {
      if (*p.signal == SignalState::Red) return {255, 40, 30};
      if (*p.signal == SignalState::Yellow) return {255, 200, 20};
      return {40, 255, 120};
    }
    return {28, 28, 30};
  }
  return border ? Color{30, 30, 30} : Color{220, 220, 220};
}

Color background(const detail::PerlinNoise& noise, double x, double y, int w, int h, OddTag odd) {
  const double horizon = 0.42 * h;
  const double n = noise.fractal(x / 14.0, y / 14.0, 3);
  Color c;
  if (y < horizon) {
    const double g = y / horizon;
    c = {120 + 50 * g + 25 * n, 150 + 40 * g + 25 * n, 190 + 30 * g + 20 * n};
  } else {
    const double lane = std::abs(x - 0.5 * w) < 0.01 * w + 1.0 && std::fmod(y, 12.0) < 6.0 ? 110.0 : 0.0;
    c = {95 + 35 * n + lane, 95 + 35 * n + lane, 100 + 35 * n + lane};
  }
  double gain = 1.0;
  if (odd == OddTag::Night) gain = 0.35;
  if (odd == OddTag::Rainy) gain = 0.8;
  for (auto& v : c) v = std::clamp(v * gain, 0.0, 255.0);
  return c;
}

std::uint8_t u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

io::LoadedSequence generate_sequence(const std::string& seq_id, const SceneOptions& o, const ClassVocabulary& vocab) {
  if (o.width < 32 || o.height < 32) throw ValidationError("synthetic frames must be at least 32 x 32");
  if (o.frames < 1 || o.objects < 0 || !(o.fps > 0)) throw ValidationError("invalid synthetic scene options");
  if (!(o.long_scale > 0 && o.long_scale <= 1)) throw ValidationError("long_scale must lie in (0, 1]");
  const int w = o.width, h = o.height;
  Rng rng(mix_seed({o.seed, hash_string(seq_id)}));
  const detail::PerlinNoise noise(rng.next());
  const FovMap fov = FovMap::centered(w, h, o.long_scale);

  // Props live in mid pixels inside the long camera's view, one per slot.
  const double x0 = fov.offset_x, y0 = fov.offset_y;
  const double vw = o.long_scale * w, vh = o.long_scale * h;
  std::vector<Prop> props;
  for (int i = 0; i < o.objects; ++i) {
    Prop p;
    p.class_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab.size())));
    p.category = vocab.name(p.class_id);
    if (p.category == "traffic_light_red") p.signal = SignalState::Red;
    if (p.category == "traffic_light_green") p.signal = SignalState::Green;
    if (p.category == "traffic_light_yellow") p.signal = SignalState::Yellow;
    const double size = std::min(vw / (o.objects + 1), vh * 0.5) * rng.uniform(0.55, 0.75);
    p.w = p.signal ? size * 0.5 : size;
    p.h = p.signal ? size * 1.2 : size;
    const double slot = vw / std::max(1, o.objects);
    p.cx = x0 + slot * (i + 0.5) + rng.uniform(-0.1, 0.1) * slot;
    p.cy = y0 + vh * rng.uniform(0.3, 0.55);
    p.vx = rng.uniform(-0.02, 0.02);
    p.vy = rng.uniform(-0.01, 0.01);
    p.growth = rng.uniform(0.0, 0.5) / o.frames;
    props.push_back(std::move(p));
  }

  RgbImage bg_mid(w, h), bg_long(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Color m = background(noise, x + 0.5, y + 0.5, w, h, o.odd);
      const double lx = fov.scale * (x + 0.5) + fov.offset_x, ly = fov.scale * (y + 0.5) + fov.offset_y;
      const Color l = background(noise, lx, ly, w, h, o.odd);
      for (int c = 0; c < 3; ++c) {
        bg_mid.at(x, y, c) = u8(m[static_cast<std::size_t>(c)]);
        bg_long.at(x, y, c) = u8(l[static_cast<std::size_t>(c)]);
      }
    }

  io::LoadedSequence seq;
  seq.fov = fov;
  seq.manifest.seq_id = seq_id;
  seq.manifest.odd = o.odd;
  seq.manifest.source = io::Source::SelfRecorded;
  seq.manifest.fps = o.fps;
  seq.manifest.duration_s = o.frames / o.fps;
  seq.manifest.frame_count_mid = o.frames;
  seq.manifest.frame_count_long = o.frames;
  seq.manifest.contains_target = o.objects > 0;
  const std::int64_t start_ns = 1'700'000'000'000'000'000LL + static_cast<std::int64_t>(rng.below(1'000'000'000));
  const double period_ns = 1e9 / o.fps;

  for (int t = 0; t < o.frames; ++t) {
    io::AnnotatedPair ap;
    const auto ts = start_ns + static_cast<std::int64_t>(std::llround(t * period_ns));
    for (StreamId s : {StreamId::Mid, StreamId::Long}) {
      ImageFrame f;
      f.stream = s;
      f.seq_id = seq_id;
      f.frame_index = t;
      f.timestamp_ns = ts;
      f.image = s == StreamId::Mid ? bg_mid : bg_long;
      for (std::size_t i = 0; i < props.size(); ++i) {
        const Box mid_box = clamp_box(prop_box(props[i], t), w, h);
        const Box box = s == StreamId::Mid ? mid_box : clamp_box(fov.to_long(mid_box), w, h);
        const auto r = pixel_rect(box, w, h);
        for (int y = r.y0; y < r.y1; ++y)
          for (int x = r.x0; x < r.x1; ++x) {
            const double u = (x + 0.5 - box.x_min) / box.width(), v = (y + 0.5 - box.y_min) / box.height();
            if (u < 0 || u >= 1 || v < 0 || v >= 1) continue;
            const Color c = prop_color(props[i], u, v);
            for (int ch = 0; ch < 3; ++ch) f.image.at(x, y, ch) = u8(c[static_cast<std::size_t>(ch)]);
          }
        GroundTruthObject g;
        g.bbox = box;
        g.category = props[i].category;
        g.class_id = props[i].class_id;
        g.signal_state = props[i].signal;
        g.object_id = static_cast<std::int64_t>(i);
        (s == StreamId::Mid ? ap.mid_objects : ap.long_objects).push_back(std::move(g));
      }
      (s == StreamId::Mid ? ap.frames.mid : ap.frames.lng) = std::move(f);
    }
    seq.pairs.push_back(std::move(ap));
  }
  return seq;
}

}  // namespace dfov::synth
