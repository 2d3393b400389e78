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

#include "dfov/temporal.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dfov/errors.hpp"
#include "dfov/scores.hpp"

namespace dfov::temporal {

RgbImage reference_checkerboard() {
  RgbImage img(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const std::uint8_t v = ((x / 8 + y / 8) % 2) ? 255 : 0;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
    }
  return img;
}

namespace {

void luma_row(const std::uint8_t* src, float* dst, int w) {
  for (int x = 0; x < w; ++x)
    dst[x] = 0.299f * src[3 * x] + 0.587f * src[3 * x + 1] + 0.114f * src[3 * x + 2];
}

struct LumaStats {
  double mean = 0, var = 0, lap_var = 0, dark = 0;
};

LumaStats luma_stats(const RgbImage& img, double dark_threshold) {
  LumaStats st;
  const int w = img.width(), h = img.height();
  if (w == 0 || h == 0) return st;
  Eigen::ArrayXf up(w), cur(w), dn(w), lap(std::max(w - 2, 0));
  double sum = 0, sum2 = 0, lsum = 0, lsum2 = 0;
  long dark = 0, lap_n = 0;
  const auto thr = static_cast<float>(dark_threshold);
  luma_row(img.row(0), cur.data(), w);
  for (int y = 0; y < h; ++y) {
    if (y + 1 < h) luma_row(img.row(y + 1), dn.data(), w);
    sum += cur.sum();
    sum2 += cur.square().sum();
    dark += (cur < thr).count();
    if (y > 0 && y + 1 < h && w > 2) {
      const auto n = w - 2;
      lap = up.segment(1, n) + dn.segment(1, n) + cur.head(n) + cur.tail(n) - 4.0f * cur.segment(1, n);
      lsum += lap.sum();
      lsum2 += lap.square().sum();
      lap_n += n;
    }
    up.swap(cur);
    cur.swap(dn);
  }
  const double n = static_cast<double>(img.pixel_count());
  st.mean = sum / n;
  st.var = std::max(0.0, sum2 / n - st.mean * st.mean);
  if (lap_n > 0) {
    const double lm = lsum / lap_n;
    st.lap_var = std::max(0.0, lsum2 / lap_n - lm * lm);
  }
  st.dark = dark / n;
  return st;
}

double default_sharpness_reference() {
  static const double ref = laplacian_variance(reference_checkerboard());
  return ref;
}

}  // namespace

double laplacian_variance(const RgbImage& image) { return luma_stats(image, 0.0).lap_var; }

FrameQuality quality_weight(const RgbImage& image, std::optional<double> provenance_occlusion,
                            const QualityOptions& options) {
  const LumaStats st = luma_stats(image, options.dark_threshold);
  const double ref = options.sharpness_reference > 0 ? options.sharpness_reference : default_sharpness_reference();
  FrameQuality q;
  q.contrast = std::clamp(std::sqrt(st.var) / 128.0, 0.0, 1.0);
  q.sharpness = std::clamp(st.lap_var / ref, 0.0, 1.0);
  q.occlusion = std::clamp(provenance_occlusion ? *provenance_occlusion : st.dark, 0.0, 1.0);
  q.weight = q.contrast * q.sharpness * (1.0 - q.occlusion);
  return q;
}

Vote weighted_vote(std::span<const WeightedScores> window) {
  if (window.empty()) throw ValidationError("cannot vote over an empty window");
  const auto k = window.front().probs.size();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(k);
  double total = 0.0;
  for (const auto& e : window) {
    if (e.probs.size() != k) throw ValidationError("window mixes class vocabularies");
    if (!(e.weight >= 0.0)) throw ValidationError("quality weights must be non-negative");
    acc += e.weight * e.probs;
    total += e.weight;
  }
  Vote v;
  if (!(total > 0.0)) {
    acc.setZero();
    for (const auto& e : window) acc += e.probs;
    total = static_cast<double>(window.size());
    v.unweighted_fallback = true;
  }
  v.scores = acc / total;
  v.class_id = static_cast<int>(argmax(acc));
  v.confidence = v.scores[v.class_id];
  return v;
}

void validate(const VotingConfig& c) {
  if (c.window < 1 || c.window % 2 == 0) throw ValidationError(fmt::format("voting window {} must be odd and >= 1", c.window));
  if (!(c.persistence_conf >= 0 && c.persistence_conf <= 1)) throw ValidationError("persistence_conf outside [0, 1]");
  if (c.persistence_frames < 1) throw ValidationError("persistence_frames must be >= 1");
  if (c.buffer_len < 0) throw ValidationError("buffer_len must be >= 0");
  if (!(c.fps > 0)) throw ValidationError("fps must be positive");
  if (!(c.association_iou > 0 && c.association_iou <= 1)) throw ValidationError("association_iou outside (0, 1]");
}

nlohmann::json to_json(const VotingConfig& c) {
  return {{"window", c.window},           {"persistence_conf", c.persistence_conf},
          {"persistence_frames", c.persistence_frames}, {"buffer_len", c.buffer_len},
          {"fps", c.fps},                 {"association_iou", c.association_iou},
          {"emit_coasting", c.emit_coasting}};
}

VotingConfig voting_config_from_json(const nlohmann::json& j) {
  VotingConfig c;
  try {
    c.window = j.value("window", c.window);
    c.persistence_conf = j.value("persistence_conf", c.persistence_conf);
    c.persistence_frames = j.value("persistence_frames", c.persistence_frames);
    c.buffer_len = j.value("buffer_len", c.buffer_len);
    c.fps = j.value("fps", c.fps);
    c.association_iou = j.value("association_iou", c.association_iou);
    c.emit_coasting = j.value("emit_coasting", c.emit_coasting);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("voting config: ") + e.what());
  }
  validate(c);
  return c;
}

std::string_view to_string(TrackStatus s) noexcept {
  switch (s) {
    case TrackStatus::Candidate: return "CANDIDATE";
    case TrackStatus::Confirmed: return "CONFIRMED";
    case TrackStatus::Coasting: return "COASTING";
    case TrackStatus::Dropped: return "DROPPED";
  }
  return "DROPPED";
}

TemporalVoter::TemporalVoter(VotingConfig config) : config_(config) { validate(config_); }

void TemporalVoter::set_status(TrackState& t, TrackStatus s, std::int64_t frame) {
  if (t.status == s) return;
  transitions_.push_back({frame, t.track_id, t.status, s});
  t.status = s;
  if (s == TrackStatus::Confirmed) t.was_confirmed = true;
}

VotedFrame TemporalVoter::push(const FrameObservation& frame) {
  if (last_frame_ && frame.frame_index <= *last_frame_)
    throw ValidationError(fmt::format("frame {} arrived after frame {}", frame.frame_index, *last_frame_));
  if (frame.scored && frame.weights.size() != frame.detections.size())
    throw ValidationError("one quality weight per detection is required");
  last_frame_ = frame.frame_index;
  const std::int64_t t = frame.frame_index;
  VotedFrame out{t, frame.scored, {}};

  auto coast = [&](TrackState& tr) {
    tr.consecutive_conf_frames = 0;
    if (tr.status != TrackStatus::Coasting) {
      set_status(tr, TrackStatus::Coasting, t);
      tr.coast_age = 1;
    } else {
      ++tr.coast_age;
    }
    if (tr.coast_age > config_.buffer_len) set_status(tr, TrackStatus::Dropped, t);
  };

  if (!frame.scored) {
    for (auto& tr : tracks_)
      if (tr.status == TrackStatus::Coasting && ++tr.coast_age > config_.buffer_len)
        set_status(tr, TrackStatus::Dropped, t);
    return out;
  }

  struct Cand {
    double iou;
    std::size_t track, det;
  };
  std::vector<Cand> cands;
  for (std::size_t ti = 0; ti < tracks_.size(); ++ti) {
    if (tracks_[ti].status == TrackStatus::Dropped) continue;
    for (std::size_t di = 0; di < frame.detections.size(); ++di) {
      const auto& b = frame.detections[di].bbox;
      if (!b.valid()) continue;
      const double v = iou(tracks_[ti].box, b);
      if (v >= config_.association_iou) cands.push_back({v, ti, di});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
  std::vector<std::optional<std::size_t>> det_track(frame.detections.size());
  std::vector<bool> track_used(tracks_.size());
  for (const auto& c : cands) {
    if (track_used[c.track] || det_track[c.det]) continue;
    track_used[c.track] = true;
    det_track[c.det] = c.track;
  }
  for (std::size_t ti = 0; ti < track_used.size(); ++ti)
    if (!track_used[ti] && tracks_[ti].status != TrackStatus::Dropped) coast(tracks_[ti]);

  for (std::size_t di = 0; di < frame.detections.size(); ++di) {
    const auto& det = frame.detections[di];
    if (!det.bbox.valid()) continue;
    if (!det_track[di]) {
      TrackState tr;
      tr.track_id = next_track_id_++;
      tr.first_frame = t;
      tr.box = det.bbox;
      transitions_.push_back({t, tr.track_id, TrackStatus::Dropped, TrackStatus::Candidate});
      tracks_.push_back(std::move(tr));
      det_track[di] = tracks_.size() - 1;
    } else {
      auto& tr = tracks_[*det_track[di]];
      if (tr.status == TrackStatus::Coasting)
        set_status(tr, tr.was_confirmed ? TrackStatus::Confirmed : TrackStatus::Candidate, t);
    }
    auto& tr = tracks_[*det_track[di]];
    tr.box = det.bbox;
    tr.last_seen_frame = t;
    tr.coast_age = 0;
    tr.history.push_back({t, det, frame.weights[di]});
    while (!tr.history.empty() && tr.history.front().frame_index <= t - config_.window) tr.history.pop_front();
    tr.consecutive_conf_frames = det.confidence > config_.persistence_conf ? tr.consecutive_conf_frames + 1 : 0;
    if (tr.status == TrackStatus::Candidate && tr.consecutive_conf_frames >= config_.persistence_frames)
      set_status(tr, TrackStatus::Confirmed, t);

    Detection voted;
    if (tr.history.size() == 1) {
      voted = det;
    } else {
      std::vector<WeightedScores> window;
      window.reserve(tr.history.size());
      for (const auto& o : tr.history) window.push_back({o.detection.scores.probs, o.weight});
      const Vote v = weighted_vote(window);
      ClassScores s;
      s.probs = v.scores;
      s.logits = v.scores.array().max(1e-300).log().matrix();
      s.temperature = 1.0;
      voted = Detection::from_scores(det.bbox, std::move(s));
    }
    voted.track_id = tr.track_id;

    if (tr.status == TrackStatus::Confirmed) {
      if (!tr.reference_class) tr.reference_class = voted.class_id;
      if (voted.class_id != *tr.reference_class) {
        if (!tr.deviation_start) tr.deviation_start = t;
      } else if (tr.deviation_start) {
        recoveries_.push_back({tr.track_id, *tr.deviation_start, t, voted.class_id});
        tr.deviation_start.reset();
      }
    }
    tr.last_voted_class = voted.class_id;
    tr.last_output = voted;
    out.detections.push_back(std::move(voted));
  }
  if (config_.emit_coasting)
    for (const auto& tr : tracks_)
      if (tr.status == TrackStatus::Coasting && tr.last_output) out.detections.push_back(*tr.last_output);
  return out;
}

SequenceVote process_sequence(std::span<const FrameObservation> frames, const VotingConfig& config) {
  TemporalVoter voter(config);
  SequenceVote out;
  out.frames.reserve(frames.size());
  for (const auto& f : frames) out.frames.push_back(voter.push(f));
  out.tracks = voter.tracks();
  out.transitions = voter.transitions();
  out.recoveries = voter.recoveries();
  return out;
}

nlohmann::json to_json(const TrackTransition& t) {
  return {{"frame", t.frame_index}, {"track", t.track_id}, {"from", to_string(t.from)}, {"to", to_string(t.to)}};
}

nlohmann::json to_json(const RecoveryEvent& e) {
  return {{"track", e.track_id},
          {"deviation_start", e.deviation_start},
          {"recovered_at", e.recovered_at},
          {"latency_frames", e.recovered_at - e.deviation_start},
          {"class", e.restored_class}};
}

}  // namespace dfov::temporal
