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

#include "dfov/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "dfov/rng.hpp"
#include "dfov/scores.hpp"

namespace dfov::detect {

std::string_view to_string(TransportError::Kind k) noexcept {
  switch (k) {
    case TransportError::Kind::Timeout: return "timeout";
    case TransportError::Kind::Connection: return "connection";
    case TransportError::Kind::Malformed: return "malformed";
    case TransportError::Kind::VersionMismatch: return "version_mismatch";
    case TransportError::Kind::MissingLogits: return "missing_logits";
  }
  return "unknown";
}

RegisteredDetector::RegisteredDetector(std::shared_ptr<Detector> backend, Capabilities caps)
    : backend_(std::move(backend)), caps_(std::move(caps)), serial_(std::make_shared<std::mutex>()) {}

InferResult RegisteredDetector::infer(const ImageFrame& frame) const {
  InferResult out;
  std::vector<Detection> raw;
  try {
    if (caps_.concurrent) {
      raw = backend_->infer(frame);
    } else {
      std::lock_guard lock(*serial_);
      raw = backend_->infer(frame);
    }
  } catch (const TransportError& e) {
    out.status = FrameStatus::Unscored;
    out.failure = e.kind();
    out.message = e.what();
    return out;
  }
  const int k = caps_.vocabulary.size();
  for (auto& d : raw) {
    if (d.scores.size() != k || !satisfies_invariants(d, frame.width(), frame.height())) {
      out.status = FrameStatus::Unscored;
      out.failure = TransportError::Kind::Malformed;
      out.message = fmt::format("detection violates the contract (K={}, bbox [{}, {}, {}, {}])", k,
                                d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max);
      out.detections.clear();
      return out;
    }
    if (d.confidence >= kConfidenceFloor) out.detections.push_back(std::move(d));
  }
  return out;
}

RegisteredDetector register_detector(std::shared_ptr<Detector> backend,
                                     const std::optional<ClassVocabulary>& expected) {
  if (!backend) throw ContractError("no detector backend");
  Capabilities caps = backend->capabilities();
  if (!caps.raw_logits)
    throw ContractError(fmt::format("detector '{}' exposes probabilities only; raw logits are required",
                                    caps.name));
  if (caps.vocabulary.size() == 0) throw ContractError(fmt::format("detector '{}' has no classes", caps.name));
  if (expected && !(*expected == caps.vocabulary))
    throw ContractError(fmt::format("detector '{}' class vocabulary differs from the harness", caps.name));
  return RegisteredDetector(std::move(backend), std::move(caps));
}

void validate(const SyntheticOracleConfig& c, int k) {
  auto rate = [](std::string_view name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(fmt::format("{} = {} outside [0, 1]", name, v));
  };
  rate("miss_rate_base", c.miss_rate_base);
  rate("occlusion_sensitivity", c.occlusion_sensitivity);
  rate("score_noise", c.score_noise);
  rate("miss_share", c.miss_share);
  if (!(c.localization_noise_px >= 0.0)) throw ValidationError("localization_noise_px must be >= 0");
  if (!(c.logit_scale > 0.0)) throw ValidationError("logit_scale must be positive");
  if (!(c.correlation_frames >= 0.0 && c.correlation_frames <= 1000.0))
    throw ValidationError("correlation_frames must lie in [0, 1000]");
  rate("stream_correlation", c.stream_correlation);
  if (c.perception_bits < 1 || c.perception_bits > 8) throw ValidationError("perception_bits must lie in [1, 8]");
  const auto& m = c.confusion_kernel;
  if (m.size() == 0) return;
  if (m.rows() != k || m.cols() != k)
    throw ValidationError(fmt::format("confusion_kernel is {}x{}, expected {}x{}", m.rows(), m.cols(), k, k));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if ((m.row(r).array() < 0).any() || (m.row(r).array() > 1).any())
      throw ValidationError(fmt::format("confusion_kernel row {} has entries outside [0, 1]", r));
    if (std::abs(m.row(r).sum() - 1.0) > 1e-9)
      throw ValidationError(fmt::format("confusion_kernel row {} sums to {}", r, m.row(r).sum()));
  }
}

nlohmann::json to_json(const SyntheticOracleConfig& c) {
  nlohmann::json j{{"miss_rate_base", c.miss_rate_base},
                   {"localization_noise_px", c.localization_noise_px},
                   {"occlusion_sensitivity", c.occlusion_sensitivity},
                   {"logit_scale", c.logit_scale},
                   {"seed", c.seed},
                   {"score_noise", c.score_noise},
                   {"miss_share", c.miss_share},
                   {"perception_bits", c.perception_bits},
                   {"correlation_frames", c.correlation_frames},
                   {"stream_correlation", c.stream_correlation}};
  if (c.confusion_kernel.size() > 0) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < c.confusion_kernel.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (Eigen::Index col = 0; col < c.confusion_kernel.cols(); ++col) row.push_back(c.confusion_kernel(r, col));
      rows.push_back(std::move(row));
    }
    j["confusion_kernel"] = std::move(rows);
  }
  return j;
}

SyntheticOracleConfig oracle_config_from_json(const nlohmann::json& j) {
  SyntheticOracleConfig c;
  try {
    c.miss_rate_base = j.value("miss_rate_base", c.miss_rate_base);
    c.localization_noise_px = j.value("localization_noise_px", c.localization_noise_px);
    c.occlusion_sensitivity = j.value("occlusion_sensitivity", c.occlusion_sensitivity);
    c.logit_scale = j.value("logit_scale", c.logit_scale);
    c.seed = j.value("seed", c.seed);
    c.score_noise = j.value("score_noise", c.score_noise);
    c.miss_share = j.value("miss_share", c.miss_share);
    c.perception_bits = j.value("perception_bits", c.perception_bits);
    c.correlation_frames = j.value("correlation_frames", c.correlation_frames);
    c.stream_correlation = j.value("stream_correlation", c.stream_correlation);
    if (j.contains("confusion_kernel")) {
      const auto& rows = j.at("confusion_kernel");
      const auto n = static_cast<Eigen::Index>(rows.size());
      c.confusion_kernel.resize(n, n);
      for (Eigen::Index r = 0; r < n; ++r) {
        if (rows[static_cast<std::size_t>(r)].size() != rows.size())
          throw ValidationError("confusion_kernel must be square");
        for (Eigen::Index col = 0; col < n; ++col)
          c.confusion_kernel(r, col) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)].get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic detector config: ") + e.what());
  }
  return c;
}

double measured_degradation(const RgbImage& image, const RgbImage* reference,
                            const GroundTruthObject& object, int threshold, int perception_bits) {
  if (!reference || reference->width() != image.width() || reference->height() != image.height())
    return std::clamp(object.occlusion_score, 0.0, 1.0);
  const auto r = pixel_rect(object.bbox, image.width(), image.height());
  if (r.empty()) return 0.0;
  const auto q = quantization_lut(perception_bits);
  long changed = 0;
  for (int y = r.y0; y < r.y1; ++y) {
    const auto* a = image.row(y);
    const auto* b = reference->row(y);
    for (int x = r.x0; x < r.x1; ++x) {
      int diff = 0;
      for (int c = 0; c < 3; ++c) diff = std::max(diff, std::abs(int(q[a[3 * x + c]]) - int(q[b[3 * x + c]])));
      changed += diff > threshold;
    }
  }
  return static_cast<double>(changed) / static_cast<double>(r.area());
}

namespace {

double unit_from_bits(std::uint64_t h) noexcept { return static_cast<double>(h >> 11) * 0x1.0p-53; }

/// Standard normal that is an exponentially weighted moving average of white
/// noise over the object's past frames.
double correlated_normal(std::uint64_t key, std::int64_t frame, double tau) {
  const int span = static_cast<int>(std::ceil(4.0 * tau));
  double z = 0.0, norm = 0.0;
  for (int lag = 0; lag <= span; ++lag) {
    const double w = std::exp(-lag / tau);
    const std::uint64_t h = mix_seed({key, static_cast<std::uint64_t>(frame - lag)});
    const double u1 = unit_from_bits(splitmix64(h)) + 0x1.0p-54;
    const double u2 = unit_from_bits(splitmix64(h ^ 0x9e3779b97f4a7c15ULL));
    z += w * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    norm += w * w;
  }
  return z / std::sqrt(norm);
}

double normal_cdf(double z) {
  return std::clamp(0.5 * std::erfc(-z / std::numbers::sqrt2), 0.0, std::nextafter(1.0, 0.0));
}

}  // namespace

std::vector<Detection> synthetic_infer(const ImageFrame& frame, std::span<const GroundTruthObject> gt,
                                       const SyntheticOracleConfig& config, int k,
                                       const RgbImage* reference) {
  validate(config, k);
  Rng rng(mix_seed({config.seed, hash_string(frame.seq_id), static_cast<std::uint64_t>(frame.stream),
                    static_cast<std::uint64_t>(frame.frame_index)}));
  std::vector<Detection> out;
  const double uniform = 1.0 / k;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const auto& g = gt[j];
    // Fixed draw count per object keeps later objects' randomness independent
    // of earlier outcomes.
    double u_miss = rng.uniform();
    double u_class = rng.uniform();
    const double u_score = rng.uniform();
    const double jitter[4] = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    if (config.correlation_frames > 0 || config.stream_correlation > 0) {
      const auto object = static_cast<std::uint64_t>(g.object_id.value_or(static_cast<std::int64_t>(j)));
      const std::uint64_t shared = mix_seed({config.seed, hash_string(frame.seq_id), object});
      const std::uint64_t own = mix_seed({shared, static_cast<std::uint64_t>(frame.stream) + 1});
      const double c = config.stream_correlation;
      const double tau = std::max(config.correlation_frames, 1e-9);
      auto draw = [&](std::uint64_t which) {
        double z = std::sqrt(1.0 - c) * correlated_normal(mix_seed({own, which}), frame.frame_index, tau);
        if (c > 0) z += std::sqrt(c) * correlated_normal(mix_seed({shared, which}), frame.frame_index, tau);
        return normal_cdf(z);
      };
      u_miss = draw(1);
      u_class = draw(2);
    }
    if (g.class_id < 0 || g.class_id >= k) continue;
    const auto r = pixel_rect(g.bbox, frame.width(), frame.height());
    if (r.empty()) continue;
    const double d = measured_degradation(frame.image, reference, g, 40, config.perception_bits);
    const double beta = std::clamp(config.occlusion_sensitivity * d, 0.0, 1.0);
    const double miss = std::clamp(config.miss_rate_base + config.miss_share * beta, 0.0, 1.0);
    if (u_miss < miss) continue;

    Eigen::VectorXd row = config.confusion_kernel.size() > 0
                              ? Eigen::VectorXd(config.confusion_kernel.row(g.class_id).transpose())
                              : Eigen::VectorXd::Unit(k, g.class_id);
    row = (1.0 - beta) * row + Eigen::VectorXd::Constant(k, beta * uniform);
    int cls = k - 1;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
      acc += row[i];
      if (u_class < acc) {
        cls = i;
        break;
      }
    }
    const double u = std::clamp(beta + config.score_noise * u_score, 1e-6, 0.9);
    Eigen::VectorXd s = Eigen::VectorXd::Constant(k, u * uniform);
    s[cls] += 1.0 - u;
    Eigen::VectorXd logits = config.logit_scale * s.array().max(1e-6).log().matrix();

    Box b = g.bbox;
    if (config.localization_noise_px > 0) {
      Box j{b.x_min + config.localization_noise_px * jitter[0], b.y_min + config.localization_noise_px * jitter[1],
            b.x_max + config.localization_noise_px * jitter[2], b.y_max + config.localization_noise_px * jitter[3]};
      j = clamp_box(j, frame.width(), frame.height());
      if (j.valid()) b = j;
    }
    b = clamp_box(b, frame.width(), frame.height());
    if (!b.valid()) continue;
    out.push_back(Detection::from_logits(b, std::move(logits)));
  }
  return out;
}

void TruthTable::add(const std::string& seq_id, StreamId stream, std::int64_t frame_index, FrameTruth truth) {
  entries_[{seq_id, stream, frame_index}] = std::move(truth);
}

const FrameTruth* TruthTable::find(const ImageFrame& frame) const {
  auto it = entries_.find({frame.seq_id, frame.stream, frame.frame_index});
  return it == entries_.end() ? nullptr : &it->second;
}

SyntheticOracle::SyntheticOracle(SyntheticOracleConfig config, ClassVocabulary vocabulary,
                                 std::shared_ptr<const TruthTable> truth)
    : config_(std::move(config)), vocabulary_(std::move(vocabulary)), truth_(std::move(truth)) {
  validate(config_, vocabulary_.size());
  if (!truth_) throw ConfigError("synthetic oracle needs a truth table");
}

Capabilities SyntheticOracle::capabilities() {
  return {"synthetic-oracle", vocabulary_, true, true, std::nullopt, std::nullopt};
}

std::vector<Detection> SyntheticOracle::infer(const ImageFrame& frame) {
  const FrameTruth* t = truth_->find(frame);
  if (!t)
    throw ContractError(fmt::format("no ground truth for {} {} frame {}", frame.seq_id,
                                    to_string(frame.stream), frame.frame_index));
  return synthetic_infer(frame, t->objects, config_, vocabulary_.size(), t->reference.get());
}

}  // namespace dfov::detect
