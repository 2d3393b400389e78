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

#include "dfov/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "dfov/errors.hpp"
#include "dfov/rng.hpp"

namespace dfov::metrics {

namespace {

double safe_iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  return iou(a, b);
}

std::vector<std::size_t> confidence_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  return order;
}

}  // namespace

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                             double iou_thresh, bool class_aware) {
  MatchResult out;
  std::vector<bool> taken(gts.size());
  for (std::size_t di : confidence_order(dets)) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi] || (class_aware && gts[gi].class_id != dets[di].class_id)) continue;
      const double v = safe_iou(dets[di].bbox, gts[gi].bbox);
      if (v >= iou_thresh && v > best_iou) {
        best = gi;
        best_iou = v;
      }
    }
    if (best) {
      taken[*best] = true;
      out.matches.push_back({di, *best, best_iou});
    } else {
      out.false_positives.push_back(di);
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi)
    if (!taken[gi]) out.missed.push_back(gi);
  return out;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

double average_precision(std::span<const std::pair<double, bool>> ranked, long num_gt) {
  if (num_gt <= 0) throw DomainError("average precision needs at least one ground-truth object");
  const std::size_t n = ranked.size();
  std::vector<double> precision(n), recall(n);
  long tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ranked[i].second;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

MapResult compute_map(std::span<const ImageRecord> images, int k, std::span<const double> thresholds) {
  std::vector<double> thr(thresholds.begin(), thresholds.end());
  if (thr.empty()) thr = coco_thresholds();
  std::vector<long> num_gt(static_cast<std::size_t>(k), 0);
  for (const auto& img : images)
    for (const auto& g : img.gt)
      if (g.class_id >= 0 && g.class_id < k) ++num_gt[static_cast<std::size_t>(g.class_id)];
  MapResult out;
  const bool any = std::any_of(num_gt.begin(), num_gt.end(), [](long n) { return n > 0; });
  if (!any) return out;

  auto ap_at = [&](double t) {
    std::vector<std::vector<std::pair<double, bool>>> ranked(static_cast<std::size_t>(k));
    for (const auto& img : images) {
      const auto m = match_detections(img.detections, img.gt, t, true);
      std::vector<bool> tp(img.detections.size());
      for (const auto& mm : m.matches) tp[mm.det] = true;
      for (std::size_t di : confidence_order(img.detections)) {
        const auto& d = img.detections[di];
        if (d.class_id >= 0 && d.class_id < k) ranked[static_cast<std::size_t>(d.class_id)].push_back({d.confidence, tp[di]});
      }
    }
    std::map<int, double> ap;
    for (int c = 0; c < k; ++c) {
      if (num_gt[static_cast<std::size_t>(c)] == 0) continue;
      auto& r = ranked[static_cast<std::size_t>(c)];
      std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      ap[c] = average_precision(r, num_gt[static_cast<std::size_t>(c)]);
    }
    return ap;
  };

  std::map<int, double> sums;
  for (double t : thr)
    for (const auto& [c, v] : ap_at(t)) sums[c] += v;
  out.ap50_per_class = ap_at(0.5);
  double m = 0.0, m50 = 0.0;
  for (const auto& [c, s] : sums) {
    out.ap_per_class[c] = s / static_cast<double>(thr.size());
    m += out.ap_per_class[c];
    m50 += out.ap50_per_class[c];
  }
  out.map = m / static_cast<double>(sums.size());
  out.map50 = m50 / static_cast<double>(sums.size());
  return out;
}

std::string_view to_string(Outcome o) noexcept {
  switch (o) {
    case Outcome::Correct: return "correct";
    case Outcome::Misclassified: return "misclassified";
    case Outcome::Missed: return "missed";
  }
  return "missed";
}

std::vector<ObjectResult> classify_objects(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                                           double iou_thresh) {
  std::vector<ObjectResult> out(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) out[i].true_class = gts[i].class_id;
  for (const auto& m : match_detections(dets, gts, iou_thresh).matches) {
    auto& r = out[m.gt];
    r.predicted = dets[m.det].class_id;
    r.confidence = dets[m.det].confidence;
    r.outcome = *r.predicted == r.true_class ? Outcome::Correct : Outcome::Misclassified;
  }
  return out;
}

AsrResult compute_asr(std::span<const FrameOutcome> clean, std::span<const FrameOutcome> perturbed) {
  if (clean.size() != perturbed.size()) throw ValidationError("clean and perturbed runs differ in length");
  AsrResult r;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& c = clean[i];
    const auto& p = perturbed[i];
    if (c.frame_index != p.frame_index || c.objects.size() != p.objects.size())
      throw ValidationError(fmt::format("runs are not paired at frame {}", p.frame_index));
    if (!p.active) continue;
    if (!c.scored || !p.scored) {
      ++r.unscored_frames;
      continue;
    }
    ++r.active_frames;
    bool hit = false;
    for (std::size_t j = 0; j < p.objects.size(); ++j) {
      ++r.total_objects;
      if (c.objects[j].outcome != Outcome::Correct || p.objects[j].outcome == Outcome::Correct) continue;
      ++r.attacked;
      hit = true;
      if (p.objects[j].outcome == Outcome::Missed) ++r.misses;
      else ++r.flips;
      r.events.push_back({p.objects[j].true_class, p.objects[j].predicted});
    }
    r.attacked_frames += hit;
  }
  if (r.total_objects == 0) throw DomainError("no perturbed objects; ASR is undefined");
  r.asr = 100.0 * static_cast<double>(r.attacked) / static_cast<double>(r.total_objects);
  r.asr_flip_only = 100.0 * static_cast<double>(r.flips) / static_cast<double>(r.total_objects);
  r.asr_frames = 100.0 * static_cast<double>(r.attacked_frames) / static_cast<double>(r.active_frames);
  return r;
}

ConfusionTally::ConfusionTally(int k) : k_(k), counts_(Eigen::MatrixXd::Zero(k + 1, k + 1)) {
  if (k < 0) throw ValidationError("negative class count");
}

void ConfusionTally::add(int true_class, std::optional<int> predicted, double count) {
  const int p = predicted.value_or(k_);
  if (true_class < 0 || true_class >= k_ || p < 0 || p > k_)
    throw ValidationError(fmt::format("confusion cell ({}, {}) outside K = {}", true_class, p, k_));
  counts_(true_class, p) += count;
}

void ConfusionTally::add_false_positive(int predicted, double count) {
  if (predicted < 0 || predicted >= k_) throw ValidationError("false positive class out of range");
  counts_(k_, predicted) += count;
}

ConfusionTally& ConfusionTally::operator+=(const ConfusionTally& o) {
  if (o.k_ != k_) throw ValidationError("cannot merge tallies over different vocabularies");
  counts_ += o.counts_;
  return *this;
}

Eigen::MatrixXd ConfusionTally::rates() const {
  const double t = total();
  return t > 0 ? Eigen::MatrixXd(counts_ / t) : Eigen::MatrixXd::Zero(k_ + 1, k_ + 1);
}

void tally_frame(ConfusionTally& tally, std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                 double iou_thresh) {
  const int k = tally.num_classes();
  const auto m = match_detections(dets, gts, iou_thresh);
  for (const auto& mm : m.matches)
    if (gts[mm.gt].class_id >= 0 && gts[mm.gt].class_id < k) tally.add(gts[mm.gt].class_id, dets[mm.det].class_id);
  for (auto g : m.missed)
    if (gts[g].class_id >= 0 && gts[g].class_id < k) tally.add(gts[g].class_id, std::nullopt);
  for (auto d : m.false_positives) tally.add_false_positive(dets[d].class_id);
}

void SeverityMatrix::validate() const {
  if (w.rows() != w.cols() || w.rows() < 2) throw ValidationError("severity matrix must be square (K+1)x(K+1)");
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (!(w(i, j) >= 0.0 && w(i, j) <= 1.0))
        throw ValidationError(fmt::format("severity weight ({}, {}) = {} outside [0, 1]", i, j, w(i, j)));
      if (i == j && w(i, j) != 0.0) throw ValidationError(fmt::format("severity diagonal ({}, {}) must be 0", i, i));
    }
}

SeverityMatrix default_mutcd(const ClassVocabulary& v) {
  const int k = v.size();
  SeverityMatrix s;
  s.w = Eigen::MatrixXd::Constant(k + 1, k + 1, 0.5);
  s.w.row(k).setConstant(0.2);
  s.w.diagonal().setZero();
  auto idx = [&](std::string_view n) { return v.index_of(n); };
  auto set = [&](std::optional<int> a, std::optional<int> b, double w) {
    if (a && b) s.w(*a, *b) = w;
  };
  const auto stop = idx("stop_sign"), red = idx("traffic_light_red"), green = idx("traffic_light_green"),
             yellow = idx("traffic_light_yellow"), speed = idx("speed_limit"), one_way = idx("one_way");
  for (auto go : {green, speed, one_way}) set(stop, go, 1.0);
  set(red, green, 1.0);
  set(green, red, 0.40);
  set(yellow, red, 0.55);
  set(yellow, green, 0.55);
  set(red, yellow, 0.55);
  set(green, yellow, 0.55);
  if (stop) s.w(*stop, k) = 0.9;
  if (red) s.w(*red, k) = 0.9;
  s.provenance = "DEFAULT_MUTCD";
  return s;
}

namespace {
int severity_index(std::string_view name, const ClassVocabulary& v, bool column) {
  if (column && name == "<miss>") return v.size();
  if (!column && name == "<background>") return v.size();
  if (auto i = v.index_of(name)) return *i;
  throw ValidationError(fmt::format("severity matrix names unknown class '{}'", name));
}
}  // namespace

SeverityMatrix severity_from_json(const nlohmann::json& j, const ClassVocabulary& v) {
  SeverityMatrix s = default_mutcd(v);
  s.provenance = j.value("provenance", std::string("user-supplied"));
  try {
    if (j.contains("classes") && j["classes"].get<std::vector<std::string>>() != v.names())
      throw ValidationError("severity matrix classes do not match the vocabulary");
    for (const auto& [row, cols] : j.at("weights").items())
      for (const auto& [col, w] : cols.items())
        s.w(severity_index(row, v, false), severity_index(col, v, true)) = w.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("severity matrix: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const SeverityMatrix& s, const ClassVocabulary& v) {
  nlohmann::json weights = nlohmann::json::object();
  const int k = v.size();
  for (int i = 0; i <= k; ++i) {
    const std::string row = i == k ? "<background>" : v.name(i);
    for (int j = 0; j <= k; ++j) {
      if (i == j) continue;
      weights[row][j == k ? "<miss>" : v.name(j)] = s.w(i, j);
    }
  }
  return {{"provenance", s.provenance}, {"classes", v.names()}, {"weights", weights}};
}

double risk_cost(const Eigen::MatrixXd& rates, const SeverityMatrix& s) {
  if (rates.rows() != s.w.rows() || rates.cols() != s.w.cols())
    throw ValidationError(fmt::format("severity matrix is {}x{} but the tally is {}x{}", s.w.rows(), s.w.cols(),
                                      rates.rows(), rates.cols()));
  return (rates.array() * s.w.array()).sum();
}

Risk compute_risk(const ConfusionTally& tally, const SeverityMatrix& s, std::optional<double> map) {
  const Eigen::MatrixXd rates = tally.rates();
  Risk r;
  r.risk_cost = risk_cost(rates, s);
  if (map) r.rw_map = *map * (1.0 - r.risk_cost);
  const double top = s.w.maxCoeff();
  if (top > 0) r.cfr = (s.w.array() == top).select(rates.array(), 0.0).sum();
  return r;
}

double rw_asr(const AsrResult& asr, const SeverityMatrix& s) {
  if (asr.total_objects == 0) throw DomainError("no perturbed objects; RW-ASR is undefined");
  const int k = s.num_classes();
  double sum = 0.0;
  for (const auto& e : asr.events) {
    if (e.true_class < 0 || e.true_class >= k) continue;
    sum += s.w(e.true_class, e.predicted.value_or(k));
  }
  return 100.0 * sum / static_cast<double>(asr.total_objects);
}

double stability(std::span<const double> c) {
  if (c.empty()) return 0.0;
  const double n = static_cast<double>(c.size());
  const double mu = std::accumulate(c.begin(), c.end(), 0.0) / n;
  if (!(mu > 0)) return 0.0;
  double ss = 0.0;
  for (double v : c) ss += (v - mu) * (v - mu);
  return std::max(0.0, 1.0 - std::sqrt(ss / n) / mu);
}

double flip_rate(std::span<const int> classes) {
  if (classes.empty()) return 0.0;
  long changes = 0;
  for (std::size_t i = 1; i < classes.size(); ++i) changes += classes[i] != classes[i - 1];
  return 100.0 * static_cast<double>(changes) / static_cast<double>(classes.size());
}

MtcdResult compute_mtcd(std::span<const ObjectTimeline> objects, std::span<const std::int64_t> offsets, double fps) {
  if (!(fps > 0)) throw ValidationError("fps must be positive");
  MtcdResult r;
  for (const auto off : offsets)
    for (const auto& o : objects) {
      const auto n = static_cast<std::int64_t>(o.voted.size());
      if (off < 0 || off >= n) continue;
      std::int64_t delay = n - off;
      bool recovered = false;
      for (std::int64_t f = off; f < n; ++f) {
        const auto& v = o.voted[static_cast<std::size_t>(f)];
        if (v && *v == o.true_class) {
          delay = f - off;
          recovered = true;
          break;
        }
      }
      ++r.events;
      r.censored += !recovered;
      r.delays.push_back(delay);
    }
  if (r.events > 0) {
    r.mean_frames = static_cast<double>(std::accumulate(r.delays.begin(), r.delays.end(), std::int64_t{0})) /
                    static_cast<double>(r.events);
    r.mean_seconds = r.mean_frames / fps;
  }
  return r;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ValidationError("quantile of an empty sample");
  if (!(q >= 0 && q <= 1)) throw ValidationError("quantile level outside [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Interval bootstrap_ci(std::span<const double> samples, std::uint64_t seed, int resamples, double level) {
  if (samples.size() < 2) throw ValidationError("bootstrap needs at least two samples");
  if (resamples < 1) throw ValidationError("bootstrap needs at least one resample");
  if (!(level > 0 && level < 1)) throw ValidationError("confidence level must lie in (0, 1)");
  Rng rng(seed);
  const auto n = samples.size();
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += samples[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  const double a = (1.0 - level) / 2.0;
  return {quantile(means, a), quantile(means, 1.0 - a)};
}

Interval bootstrap_ratio_ci(std::span<const double> num, std::span<const double> den, std::uint64_t seed,
                            int resamples, double level) {
  if (num.size() != den.size()) throw ValidationError("ratio bootstrap needs paired numerators and denominators");
  if (num.size() < 2) throw ValidationError("bootstrap needs at least two samples");
  if (resamples < 1) throw ValidationError("bootstrap needs at least one resample");
  if (!(level > 0 && level < 1)) throw ValidationError("confidence level must lie in (0, 1)");
  Rng rng(seed);
  const auto n = num.size();
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    double sn = 0.0, sd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = rng.below(n);
      sn += num[j];
      sd += den[j];
    }
    if (sd > 0) stats.push_back(sn / sd);
  }
  if (stats.empty()) throw DomainError("every resample has a zero denominator");
  const double a = (1.0 - level) / 2.0;
  return {quantile(stats, a), quantile(stats, 1.0 - a)};
}

TTest paired_ttest(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() != b.size()) throw ValidationError("paired t-test needs equal-length samples");
  if (a.size() < 2) throw ValidationError("paired t-test needs at least two pairs");
  TTest r;
  r.n = a.size();
  const double n = static_cast<double>(r.n);
  std::vector<double> d(r.n);
  for (std::size_t i = 0; i < r.n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  double scale = 0.0;
  for (double v : d) scale = std::max(scale, std::abs(v));
  if (sd <= 1e-12 * std::max(1.0, scale)) {
    r.exact = true;
    if (mean == 0.0 || std::abs(mean) <= 1e-12 * std::max(1.0, scale)) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
  } else {
    r.t = mean / (sd / std::sqrt(n));
    const boost::math::students_t dist(n - 1.0);
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  }
  r.significant = r.p < alpha;
  return r;
}

}  // namespace dfov::metrics
