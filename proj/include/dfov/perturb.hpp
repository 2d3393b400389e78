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

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfov/core.hpp"

namespace dfov::perturb {

enum class Kind : std::uint8_t {
  Rain,
  Fog,
  Snow,
  SunGlare,
  HeadlightGlare,
  LensFlare,
  Dirt,
  Graffiti,
  VegetationOcclusion,
  MotionBlur,
  RollingShutter,
  FocusDrift,
};

inline constexpr std::array<Kind, 12> kAllKinds{
    Kind::Rain,     Kind::Fog,      Kind::Snow,                Kind::SunGlare,
    Kind::HeadlightGlare, Kind::LensFlare, Kind::Dirt,        Kind::Graffiti,
    Kind::VegetationOcclusion, Kind::MotionBlur, Kind::RollingShutter, Kind::FocusDrift};

std::string_view to_string(Kind k) noexcept;
Kind parse_kind(std::string_view s);

/// Canonical composition order: scene weather, optics/glare, surface
/// occlusion, then sensor/motion.
enum class Stage : std::uint8_t { Weather, Optics, Surface, Sensor };
Stage stage_of(Kind k) noexcept;

/// Critical-failure boundaries of the perturbation taxonomy. A measured value
/// strictly beyond a boundary is critical (visibility: strictly below).
struct TaxonomyThresholds {
  double rain_droplet_coverage = 0.15;
  double rain_streak_len_px = 50.0;
  double fog_contrast_ratio = 0.3;
  double snow_surface_coverage = 0.30;
  double snow_luminance_shift = 0.40;
  double sun_glare_saturated_area = 0.25;
  double headlight_glare_lux = 180.0;
  double lens_flare_area = 0.10;
  double dirt_coverage = 0.20;
  double graffiti_char_coverage = 0.15;
  double vegetation_full_occlusion_s = 2.0;
  double motion_blur_kernel_px = 7.0;
  double rolling_shutter_misalign_frames = 3.0;
  double focus_sigma = 2.5;
  double clustering_error_2 = 0.05;
  double clustering_error_3 = 0.12;
  double clustering_error_4_plus = 0.28;
  double confuser_iou = 0.3;
  double min_visibility = 0.60;
};
inline constexpr TaxonomyThresholds kThresholds{};

/// Recognition error probability from sign clustering (0 for a lone sign).
double clustering_error_probability(int sign_count) noexcept;

using Params = std::map<std::string, double, std::less<>>;

struct ParamRange {
  std::string_view name;
  double lo;
  double hi;
  double fallback;
  bool integral = false;
};

/// Documented physical range of every parameter of a kind. The first entry is
/// the primary intensity; zero there makes the transform an identity.
std::span<const ParamRange> parameter_ranges(Kind k);

enum class StreamTarget : std::uint8_t { Both, Mid, Long };

struct PerturbationSpec {
  Kind kind = Kind::Dirt;
  Params intensity;
  bool object_aware = false;
  double persistence_s = 2.8;
  std::uint64_t rng_seed = 0;
  StreamTarget streams = StreamTarget::Both;
  /// Hour of day; accepted for dusk-window studies, not used by renderers.
  std::optional<double> time_of_day_h;

  bool applies_to(StreamId s) const noexcept {
    return streams == StreamTarget::Both || (streams == StreamTarget::Mid) == (s == StreamId::Mid);
  }
};

/// Throws ValidationError naming the parameter and its bound.
void validate(const PerturbationSpec& spec);
/// Validation problems as messages instead of an exception.
std::vector<std::string> validation_errors(const PerturbationSpec& spec);
/// Intensity with unspecified parameters filled from their fallbacks.
Params resolved_params(const PerturbationSpec& spec);

enum class Severity : std::uint8_t { SubCritical, Critical };
std::string_view to_string(Severity s) noexcept;

/// Critical iff any measured parameter crosses its taxonomy boundary. Accepts
/// the kind's own parameters plus the context keys `visibility_fraction`,
/// `confuser_iou` and, for fog, `contrast_ratio` (derived from density when
/// absent). Throws ValidationError on an unknown parameter name.
Severity classify_severity(Kind kind, const Params& measured);
Severity classify_severity(std::string_view kind, const Params& measured);
/// Names of the crossed boundaries; empty when sub-critical.
std::vector<std::string> crossed_thresholds(Kind kind, const Params& measured);

struct AppliedEffect {
  Kind kind;
  Params params;
  Params measured;
  std::vector<std::string> notes;
};

struct PerturbResult {
  ImageFrame frame;
  std::vector<AppliedEffect> effects;
  /// Fraction of the frame under opaque masks (dirt, snow, foliage, graffiti).
  double occluded_fraction = 0.0;
};

/// Renders one perturbation. `spec.intensity` holds the resolved parameters
/// for this frame. Randomness derives from (rng_seed, frame_index, stream) for
/// time-varying kinds and from rng_seed alone for lens/sign-attached masks.
PerturbResult apply_perturbation(const ImageFrame& frame, const PerturbationSpec& spec,
                                 std::span<const GroundTruthObject> gt = {});

class CompositeTransform {
 public:
  explicit CompositeTransform(std::vector<PerturbationSpec> ordered) : specs_(std::move(ordered)) {}

  PerturbResult apply(const ImageFrame& frame, std::span<const GroundTruthObject> gt = {}) const;
  const std::vector<PerturbationSpec>& ordered() const noexcept { return specs_; }
  std::vector<std::string> order() const;

 private:
  std::vector<PerturbationSpec> specs_;
};

/// Orders specs canonically and checks compatibility (at most one geometric
/// distortion). Throws CompositionError.
CompositeTransform compose_compound(std::vector<PerturbationSpec> specs);

struct ScheduleOptions {
  /// Largest per-frame change of the intensity envelope (fraction of peak).
  double max_rate = 0.25;
};

struct ScheduleEntry {
  PerturbationSpec spec;
  std::int64_t onset_frame = 0;
  /// One past the last active frame.
  std::int64_t offset_frame = 0;
  /// Per-frame intensity envelope in [0, 1], one value per frame.
  std::vector<double> envelope;
};

struct PerturbationSchedule {
  std::int64_t frame_count = 0;
  double fps = 30.0;
  double max_rate = 0.25;
  std::vector<ScheduleEntry> entries;

  std::int64_t onset_frame() const noexcept;
  std::int64_t offset_frame() const noexcept;
  bool active(std::int64_t frame) const noexcept;
  /// Specs with parameters scaled by the envelope; inactive entries omitted.
  std::vector<PerturbationSpec> resolved_at(std::int64_t frame) const;
};

/// Samples a seeded onset per spec and ramps parameters in and out so the
/// envelope never changes faster than `max_rate` per frame.
PerturbationSchedule schedule_sequence(std::int64_t frame_count,
                                       std::span<const PerturbationSpec> specs, double fps,
                                       std::uint64_t seed, const ScheduleOptions& options = {});

/// Applies whatever the schedule has active at the frame, composed canonically.
PerturbResult apply_scheduled(const ImageFrame& frame, const PerturbationSchedule& schedule,
                              std::span<const GroundTruthObject> gt = {});

nlohmann::json to_json(const PerturbationSpec& spec);
PerturbationSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AppliedEffect& e);
/// A suite file: {"perturbations": [spec, ...]} or a bare list of specs.
std::vector<PerturbationSpec> suite_from_json(const nlohmann::json& j);

}  // namespace dfov::perturb
