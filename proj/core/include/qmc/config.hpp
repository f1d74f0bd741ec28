#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "qmc/optics.hpp"
#include "qmc/source_sim.hpp"

namespace qmc {

enum class EstimatorChoice { covariance, shifted, both };

EstimatorChoice parse_estimator_choice(const std::string& name);

/// ROI protocol and registration settings for analysis.
struct AnalysisParams {
  int roi_width = 4;
  int roi_height = 4;
  int jitter = 2;
  int n_placements = 10;
  /// Pixels next to a feature boundary are excluded from ROIs.
  int guard_px = 1;
  /// Empty: search for the centre.
  std::optional<Vec2> center;
};

struct RunConfig {
  SceneSpec scene;
  OpticalParams optics;
  SpdcParams spdc;
  DetectorModel detector;
  /// Absolute stray mean (photons/pixel/frame) or a multiple of the mean
  /// signal per pixel; at most one of the two may be non-zero.
  double stray_mean = 0.0;
  double stray_multiplier = 0.0;
  double stray_corr_length = 1.5;
  std::uint64_t n_frames = 10000;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "out";
  EstimatorChoice estimator = EstimatorChoice::both;
  int workers = 1;
  std::uint64_t record_frames = 0;
  AnalysisParams analysis;

  void validate() const;
};

/// INI text with [run], [scene], [optics], [spdc], [detector], [stray] and
/// [analysis] sections. Unknown sections or keys are config errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Stray mean in photons/pixel/frame after resolving the multiplier.
double resolved_stray_mean(const RunConfig& cfg, const ObjectMask& mask);

/// Mask, stray map and defaults resolved for `seed`.
SimulationSetup make_setup(const RunConfig& cfg, std::uint64_t seed);

/// Mask cells per detector pixel side; throws config unless integral.
int scene_oversample(const RunConfig& cfg);

/// Feature/background/mixed labels on the detector grid.
LabelImage detector_labels(const RunConfig& cfg, const ObjectMask& mask);

}  // namespace qmc
