#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qmc/estimation.hpp"
#include "qmc/random.hpp"
#include "qmc/types.hpp"

namespace qmc {

class PairLedger;

/// (I - min) / (max - min). Throws degenerate_image when max == min.
Image normalize(const Image& image);

enum class RoiRole { object, background };

struct Roi {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  RoiRole role = RoiRole::object;

  Roi shifted(int dx, int dy) const noexcept { return {x + dx, y + dy, w, h, role}; }
  bool inside(int width, int height) const noexcept {
    return x >= 0 && y >= 0 && x + w <= width && y + h <= height;
  }
  bool overlaps(const Roi& o) const noexcept {
    return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
  }
};

/// |mean1 - mean2| / sqrt(s1^2 + s2^2) with sample (n-1) standard deviations.
/// ROIs must be disjoint, in bounds and cover at least 4 pixels each.
double cnr(const Image& image, const Roi& roi1, const Roi& roi2);
/// Same statistic on two value sets of at least 2 values each.
double cnr(std::span<const double> values1, std::span<const double> values2);

struct CnrTemplate {
  Roi object;
  Roi background{0, 0, 0, 0, RoiRole::background};
};

struct CnrOptions {
  int n_placements = 10;
  /// Each ROI moves by an independent uniform integer offset in [-jitter, jitter]^2.
  int jitter = 2;
};

struct CnrResult {
  /// CNR at the unshifted template.
  double cnr = 0.0;
  double mean = 0.0;
  /// Standard error of the mean; NaN when sem_defined is false (one placement).
  double sem = 0.0;
  bool sem_defined = false;
  std::size_t n_placements = 0;
  std::vector<double> values;
};

/// Repeated-ROI protocol. With `labels`, the object ROI must cover only
/// kLabelFeature pixels and the background ROI only kLabelBackground pixels
/// at every placement; without, ROIs only have to stay in bounds and
/// disjoint. Throws placement_infeasible when a ROI has no admissible shift.
CnrResult cnr_protocol(const Image& image, const CnrTemplate& tmpl, const CnrOptions& options,
                       Engine& rng, const LabelImage* labels = nullptr);

/// Object and background ROIs of the given size whose jitter neighbourhoods
/// hold the most admissible placements (first in raster order on ties).
CnrTemplate auto_template(const LabelImage& labels, int roi_w, int roi_h, int jitter);

/// ESF(x) = a * erf((x - x0) / w) + b.
struct EsfFit {
  double a = 0.0;
  double b = 0.0;
  double x0 = 0.0;
  double w = 0.0;
  double residual_rms = 0.0;
  double r_squared = 0.0;
  bool converged = false;
};

/// Fit thresholds; min_r_squared separates edges from noise.
struct EsfOptions {
  double min_r_squared = 0.5;
  int max_evaluations = 2000;
};

/// Samples sit at x = 0, 1, ... unless `x` is given. Throws
/// insufficient_data below 8 samples and fit_failed for a flat profile.
EsfFit fit_esf(std::span<const double> profile, std::span<const double> x = {},
               const EsfOptions& options = {});

/// 2 sqrt(ln 2) w: FWHM of the Gaussian line spread function.
double fwhm_resolution(double w);

/// y = amplitude * exp(-(x - mean)^2 / (2 sigma^2)).
struct GaussianFit {
  double amplitude = 0.0;
  double mean = 0.0;
  double sigma = 0.0;
  double residual_rms = 0.0;
  bool converged = false;

  double fwhm() const noexcept;
};

GaussianFit fit_gaussian(std::span<const double> x, std::span<const double> y);

/// Per-axis spread of the sum coordinate p_s + p_i - 2c.
struct MomentumWidth {
  double sigma_x_px = 0.0;
  double sigma_y_px = 0.0;
  double sigma_x_um = 0.0;
  double sigma_y_um = 0.0;
  double fwhm_x_um = 0.0;
  double fwhm_y_um = 0.0;
  /// Coincidence weight behind the fit (pairs for a ledger, summed
  /// covariance for a stack).
  double weight = 0.0;
};

/// From ledger ground truth. Throws insufficient_data below min_pairs.
MomentumWidth momentum_corr_width(const PairLedger& ledger, double pixel_pitch_um,
                                  std::uint64_t min_pairs = 100);

/// From a landscape centred on the registration's k (see sum_landscape).
MomentumWidth momentum_corr_width(const SumLandscape& landscape, double pixel_pitch_um);

}  // namespace qmc
