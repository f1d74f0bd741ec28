#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qmc/images.hpp"
#include "qmc/types.hpp"

namespace qmc {

/// Pixel-level pairing between the left region [0, W) and the right region
/// [W, 2W) of a 2W x H frame. The continuous centre is rounded once:
/// k = round(2 * center), mirror(p) = k - 1 - p.
struct Registration {
  Vec2 center;
  Pixel k;
  int width = 0;
  int height = 0;

  static Registration from_center(Vec2 center, int width, int height);

  Pixel mirror(Pixel p) const noexcept { return {k.x - 1 - p.x, k.y - 1 - p.y}; }
  /// True when the left pixel's partner lies inside the right region.
  bool has_partner(Pixel left) const noexcept;
  LabelImage valid_mask() const;
};

/// Summed L/R covariance as a function of the trial k, over
/// [origin - half_window, origin + half_window] per axis.
struct SumLandscape {
  Pixel origin;
  int half_window = 0;
  Image values;

  Pixel k_at(int i, int j) const noexcept {
    return {origin.x + i - half_window, origin.y + j - half_window};
  }
};

/// S(k) = sum over left pixels p of cov(L_p, R_{k-1-p}), each pixel centred on
/// its own mean over `frames`.
SumLandscape sum_landscape(std::span<const Frame> frames, int width, int height, Pixel origin,
                           int half_window);

struct CenterSearch {
  /// Initial guess; negative components mean (W, H/2).
  Vec2 guess{-1.0, -1.0};
  /// Half-width of the k search window (k is twice the centre).
  int half_window = 8;
  std::size_t max_frames = 1000;
  std::size_t min_frames = 1000;
  /// Robust z-score (median/MAD) the peak must reach.
  double min_z = 8.0;
};

struct CenterEstimate {
  Registration registration;
  /// Peak over the highest value outside a +-2 neighbourhood of the peak.
  double confidence = 0.0;
  double z_score = 0.0;
  SumLandscape landscape;
};

/// Throws no_signal when the landscape has no significant peak and
/// insufficient_data when fewer than min_frames frames are given.
CenterEstimate find_center(std::span<const Frame> frames, int width, int height,
                           const CenterSearch& search = {});

/// One-pass, mergeable sums over registered pixel pairs. Readings enter as
/// integers net of round(offset), so sums and merges are exact.
class CovarianceAccumulator {
 public:
  CovarianceAccumulator() = default;
  CovarianceAccumulator(const Registration& reg, double offset);

  void accumulate(const Frame& frame);
  /// Appends `later`: the covariance sums commute, the frame-shifted sums
  /// treat `later` as following this accumulator's frames.
  void merge(const CovarianceAccumulator& later);

  std::uint64_t n() const noexcept { return n_; }
  const Registration& registration() const noexcept { return reg_; }
  std::int32_t offset() const noexcept { return offset_; }
  std::size_t pair_count() const noexcept { return left_.size(); }

  const std::vector<std::int64_t>& sum_l() const noexcept { return sum_l_; }
  const std::vector<std::int64_t>& sum_r() const noexcept { return sum_r_; }
  const std::vector<std::int64_t>& sum_lr() const noexcept { return sum_lr_; }
  const std::vector<std::int64_t>& sum_shifted() const noexcept { return sum_shift_; }

  friend CoincidenceImage finalize_covariance(const CovarianceAccumulator& acc);
  friend CoincidenceImage finalize_shifted(const CovarianceAccumulator& acc);

 private:
  Registration reg_;
  std::int32_t offset_ = 0;
  std::uint64_t n_ = 0;
  std::vector<std::uint32_t> left_;   // frame index of each left pixel
  std::vector<std::uint32_t> right_;  // frame index of its partner
  std::vector<std::uint32_t> out_;    // index in the left-region image
  std::vector<std::int64_t> sum_l_, sum_r_, sum_lr_, sum_shift_;
  std::vector<std::int32_t> first_r_, last_l_;
};

/// Population covariance sum_LR/n - (sum_L/n)(sum_R/n), counts^2. Throws
/// insufficient_data for n < 2.
CoincidenceImage finalize_covariance(const CovarianceAccumulator& acc);

/// mean_i(L_i R_i) - mean_i(L_i R_{i+1}), counts^2.
CoincidenceImage finalize_shifted(const CovarianceAccumulator& acc);

CoincidenceImage covariance_image(std::span<const Frame> frames, const Registration& reg,
                                  double offset);
CoincidenceImage shifted_product_baseline(std::span<const Frame> frames, const Registration& reg,
                                          double offset);

/// counts^2 -> photons^2 (slope^2), counts -> photons (slope).
CoincidenceImage to_photons(CoincidenceImage img, double slope);

class ClassicalAccumulator {
 public:
  ClassicalAccumulator() = default;
  ClassicalAccumulator(int width, int height, double offset);

  void accumulate(const Frame& frame);
  void merge(const ClassicalAccumulator& other);
  std::uint64_t n() const noexcept { return n_; }
  ClassicalImage finalize() const;

 private:
  int width_ = 0;
  int height_ = 0;
  double offset_ = 0.0;
  std::uint64_t n_ = 0;
  std::vector<std::uint64_t> sum_;
};

/// Mean left-region reading minus the offset. Throws insufficient_data for an
/// empty stack.
ClassicalImage classical_image(std::span<const Frame> frames, int width, int height,
                               double offset);
ClassicalImage to_photons(ClassicalImage img, double slope);

}  // namespace qmc
