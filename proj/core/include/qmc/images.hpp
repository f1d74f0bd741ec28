#pragma once

#include <cstdint>
#include <string_view>

#include "qmc/types.hpp"

namespace qmc {

/// Unit of pixel values in a reconstructed image.
enum class Domain {
  counts,          // net EMCCD reading per frame
  counts_squared,  // covariance of readings
  photons,         // incident photons per frame
  photons_squared, // covariance in photon units (= coincidences per frame)
  model,           // analytic oracle, arbitrary scale
};

enum class Estimator { covariance, shifted_product, classical_mean, oracle };

std::string_view to_string(Domain d) noexcept;
std::string_view to_string(Estimator e) noexcept;

/// Reconstructed G(2) estimate on the left-region pixel grid. Pixels with no
/// registered partner have valid == 0 and value 0.
struct CoincidenceImage {
  Image values;
  LabelImage valid;
  std::uint64_t n_frames = 0;
  Estimator estimator = Estimator::covariance;
  Domain domain = Domain::counts_squared;
};

/// G(1) estimate: mean left-region intensity.
struct ClassicalImage {
  Image values;
  std::uint64_t n_frames = 0;
  Domain domain = Domain::counts;
};

}  // namespace qmc
