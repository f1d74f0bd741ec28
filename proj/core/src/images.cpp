#include "qmc/images.hpp"

namespace qmc {

std::string_view to_string(Domain d) noexcept {
  switch (d) {
    case Domain::counts: return "counts";
    case Domain::counts_squared: return "counts^2";
    case Domain::photons: return "photons";
    case Domain::photons_squared: return "photons^2";
    case Domain::model: return "model";
  }
  return "unknown";
}

std::string_view to_string(Estimator e) noexcept {
  switch (e) {
    case Estimator::covariance: return "covariance";
    case Estimator::shifted_product: return "shifted";
    case Estimator::classical_mean: return "classical";
    case Estimator::oracle: return "oracle";
  }
  return "unknown";
}

}  // namespace qmc
