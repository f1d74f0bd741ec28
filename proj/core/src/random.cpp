#include "qmc/random.hpp"

#include <cmath>

namespace qmc {

double sample_erlang(Engine& rng, int shape, double scale) {
  if (shape <= 0) return 0.0;
  if (shape <= 12) {
    double product = 1.0;
    for (int i = 0; i < shape; ++i) product *= 1.0 - uniform01(rng);
    return -scale * std::log(product);
  }
  // Marsaglia & Tsang (2000).
  const double d = static_cast<double>(shape) - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = standard_normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = uniform01(rng);
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

}  // namespace qmc
