#include "qmc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>
#include <unsupported/Eigen/LevenbergMarquardt>

#include "qmc/error.hpp"
#include "qmc/optics.hpp"
#include "qmc/source_sim.hpp"

namespace qmc {

Image normalize(const Image& image) {
  require(!image.empty(), ErrorCode::degenerate_image, "cannot normalize an empty image");
  const auto [lo, hi] = std::minmax_element(image.begin(), image.end());
  const double min = *lo;
  const double max = *hi;
  require(std::isfinite(min) && std::isfinite(max), ErrorCode::degenerate_image,
          "image holds non-finite values");
  require(max > min, ErrorCode::degenerate_image, "image is constant; max == min");
  Image out = image;
  for (double& v : out) v = (v - min) / (max - min);
  return out;
}

namespace {

struct RoiStats {
  double mean = 0.0;
  double var = 0.0;
};

RoiStats value_stats(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  const double n = static_cast<double>(v.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, ss / (n - 1.0)};
}

double cnr_of(const RoiStats& a, const RoiStats& b) {
  const double den = std::sqrt(a.var + b.var);
  require(den > 0.0, ErrorCode::undefined_cnr, "both ROIs have zero variance");
  return std::abs(a.mean - b.mean) / den;
}

RoiStats roi_stats(const Image& image, const Roi& r) {
  double sum = 0.0;
  for (int y = r.y; y < r.y + r.h; ++y)
    for (int x = r.x; x < r.x + r.w; ++x) sum += image(x, y);
  const double n = static_cast<double>(r.w) * r.h;
  const double mean = sum / n;
  double ss = 0.0;
  for (int y = r.y; y < r.y + r.h; ++y)
    for (int x = r.x; x < r.x + r.w; ++x) ss += (image(x, y) - mean) * (image(x, y) - mean);
  return {mean, ss / (n - 1.0)};
}

void check_roi(const Image& image, const Roi& r) {
  require(r.w > 0 && r.h > 0 && r.w * r.h >= 4, ErrorCode::invalid_parameter,
          "ROI must cover at least 4 pixels");
  require(r.inside(image.width(), image.height()), ErrorCode::invalid_parameter,
          "ROI lies outside the image");
}

}  // namespace

double cnr(const Image& image, const Roi& roi1, const Roi& roi2) {
  check_roi(image, roi1);
  check_roi(image, roi2);
  require(!roi1.overlaps(roi2), ErrorCode::invalid_parameter, "ROIs overlap");
  return cnr_of(roi_stats(image, roi1), roi_stats(image, roi2));
}

double cnr(std::span<const double> values1, std::span<const double> values2) {
  require(values1.size() >= 2 && values2.size() >= 2, ErrorCode::invalid_parameter,
          "each region needs at least 2 values");
  return cnr_of(value_stats(values1), value_stats(values2));
}

namespace {

std::uint8_t wanted_label(RoiRole role) {
  return role == RoiRole::object ? kLabelFeature : kLabelBackground;
}

bool admissible(const Roi& r, int width, int height, const LabelImage* labels) {
  if (!r.inside(width, height)) return false;
  if (!labels) return true;
  const std::uint8_t want = wanted_label(r.role);
  for (int y = r.y; y < r.y + r.h; ++y)
    for (int x = r.x; x < r.x + r.w; ++x)
      if ((*labels)(x, y) != want) return false;
  return true;
}

std::vector<Pixel> admissible_shifts(const Roi& r, int jitter, int width, int height,
                                     const LabelImage* labels) {
  std::vector<Pixel> out;
  for (int dy = -jitter; dy <= jitter; ++dy)
    for (int dx = -jitter; dx <= jitter; ++dx)
      if (admissible(r.shifted(dx, dy), width, height, labels)) out.push_back({dx, dy});
  return out;
}

std::size_t pick(std::size_t n, Engine& rng) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

}  // namespace

CnrResult cnr_protocol(const Image& image, const CnrTemplate& tmpl, const CnrOptions& options,
                       Engine& rng, const LabelImage* labels) {
  require(options.n_placements >= 1, ErrorCode::invalid_parameter, "need at least 1 placement");
  require(options.jitter >= 0, ErrorCode::invalid_parameter, "jitter must be >= 0");
  if (labels) {
    require(labels->same_shape(image), ErrorCode::shape_mismatch,
            "label image does not match the image");
  }
  const int w = image.width();
  const int h = image.height();
  require(admissible(tmpl.object, w, h, labels) && admissible(tmpl.background, w, h, labels),
          ErrorCode::placement_infeasible, "ROI template does not fit its scene labels");

  const auto obj = admissible_shifts(tmpl.object, options.jitter, w, h, labels);
  const auto bg = admissible_shifts(tmpl.background, options.jitter, w, h, labels);

  CnrResult res;
  res.cnr = cnr(image, tmpl.object, tmpl.background);
  for (int i = 0; i < options.n_placements; ++i) {
    Roi a;
    Roi b;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const Pixel so = obj[pick(obj.size(), rng)];
      const Pixel sb = bg[pick(bg.size(), rng)];
      a = tmpl.object.shifted(so.x, so.y);
      b = tmpl.background.shifted(sb.x, sb.y);
      placed = !a.overlaps(b);
    }
    require(placed, ErrorCode::placement_infeasible, "ROI placements keep overlapping");
    res.values.push_back(cnr(image, a, b));
  }

  const double n = static_cast<double>(res.values.size());
  double sum = 0.0;
  for (double v : res.values) sum += v;
  res.mean = sum / n;
  res.n_placements = res.values.size();
  if (res.values.size() >= 2) {
    double ss = 0.0;
    for (double v : res.values) ss += (v - res.mean) * (v - res.mean);
    res.sem = std::sqrt(ss / (n - 1.0) / n);
    res.sem_defined = true;
  } else {
    res.sem = std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

CnrTemplate auto_template(const LabelImage& labels, int roi_w, int roi_h, int jitter) {
  require(roi_w > 0 && roi_h > 0 && roi_w * roi_h >= 4, ErrorCode::invalid_parameter,
          "ROI must cover at least 4 pixels");
  const int w = labels.width();
  const int h = labels.height();

  auto best_for = [&](RoiRole role) {
    Grid2D<std::uint8_t> ok(w, h);
    for (int y = 0; y + roi_h <= h; ++y)
      for (int x = 0; x + roi_w <= w; ++x) ok(x, y) = admissible({x, y, roi_w, roi_h, role}, w, h, &labels);
    int best = -1;
    Roi roi{0, 0, roi_w, roi_h, role};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!ok(x, y)) continue;
        int score = 0;
        for (int dy = -jitter; dy <= jitter; ++dy)
          for (int dx = -jitter; dx <= jitter; ++dx) score += ok.contains(x + dx, y + dy) && ok(x + dx, y + dy);
        if (score > best) {
          best = score;
          roi.x = x;
          roi.y = y;
        }
      }
    }
    require(best > 0, ErrorCode::placement_infeasible,
            std::string("no ") + (role == RoiRole::object ? "object" : "background") + " ROI of " +
                std::to_string(roi_w) + "x" + std::to_string(roi_h) + " fits the scene labels");
    return roi;
  };
  return {best_for(RoiRole::object), best_for(RoiRole::background)};
}

namespace {

constexpr double kTwoOverSqrtPi = 2.0 / 1.7724538509055160273;

struct EsfFunctor : Eigen::DenseFunctor<double> {
  EsfFunctor(const std::vector<double>& x, const std::vector<double>& y)
      : DenseFunctor<double>(4, static_cast<int>(x.size())), x_(x), y_(y) {}

  // p = (a, b, x0, w)
  int operator()(const InputType& p, ValueType& r) const {
    for (std::size_t i = 0; i < x_.size(); ++i) {
      r(static_cast<Eigen::Index>(i)) = p(0) * std::erf((x_[i] - p(2)) / p(3)) + p(1) - y_[i];
    }
    return 0;
  }
  int df(const InputType& p, JacobianType& j) const {
    for (std::size_t i = 0; i < x_.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double u = (x_[i] - p(2)) / p(3);
      const double g = p(0) * kTwoOverSqrtPi * std::exp(-u * u);
      j(k, 0) = std::erf(u);
      j(k, 1) = 1.0;
      j(k, 2) = -g / p(3);
      j(k, 3) = -g * u / p(3);
    }
    return 0;
  }

  const std::vector<double>& x_;
  const std::vector<double>& y_;
};

struct GaussFunctor : Eigen::DenseFunctor<double> {
  GaussFunctor(const std::vector<double>& x, const std::vector<double>& y)
      : DenseFunctor<double>(3, static_cast<int>(x.size())), x_(x), y_(y) {}

  // p = (amplitude, mean, sigma)
  int operator()(const InputType& p, ValueType& r) const {
    for (std::size_t i = 0; i < x_.size(); ++i) {
      const double u = (x_[i] - p(1)) / p(2);
      r(static_cast<Eigen::Index>(i)) = p(0) * std::exp(-0.5 * u * u) - y_[i];
    }
    return 0;
  }
  int df(const InputType& p, JacobianType& j) const {
    for (std::size_t i = 0; i < x_.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double u = (x_[i] - p(1)) / p(2);
      const double e = std::exp(-0.5 * u * u);
      j(k, 0) = e;
      j(k, 1) = p(0) * e * u / p(2);
      j(k, 2) = p(0) * e * u * u / p(2);
    }
    return 0;
  }

  const std::vector<double>& x_;
  const std::vector<double>& y_;
};

bool lm_converged(Eigen::LevenbergMarquardtSpace::Status s) {
  using namespace Eigen::LevenbergMarquardtSpace;
  return s == RelativeReductionTooSmall || s == RelativeErrorTooSmall ||
         s == RelativeErrorAndReductionTooSmall || s == CosinusTooSmall;
}

// First x where the linearly interpolated profile crosses `level`.
double crossing(const std::vector<double>& x, const std::vector<double>& y, double level) {
  for (std::size_t i = 1; i < y.size(); ++i) {
    const double a = y[i - 1] - level;
    const double b = y[i] - level;
    if ((a <= 0.0 && b >= 0.0) || (a >= 0.0 && b <= 0.0)) {
      if (a == b) return x[i - 1];
      return x[i - 1] + (x[i] - x[i - 1]) * a / (a - b);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

EsfFit fit_esf(std::span<const double> profile, std::span<const double> xs,
               const EsfOptions& options) {
  require(profile.size() >= 8, ErrorCode::insufficient_data,
          "edge fit needs at least 8 samples, got " + std::to_string(profile.size()));
  require(xs.empty() || xs.size() == profile.size(), ErrorCode::shape_mismatch,
          "profile and abscissa lengths differ");
  const std::vector<double> y(profile.begin(), profile.end());
  std::vector<double> x(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = xs.empty() ? static_cast<double>(i) : xs[i];
  for (double v : y) require(std::isfinite(v), ErrorCode::fit_failed, "profile is not finite");

  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  const double range = *hi - *lo;
  require(range > 1e-12 * std::max(1.0, std::abs(*hi)), ErrorCode::fit_failed,
          "profile is flat; no edge to fit");

  // Levels from the ends, position from the steepest step, width from the
  // 10-90% rise (1.8124 w for an erf edge).
  const std::size_t tail = std::max<std::size_t>(1, y.size() / 8);
  double head_mean = 0.0;
  double tail_mean = 0.0;
  for (std::size_t i = 0; i < tail; ++i) {
    head_mean += y[i] / static_cast<double>(tail);
    tail_mean += y[y.size() - 1 - i] / static_cast<double>(tail);
  }
  const double sign = tail_mean >= head_mean ? 1.0 : -1.0;
  std::size_t steep = 1;
  for (std::size_t i = 1; i < y.size(); ++i)
    if (sign * (y[i] - y[i - 1]) > sign * (y[steep] - y[steep - 1])) steep = i;

  Eigen::VectorXd p(4);
  p(0) = 0.5 * sign * range;
  p(1) = 0.5 * (*hi + *lo);
  p(2) = 0.5 * (x[steep] + x[steep - 1]);
  const double x10 = crossing(x, y, p(1) - 0.8 * p(0));
  const double x90 = crossing(x, y, p(1) + 0.8 * p(0));
  const double spacing = std::abs(x.back() - x.front()) / static_cast<double>(x.size() - 1);
  double w0 = std::abs(x90 - x10) / 1.8124;
  if (!std::isfinite(w0) || w0 < 0.25 * spacing) w0 = spacing;
  p(3) = w0;

  EsfFunctor functor(x, y);
  Eigen::LevenbergMarquardt<EsfFunctor> lm(functor);
  lm.setMaxfev(options.max_evaluations);
  const auto status = lm.minimize(p);

  EsfFit fit;
  fit.a = p(0);
  fit.b = p(1);
  fit.x0 = p(2);
  fit.w = p(3);
  if (fit.w < 0.0) {
    fit.w = -fit.w;
    fit.a = -fit.a;
  }
  double ss_res = 0.0;
  double mean = 0.0;
  for (double v : y) mean += v / static_cast<double>(y.size());
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = fit.a * std::erf((x[i] - fit.x0) / fit.w) + fit.b - y[i];
    ss_res += r * r;
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  fit.residual_rms = std::sqrt(ss_res / static_cast<double>(y.size()));
  fit.r_squared = 1.0 - ss_res / ss_tot;
  const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
  fit.converged = lm_converged(status) && std::isfinite(fit.w) && fit.w > 0.0 &&
                  fit.x0 >= *xmin && fit.x0 <= *xmax && fit.r_squared >= options.min_r_squared;
  return fit;
}

double fwhm_resolution(double w) {
  require(w > 0.0, ErrorCode::invalid_parameter, "edge width must be > 0");
  return 2.0 * std::sqrt(std::numbers::ln2) * w;
}

double GaussianFit::fwhm() const noexcept { return kFwhmPerSigma * sigma; }

GaussianFit fit_gaussian(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorCode::shape_mismatch, "x and y lengths differ");
  require(xs.size() >= 4, ErrorCode::insufficient_data, "Gaussian fit needs at least 4 samples");
  const std::vector<double> x(xs.begin(), xs.end());
  const std::vector<double> y(ys.begin(), ys.end());

  double w = 0.0;
  double m1 = 0.0;
  double peak = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::max(y[i], 0.0);
    w += v;
    m1 += v * x[i];
    peak = std::max(peak, y[i]);
  }
  require(w > 0.0, ErrorCode::fit_failed, "no positive weight to fit");
  m1 /= w;
  double m2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m2 += std::max(y[i], 0.0) * (x[i] - m1) * (x[i] - m1);
  m2 /= w;

  Eigen::VectorXd p(3);
  p << peak, m1, std::sqrt(std::max(m2, 0.25));
  GaussFunctor functor(x, y);
  Eigen::LevenbergMarquardt<GaussFunctor> lm(functor);
  lm.setMaxfev(2000);
  const auto status = lm.minimize(p);

  GaussianFit fit;
  fit.amplitude = p(0);
  fit.mean = p(1);
  fit.sigma = std::abs(p(2));
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = (x[i] - fit.mean) / fit.sigma;
    const double r = fit.amplitude * std::exp(-0.5 * u * u) - y[i];
    ss += r * r;
  }
  fit.residual_rms = std::sqrt(ss / static_cast<double>(x.size()));
  fit.converged = lm_converged(status) && fit.amplitude > 0.0 && std::isfinite(fit.sigma) &&
                  fit.sigma > 0.0;
  return fit;
}

namespace {

MomentumWidth widths_from(const GaussianFit& fx, const GaussianFit& fy, double pitch,
                          double weight) {
  require(fx.converged && fy.converged, ErrorCode::fit_failed,
          "sum-coordinate distribution is not Gaussian-shaped");
  MomentumWidth m;
  m.sigma_x_px = fx.sigma;
  m.sigma_y_px = fy.sigma;
  m.sigma_x_um = fx.sigma * pitch;
  m.sigma_y_um = fy.sigma * pitch;
  m.fwhm_x_um = fx.fwhm() * pitch;
  m.fwhm_y_um = fy.fwhm() * pitch;
  m.weight = weight;
  return m;
}

}  // namespace

MomentumWidth momentum_corr_width(const PairLedger& ledger, double pixel_pitch_um,
                                  std::uint64_t min_pairs) {
  require(pixel_pitch_um > 0.0, ErrorCode::invalid_parameter, "pixel pitch must be > 0");
  require(ledger.both_detected() >= min_pairs, ErrorCode::insufficient_data,
          "only " + std::to_string(ledger.both_detected()) + " detected pairs, need " +
              std::to_string(min_pairs));
  const auto& hx = ledger.sum_histogram_x();
  const auto& hy = ledger.sum_histogram_y();
  std::vector<double> x(hx.size());
  std::vector<double> yx(hx.size());
  std::vector<double> yy(hy.size());
  for (std::size_t i = 0; i < hx.size(); ++i) {
    x[i] = static_cast<double>(i) - PairLedger::kSumRange;
    yx[i] = static_cast<double>(hx[i]);
    yy[i] = static_cast<double>(hy[i]);
  }
  return widths_from(fit_gaussian(x, yx), fit_gaussian(x, yy), pixel_pitch_um,
                     static_cast<double>(ledger.both_detected()));
}

MomentumWidth momentum_corr_width(const SumLandscape& landscape, double pixel_pitch_um) {
  require(pixel_pitch_um > 0.0, ErrorCode::invalid_parameter, "pixel pitch must be > 0");
  const Image& s = landscape.values;
  require(s.width() >= 5, ErrorCode::insufficient_data, "landscape window is too small");
  std::vector<double> x(s.width());
  std::vector<double> mx(s.width(), 0.0);
  std::vector<double> my(s.height(), 0.0);
  double total = 0.0;
  for (int j = 0; j < s.height(); ++j) {
    for (int i = 0; i < s.width(); ++i) {
      mx[i] += s(i, j);
      my[j] += s(i, j);
      total += s(i, j);
    }
  }
  for (int i = 0; i < s.width(); ++i) x[i] = i - landscape.half_window;
  require(total > 0.0, ErrorCode::insufficient_data, "no coincidence weight in the landscape");
  return widths_from(fit_gaussian(x, mx), fit_gaussian(x, my), pixel_pitch_um, total);
}

}  // namespace qmc
