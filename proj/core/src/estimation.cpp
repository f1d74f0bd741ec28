#include "qmc/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "qmc/error.hpp"

namespace qmc {

Registration Registration::from_center(Vec2 center, int width, int height) {
  require(width > 0 && height > 0, ErrorCode::invalid_parameter, "region must be non-empty");
  require(std::isfinite(center.x) && std::isfinite(center.y), ErrorCode::invalid_parameter,
          "centre must be finite");
  Registration r;
  r.center = center;
  r.k = {static_cast<int>(std::lround(2.0 * center.x)),
         static_cast<int>(std::lround(2.0 * center.y))};
  r.width = width;
  r.height = height;
  return r;
}

bool Registration::has_partner(Pixel left) const noexcept {
  const Pixel q = mirror(left);
  return q.x >= width && q.x < 2 * width && q.y >= 0 && q.y < height;
}

LabelImage Registration::valid_mask() const {
  LabelImage mask(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) mask(x, y) = has_partner({x, y}) ? 1 : 0;
  return mask;
}

namespace {

void check_frame(const Frame& f, int width, int height) {
  if (f.width() == 2 * width && f.height() == height) return;
  fail(ErrorCode::shape_mismatch, "frame is " + std::to_string(f.width()) + "x" +
                                      std::to_string(f.height()) + ", registration expects " +
                                      std::to_string(2 * width) + "x" + std::to_string(height));
}

// Mean-centred readings stored pixel-major: column p holds pixel p over frames.
Eigen::MatrixXf centred_region(std::span<const Frame> frames, int width, int height, int x0) {
  const auto m = static_cast<Eigen::Index>(frames.size());
  Eigen::MatrixXf out(m, static_cast<Eigen::Index>(width) * height);
  for (Eigen::Index t = 0; t < m; ++t) {
    const Frame& f = frames[static_cast<std::size_t>(t)];
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out(t, y * width + x) = static_cast<float>(f(x0 + x, y));
  }
  for (Eigen::Index p = 0; p < out.cols(); ++p) {
    const double mean = out.col(p).cast<double>().mean();
    out.col(p).array() -= static_cast<float>(mean);
  }
  return out;
}

double median_of(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

}  // namespace

SumLandscape sum_landscape(std::span<const Frame> frames, int width, int height, Pixel origin,
                           int half_window) {
  require(!frames.empty(), ErrorCode::insufficient_data, "no frames for the landscape");
  require(half_window >= 0, ErrorCode::invalid_parameter, "half window must be >= 0");
  for (const Frame& f : frames) check_frame(f, width, height);

  const Eigen::MatrixXf left = centred_region(frames, width, height, 0);
  const Eigen::MatrixXf right = centred_region(frames, width, height, width);
  const double inv_m = 1.0 / static_cast<double>(frames.size());

  SumLandscape out;
  out.origin = origin;
  out.half_window = half_window;
  out.values = Image(2 * half_window + 1, 2 * half_window + 1);
  for (int j = 0; j < out.values.height(); ++j) {
    for (int i = 0; i < out.values.width(); ++i) {
      const Pixel k = out.k_at(i, j);
      double s = 0.0;
      for (int y = 0; y < height; ++y) {
        const int qy = k.y - 1 - y;
        if (qy < 0 || qy >= height) continue;
        for (int x = 0; x < width; ++x) {
          const int qx = k.x - 1 - x - width;
          if (qx < 0 || qx >= width) continue;
          s += left.col(y * width + x).dot(right.col(qy * width + qx));
        }
      }
      out.values(i, j) = s * inv_m;
    }
  }
  return out;
}

CenterEstimate find_center(std::span<const Frame> frames, int width, int height,
                           const CenterSearch& search) {
  require(frames.size() >= search.min_frames, ErrorCode::insufficient_data,
          "centre search needs at least " + std::to_string(search.min_frames) + " frames, got " +
              std::to_string(frames.size()));
  const std::size_t m = std::min(frames.size(), std::max(search.max_frames, search.min_frames));
  const Vec2 guess{search.guess.x < 0.0 ? static_cast<double>(width) : search.guess.x,
                   search.guess.y < 0.0 ? 0.5 * height : search.guess.y};
  const Pixel origin{static_cast<int>(std::lround(2.0 * guess.x)),
                     static_cast<int>(std::lround(2.0 * guess.y))};

  CenterEstimate est;
  est.landscape = sum_landscape(frames.first(m), width, height, origin, search.half_window);
  const Image& s = est.landscape.values;

  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  const int bi = static_cast<int>(best % s.width());
  const int bj = static_cast<int>(best / s.width());
  const double peak = s[best];

  const std::vector<double> all(s.begin(), s.end());
  const double med = median_of(all);
  std::vector<double> dev(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) dev[i] = std::abs(all[i] - med);
  const double mad = 1.4826 * median_of(dev);
  est.z_score = mad > 0.0 ? (peak - med) / mad : 0.0;
  if (!(est.z_score >= search.min_z)) {
    fail(ErrorCode::no_signal, "no coincidence peak in the centre search window (z=" +
                                   std::to_string(est.z_score) + ")");
  }

  double second = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < s.height(); ++j)
    for (int i = 0; i < s.width(); ++i)
      if (std::abs(i - bi) > 2 || std::abs(j - bj) > 2) second = std::max(second, s(i, j));
  est.confidence = second > 0.0 ? peak / second : std::numeric_limits<double>::infinity();

  auto refine = [&](double lo, double hi) {
    const double curv = lo - 2.0 * peak + hi;
    if (!(curv < 0.0)) return 0.0;
    return std::clamp(0.5 * (lo - hi) / curv, -0.5, 0.5);
  };
  const Pixel k = est.landscape.k_at(bi, bj);
  double dx = 0.0;
  double dy = 0.0;
  if (bi > 0 && bi + 1 < s.width()) dx = refine(s(bi - 1, bj), s(bi + 1, bj));
  if (bj > 0 && bj + 1 < s.height()) dy = refine(s(bi, bj - 1), s(bi, bj + 1));
  est.registration = Registration::from_center({0.5 * (k.x + dx), 0.5 * (k.y + dy)}, width, height);
  return est;
}

CovarianceAccumulator::CovarianceAccumulator(const Registration& reg, double offset)
    : reg_(reg), offset_(static_cast<std::int32_t>(std::lround(offset))) {
  const auto fw = static_cast<std::uint32_t>(2 * reg.width);
  for (int y = 0; y < reg.height; ++y) {
    for (int x = 0; x < reg.width; ++x) {
      if (!reg.has_partner({x, y})) continue;
      const Pixel q = reg.mirror({x, y});
      left_.push_back(static_cast<std::uint32_t>(y) * fw + static_cast<std::uint32_t>(x));
      right_.push_back(static_cast<std::uint32_t>(q.y) * fw + static_cast<std::uint32_t>(q.x));
      out_.push_back(static_cast<std::uint32_t>(y * reg.width + x));
    }
  }
  const std::size_t n = left_.size();
  sum_l_.assign(n, 0);
  sum_r_.assign(n, 0);
  sum_lr_.assign(n, 0);
  sum_shift_.assign(n, 0);
  first_r_.assign(n, 0);
  last_l_.assign(n, 0);
}

void CovarianceAccumulator::accumulate(const Frame& frame) {
  check_frame(frame, reg_.width, reg_.height);
  const std::uint16_t* f = frame.data();
  const bool first = n_ == 0;
  for (std::size_t i = 0; i < left_.size(); ++i) {
    const std::int64_t l = static_cast<std::int64_t>(f[left_[i]]) - offset_;
    const std::int64_t r = static_cast<std::int64_t>(f[right_[i]]) - offset_;
    sum_l_[i] += l;
    sum_r_[i] += r;
    sum_lr_[i] += l * r;
    if (first) {
      first_r_[i] = static_cast<std::int32_t>(r);
    } else {
      sum_shift_[i] += last_l_[i] * r;
    }
    last_l_[i] = static_cast<std::int32_t>(l);
  }
  ++n_;
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& later) {
  require(later.reg_.k == reg_.k && later.reg_.width == reg_.width &&
              later.reg_.height == reg_.height && later.offset_ == offset_,
          ErrorCode::shape_mismatch, "accumulators use different registrations");
  if (later.n_ == 0) return;
  if (n_ == 0) {
    *this = later;
    return;
  }
  for (std::size_t i = 0; i < left_.size(); ++i) {
    sum_l_[i] += later.sum_l_[i];
    sum_r_[i] += later.sum_r_[i];
    sum_lr_[i] += later.sum_lr_[i];
    sum_shift_[i] += later.sum_shift_[i] + static_cast<std::int64_t>(last_l_[i]) * later.first_r_[i];
    last_l_[i] = later.last_l_[i];
  }
  n_ += later.n_;
}

namespace {

CoincidenceImage empty_image(const Registration& reg, std::uint64_t n, Estimator e) {
  CoincidenceImage img;
  img.values = Image(reg.width, reg.height);
  img.valid = reg.valid_mask();
  img.n_frames = n;
  img.estimator = e;
  img.domain = Domain::counts_squared;
  return img;
}

}  // namespace

CoincidenceImage finalize_covariance(const CovarianceAccumulator& acc) {
  require(acc.n_ >= 2, ErrorCode::insufficient_data,
          "covariance needs at least 2 frames, got " + std::to_string(acc.n_));
  CoincidenceImage img = empty_image(acc.reg_, acc.n_, Estimator::covariance);
  const auto n = static_cast<__int128>(acc.n_);
  const double n2 = static_cast<double>(acc.n_) * static_cast<double>(acc.n_);
  for (std::size_t i = 0; i < acc.left_.size(); ++i) {
    const __int128 num = n * acc.sum_lr_[i] - static_cast<__int128>(acc.sum_l_[i]) * acc.sum_r_[i];
    img.values[acc.out_[i]] = static_cast<double>(num) / n2;
  }
  return img;
}

CoincidenceImage finalize_shifted(const CovarianceAccumulator& acc) {
  require(acc.n_ >= 2, ErrorCode::insufficient_data,
          "shifted-product baseline needs at least 2 frames, got " + std::to_string(acc.n_));
  CoincidenceImage img = empty_image(acc.reg_, acc.n_, Estimator::shifted_product);
  const double n = static_cast<double>(acc.n_);
  for (std::size_t i = 0; i < acc.left_.size(); ++i) {
    img.values[acc.out_[i]] = static_cast<double>(acc.sum_lr_[i]) / n -
                              static_cast<double>(acc.sum_shift_[i]) / (n - 1.0);
  }
  return img;
}

CoincidenceImage covariance_image(std::span<const Frame> frames, const Registration& reg,
                                  double offset) {
  CovarianceAccumulator acc(reg, offset);
  for (const Frame& f : frames) acc.accumulate(f);
  return finalize_covariance(acc);
}

CoincidenceImage shifted_product_baseline(std::span<const Frame> frames, const Registration& reg,
                                          double offset) {
  CovarianceAccumulator acc(reg, offset);
  for (const Frame& f : frames) acc.accumulate(f);
  return finalize_shifted(acc);
}

CoincidenceImage to_photons(CoincidenceImage img, double slope) {
  require(slope > 0.0, ErrorCode::invalid_parameter, "slope must be > 0");
  if (img.domain == Domain::counts_squared) {
    for (double& v : img.values) v *= slope * slope;
    img.domain = Domain::photons_squared;
  } else if (img.domain == Domain::counts) {
    for (double& v : img.values) v *= slope;
    img.domain = Domain::photons;
  }
  return img;
}

ClassicalAccumulator::ClassicalAccumulator(int width, int height, double offset)
    : width_(width), height_(height), offset_(offset),
      sum_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0) {
  require(width > 0 && height > 0, ErrorCode::invalid_parameter, "region must be non-empty");
}

void ClassicalAccumulator::accumulate(const Frame& frame) {
  check_frame(frame, width_, height_);
  for (int y = 0; y < height_; ++y) {
    const std::uint16_t* row = frame.data() + frame.index(0, y);
    std::uint64_t* out = sum_.data() + static_cast<std::size_t>(y) * width_;
    for (int x = 0; x < width_; ++x) out[x] += row[x];
  }
  ++n_;
}

void ClassicalAccumulator::merge(const ClassicalAccumulator& other) {
  require(other.width_ == width_ && other.height_ == height_, ErrorCode::shape_mismatch,
          "classical accumulators cover different regions");
  for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += other.sum_[i];
  n_ += other.n_;
}

ClassicalImage ClassicalAccumulator::finalize() const {
  require(n_ >= 1, ErrorCode::insufficient_data, "classical image needs at least 1 frame");
  ClassicalImage img;
  img.values = Image(width_, height_);
  img.n_frames = n_;
  img.domain = Domain::counts;
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    img.values[i] = static_cast<double>(sum_[i]) / static_cast<double>(n_) - offset_;
  }
  return img;
}

ClassicalImage classical_image(std::span<const Frame> frames, int width, int height,
                               double offset) {
  ClassicalAccumulator acc(width, height, offset);
  for (const Frame& f : frames) acc.accumulate(f);
  return acc.finalize();
}

ClassicalImage to_photons(ClassicalImage img, double slope) {
  require(slope > 0.0, ErrorCode::invalid_parameter, "slope must be > 0");
  if (img.domain == Domain::counts) {
    for (double& v : img.values) v *= slope;
    img.domain = Domain::photons;
  }
  return img;
}

}  // namespace qmc
