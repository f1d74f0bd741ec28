#include "qmc/optics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qmc/error.hpp"
#include "qmc/io.hpp"
#include "qmc/random.hpp"

namespace qmc {

void OpticalParams::validate() const {
  require(wavelength_um > 0.0, ErrorCode::invalid_parameter, "wavelength must be > 0");
  require(numerical_aperture > 0.0 && numerical_aperture < 1.0, ErrorCode::invalid_parameter,
          "numerical aperture must be in (0, 1)");
  require(magnification > 0.0, ErrorCode::invalid_parameter, "magnification must be > 0");
  require(pixel_pitch_um > 0.0, ErrorCode::invalid_parameter, "pixel pitch must be > 0");
  require(psf_width_multiplier > 0.0, ErrorCode::invalid_parameter,
          "psf width multiplier must be > 0");
}

double psf_fwhm(const OpticalParams& params, PsfKind kind) {
  params.validate();
  const double classical = kDiffractionFwhmFactor * params.wavelength_um /
                           params.numerical_aperture * params.psf_width_multiplier;
  return kind == PsfKind::qmc_half_lambda ? 0.5 * classical : classical;
}

namespace {

double captured_mass(double sigma_px, int radius) {
  const double one_axis = std::erf((radius + 0.5) / (sigma_px * std::numbers::sqrt2));
  return one_axis * one_axis;
}

constexpr double kMinCapturedMass = 0.999;

}  // namespace

int default_support_radius(double fwhm_um, double pixel_pitch_um) {
  require(fwhm_um > 0.0 && pixel_pitch_um > 0.0, ErrorCode::invalid_parameter,
          "psf fwhm and pixel pitch must be > 0");
  const double sigma = fwhm_um / kFwhmPerSigma / pixel_pitch_um;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  while (captured_mass(sigma, radius) < kMinCapturedMass) ++radius;
  return radius;
}

PsfKernel make_gaussian_psf(double fwhm_um, double pixel_pitch_um, int support_radius,
                            PsfKind kind) {
  require(fwhm_um > 0.0, ErrorCode::invalid_parameter, "psf fwhm must be > 0");
  require(pixel_pitch_um > 0.0, ErrorCode::invalid_parameter, "pixel pitch must be > 0");
  require(support_radius >= 0, ErrorCode::invalid_parameter, "support radius must be >= 0");
  const double sigma = fwhm_um / kFwhmPerSigma / pixel_pitch_um;
  if (captured_mass(sigma, support_radius) < kMinCapturedMass) {
    fail(ErrorCode::truncation, "psf support radius " + std::to_string(support_radius) +
                                    " px truncates a sigma=" + std::to_string(sigma) +
                                    " px Gaussian below 99.9% mass");
  }

  PsfKernel psf;
  psf.kind = kind;
  psf.fwhm_um = fwhm_um;
  psf.pixel_pitch_um = pixel_pitch_um;
  const int size = 2 * support_radius + 1;
  psf.grid = Image(size, size);
  double total = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - support_radius;
      const double dy = y - support_radius;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      psf.grid(x, y) = v;
      total += v;
    }
  }
  for (double& v : psf.grid) v /= total;
  return psf;
}

Image convolve(const Image& input, const Image& kernel) {
  require(kernel.width() % 2 == 1 && kernel.height() % 2 == 1, ErrorCode::shape_mismatch,
          "convolution kernel must have odd dimensions");
  const int rx = kernel.width() / 2;
  const int ry = kernel.height() / 2;
  Image out(input.width(), input.height());
  for (int y = 0; y < input.height(); ++y) {
    for (int x = 0; x < input.width(); ++x) {
      double acc = 0.0;
      for (int ky = -ry; ky <= ry; ++ky) {
        const int sy = y - ky;
        if (sy < 0 || sy >= input.height()) continue;
        for (int kx = -rx; kx <= rx; ++kx) {
          const int sx = x - kx;
          if (sx < 0 || sx >= input.width()) continue;
          acc += input(sx, sy) * kernel(kx + rx, ky + ry);
        }
      }
      out(x, y) = acc;
    }
  }
  return out;
}

ObjectMask::ObjectMask(Image transmission, double pitch_um)
    : t_(std::move(transmission)), pitch_um_(pitch_um) {
  require(pitch_um_ > 0.0, ErrorCode::invalid_parameter, "mask pitch must be > 0");
  require(!t_.empty(), ErrorCode::invalid_parameter, "mask must not be empty");
  for (double v : t_) {
    require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_parameter,
            "mask transmission must lie in [0, 1]");
  }
}

double ObjectMask::at(double x_um, double y_um) const noexcept {
  const double fx = std::floor(x_um / pitch_um_);
  const double fy = std::floor(y_um / pitch_um_);
  if (fx < 0.0 || fy < 0.0 || fx >= t_.width() || fy >= t_.height()) return 0.0;
  return t_(static_cast<int>(fx), static_cast<int>(fy));
}

Image ObjectMask::intensity_transmission() const {
  Image out = t_;
  for (double& v : out) v *= v;
  return out;
}

double ObjectMask::mean_intensity_transmission() const {
  double sum = 0.0;
  for (double v : t_) sum += v * v;
  return sum / static_cast<double>(t_.size());
}

IlluminationField illumination_fields(const SourceProfile& src, const PsfKernel& psf_lambda,
                                      const PsfKernel& psf_half) {
  for (double v : src.e0_intensity) {
    require(v >= 0.0, ErrorCode::invalid_parameter, "source intensity must be >= 0");
  }
  Image squared = src.e0_intensity;
  for (double& v : squared) v *= v;
  IlluminationField field;
  field.gamma_ci = convolve(src.e0_intensity, psf_lambda.grid);
  field.gamma_qmc = convolve(squared, psf_half.grid);
  // Round-off can leave -1e-18 where the source is zero.
  for (double& v : field.gamma_ci) v = std::max(v, 0.0);
  for (double& v : field.gamma_qmc) v = std::max(v, 0.0);
  return field;
}

IlluminationField uniform_illumination(int width, int height) {
  return {Image(width, height, 1.0), Image(width, height, 1.0)};
}

namespace {

Image render_through(const ObjectMask& mask, const Image& illumination, const PsfKernel& psf) {
  require(mask.transmission().same_shape(illumination), ErrorCode::shape_mismatch,
          "mask and illumination grids differ");
  Image weighted = mask.intensity_transmission();
  for (std::size_t i = 0; i < weighted.size(); ++i) weighted[i] *= illumination[i];
  Image out = convolve(weighted, psf.grid);
  for (double& v : out) v = std::max(v, 0.0);
  return out;
}

}  // namespace

ClassicalImage render_classical(const ObjectMask& mask, const IlluminationField& illum,
                                const PsfKernel& psf_lambda) {
  ClassicalImage img;
  img.values = render_through(mask, illum.gamma_ci, psf_lambda);
  img.domain = Domain::model;
  return img;
}

CoincidenceImage render_qmc_oracle(const ObjectMask& mask, const IlluminationField& illum,
                                   const PsfKernel& psf_half) {
  CoincidenceImage img;
  img.values = render_through(mask, illum.gamma_qmc, psf_half);
  img.valid = LabelImage(img.values.width(), img.values.height(), 1);
  img.estimator = Estimator::oracle;
  img.domain = Domain::model;
  return img;
}

Image bin_image(const Image& image, int factor) {
  require(factor >= 1, ErrorCode::invalid_parameter, "binning factor must be >= 1");
  const int w = image.width() / factor;
  const int h = image.height() / factor;
  Image out(w, h);
  for (int y = 0; y < h * factor; ++y) {
    for (int x = 0; x < w * factor; ++x) out(x / factor, y / factor) += image(x, y);
  }
  return out;
}

SceneKind parse_scene_kind(const std::string& name) {
  if (name == "bars") return SceneKind::bars;
  if (name == "edge") return SceneKind::edge;
  if (name == "fibers") return SceneKind::fibers;
  if (name == "import") return SceneKind::import;
  fail(ErrorCode::config, "unknown scene kind '" + name + "'");
}

namespace {

ObjectMask import_scene(const SceneSpec& spec) {
  const PgmImage pgm = read_pgm(spec.import_path);
  Image t(pgm.pixels.width(), pgm.pixels.height());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(pgm.pixels[i]) / static_cast<double>(pgm.maxval);
  }
  return ObjectMask(std::move(t), spec.pitch_um);
}

}  // namespace

ObjectMask make_test_scene(const SceneSpec& spec) {
  if (spec.kind == SceneKind::import) return import_scene(spec);

  require(spec.width > 0 && spec.height > 0, ErrorCode::invalid_parameter,
          "scene dimensions must be positive");
  require(spec.pitch_um > 0.0, ErrorCode::invalid_parameter, "scene pitch must be > 0");
  require(spec.feature_t >= 0.0 && spec.feature_t <= 1.0 && spec.background_t >= 0.0 &&
              spec.background_t <= 1.0,
          ErrorCode::invalid_parameter, "scene transmissions must lie in [0, 1]");

  Image t(spec.width, spec.height, spec.background_t);
  const double width_um = spec.width * spec.pitch_um;
  const double height_um = spec.height * spec.pitch_um;
  auto cell_center = [&](int i) { return (i + 0.5) * spec.pitch_um; };

  switch (spec.kind) {
    case SceneKind::edge: {
      const double x0 = spec.edge_x_um < 0.0 ? 0.5 * width_um : spec.edge_x_um;
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
          if (cell_center(x) < x0) t(x, y) = spec.feature_t;
      break;
    }
    case SceneKind::bars: {
      require(spec.bar_width_um > 0.0 && spec.bar_count >= 1, ErrorCode::invalid_parameter,
              "bars need positive width and count");
      const double length = spec.bar_length_um < 0.0 ? 5.0 * spec.bar_width_um : spec.bar_length_um;
      const double span = (2 * spec.bar_count - 1) * spec.bar_width_um;
      const double x_start = 0.5 * (width_um - span);
      const double y_start = 0.5 * (height_um - length);
      for (int y = 0; y < spec.height; ++y) {
        const double cy = cell_center(y);
        if (cy < y_start || cy >= y_start + length) continue;
        for (int x = 0; x < spec.width; ++x) {
          const double rel = cell_center(x) - x_start;
          if (rel < 0.0 || rel >= span) continue;
          if (std::fmod(rel, 2.0 * spec.bar_width_um) < spec.bar_width_um) t(x, y) = spec.feature_t;
        }
      }
      break;
    }
    case SceneKind::fibers: {
      require(spec.fiber_diameter_um > 0.0 && spec.fiber_count >= 0,
              ErrorCode::invalid_parameter, "fibers need positive diameter");
      Engine rng = make_stream(spec.seed, kSceneStream);
      const double half = 0.5 * spec.fiber_diameter_um;
      for (int f = 0; f < spec.fiber_count; ++f) {
        const double cx = uniform01(rng) * width_um;
        const double cy = uniform01(rng) * height_um;
        const double angle = uniform01(rng) * std::numbers::pi;
        const double dx = std::cos(angle);
        const double dy = std::sin(angle);
        for (int y = 0; y < spec.height; ++y) {
          for (int x = 0; x < spec.width; ++x) {
            const double px = cell_center(x) - cx;
            const double py = cell_center(y) - cy;
            if (std::abs(px * dy - py * dx) <= half) t(x, y) = spec.feature_t;
          }
        }
      }
      break;
    }
    case SceneKind::import: break;
  }
  return ObjectMask(std::move(t), spec.pitch_um);
}

LabelImage scene_labels(const ObjectMask& mask, int oversample, double feature_t, int guard_px) {
  require(oversample >= 1, ErrorCode::invalid_parameter, "oversample must be >= 1");
  require(guard_px >= 0, ErrorCode::invalid_parameter, "guard must be >= 0");
  const int w = mask.width() / oversample;
  const int h = mask.height() / oversample;
  const Image& t = mask.transmission();
  LabelImage raw(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool any_feature = false;
      bool any_background = false;
      for (int sy = 0; sy < oversample; ++sy) {
        for (int sx = 0; sx < oversample; ++sx) {
          const bool feature = std::abs(t(x * oversample + sx, y * oversample + sy) - feature_t) <= 1e-9;
          any_feature |= feature;
          any_background |= !feature;
        }
      }
      raw(x, y) = any_feature && any_background ? kLabelMixed
                  : any_feature                 ? kLabelFeature
                                                : kLabelBackground;
    }
  }
  if (guard_px == 0) return raw;

  LabelImage out = raw;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t own = raw(x, y);
      if (own == kLabelMixed) continue;
      for (int dy = -guard_px; dy <= guard_px && out(x, y) != kLabelMixed; ++dy) {
        for (int dx = -guard_px; dx <= guard_px; ++dx) {
          if (raw.contains(x + dx, y + dy) && raw(x + dx, y + dy) != own) {
            out(x, y) = kLabelMixed;
            break;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace qmc
