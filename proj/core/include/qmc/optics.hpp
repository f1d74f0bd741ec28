#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "qmc/images.hpp"
#include "qmc/types.hpp"

namespace qmc {

/// 2*sqrt(2 ln 2): FWHM of a Gaussian in units of its standard deviation.
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

/// FWHM = kDiffractionFwhmFactor * wavelength / NA.
inline constexpr double kDiffractionFwhmFactor = 0.51;

/// Imaging parameters. Lengths are micrometres; pixel_pitch_um is the size of
/// one (binned) detector pixel referred to the object plane, so detector pixel
/// coordinates are object coordinates divided by the pitch. The magnification
/// is carried for bookkeeping (detector-plane lengths) only.
struct OpticalParams {
  double wavelength_um = 0.532;
  /// Effective NA. The default reproduces a 2.9 um classical FWHM.
  double numerical_aperture = 0.0936;
  /// f1/f2 * f4/f3 = 180/9 * 200/300.
  double magnification = 40.0 / 3.0;
  double pixel_pitch_um = 1.0;
  /// Optional per-run defocus stand-in: scales both PSF widths.
  double psf_width_multiplier = 1.0;

  void validate() const;
};

enum class PsfKind { classical_lambda, qmc_half_lambda };

/// Object-plane FWHM in micrometres. The half-wavelength kernel is exactly half
/// the classical one.
double psf_fwhm(const OpticalParams& params, PsfKind kind);

/// Unit-sum, point-sampled Gaussian intensity PSF |h|^2.
struct PsfKernel {
  PsfKind kind = PsfKind::classical_lambda;
  double fwhm_um = 0.0;
  double pixel_pitch_um = 1.0;
  Image grid;

  int radius() const noexcept { return grid.width() / 2; }
  double sigma_px() const noexcept { return fwhm_um / kFwhmPerSigma / pixel_pitch_um; }
};

/// Smallest support radius (pixels) for which make_gaussian_psf accepts sigma.
int default_support_radius(double fwhm_um, double pixel_pitch_um);

/// Throws ErrorCode::truncation when the (2r+1)^2 support would hold less
/// than 99.9% of the continuous Gaussian's mass.
PsfKernel make_gaussian_psf(double fwhm_um, double pixel_pitch_um, int support_radius,
                            PsfKind kind = PsfKind::classical_lambda);

/// Zero-padded "same" 2-D convolution. The kernel has odd dimensions and is
/// centred.
Image convolve(const Image& input, const Image& kernel);

/// Amplitude transmission t on a regular grid of cell size pitch_um.
class ObjectMask {
 public:
  ObjectMask() = default;
  ObjectMask(Image transmission, double pitch_um);

  const Image& transmission() const noexcept { return t_; }
  double pitch_um() const noexcept { return pitch_um_; }
  int width() const noexcept { return t_.width(); }
  int height() const noexcept { return t_.height(); }
  double width_um() const noexcept { return t_.width() * pitch_um_; }
  double height_um() const noexcept { return t_.height() * pitch_um_; }

  /// t at an object-plane position; zero outside the mask.
  double at(double x_um, double y_um) const noexcept;
  /// |t|^2 over all cells.
  Image intensity_transmission() const;
  double mean_intensity_transmission() const;

 private:
  Image t_;
  double pitch_um_ = 1.0;
};

/// |E0|^2 on the source Fourier plane, sampled on the mask grid.
struct SourceProfile {
  Image e0_intensity;
};

struct IlluminationField {
  Image gamma_ci;   // classical illumination intensity
  Image gamma_qmc;  // squared-intensity biphoton illumination
};

/// gamma_ci = |E0|^2 (*) psf_lambda; gamma_qmc = |E0|^4 (*) psf_half.
IlluminationField illumination_fields(const SourceProfile& src, const PsfKernel& psf_lambda,
                                      const PsfKernel& psf_half);

/// Both fields equal to one everywhere.
IlluminationField uniform_illumination(int width, int height);

ClassicalImage render_classical(const ObjectMask& mask, const IlluminationField& illum,
                                const PsfKernel& psf_lambda);
CoincidenceImage render_qmc_oracle(const ObjectMask& mask, const IlluminationField& illum,
                                   const PsfKernel& psf_half);

/// Sums factor x factor blocks; mask-grid renders -> detector-pixel grid.
Image bin_image(const Image& image, int factor);

enum class SceneKind { bars, edge, fibers, import };

/// Test scene description. Geometry in micrometres on the object plane;
/// width/height are mask cells of size pitch_um. Features (bars, fibers, the
/// dark side of the edge) take feature_t, the rest background_t.
struct SceneSpec {
  SceneKind kind = SceneKind::edge;
  int width = 200;
  int height = 100;
  double pitch_um = 0.5;
  double feature_t = 0.0;
  double background_t = 1.0;
  /// edge: t = feature_t for x < edge_x_um. Negative means the centre.
  double edge_x_um = -1.0;
  /// bars: bar_count vertical stripes on a 2*bar_width pitch, centred.
  double bar_width_um = 2.76;
  int bar_count = 3;
  /// Negative means 5 * bar_width.
  double bar_length_um = -1.0;
  /// fibers: straight strips through random points at random angles.
  int fiber_count = 6;
  double fiber_diameter_um = 6.0;
  std::uint64_t seed = 1;
  std::filesystem::path import_path;
};

SceneKind parse_scene_kind(const std::string& name);

ObjectMask make_test_scene(const SceneSpec& spec);

/// Per detector pixel: 1 = feature, 0 = background, 2 = mixed. `oversample`
/// mask cells per pixel side; labels within `guard_px` of a different label
/// become mixed.
LabelImage scene_labels(const ObjectMask& mask, int oversample, double feature_t, int guard_px);

inline constexpr std::uint8_t kLabelBackground = 0;
inline constexpr std::uint8_t kLabelFeature = 1;
inline constexpr std::uint8_t kLabelMixed = 2;

}  // namespace qmc
