#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "qmc/error.hpp"
#include "qmc/metrics.hpp"
#include "qmc/optics.hpp"

using namespace qmc;

namespace {

double kernel_sum(const PsfKernel& k) { return std::accumulate(k.grid.begin(), k.grid.end(), 0.0); }

// Second moment along x about the kernel centre, in pixels^2.
double second_moment_x(const Image& g) {
  const int r = g.width() / 2;
  double m = 0.0, s = 0.0;
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      m += g(x, y) * (x - r) * (x - r);
      s += g(x, y);
    }
  }
  return m / s;
}

// Row through the middle, as a profile.
std::vector<double> middle_row(const Image& img) {
  std::vector<double> row(img.width());
  for (int x = 0; x < img.width(); ++x) row[x] = img(x, img.height() / 2);
  return row;
}

// Depth of the deepest valley in p[lo, hi) relative to the profile maximum.
double dip_depth(const std::vector<double>& p, std::size_t lo, std::size_t hi) {
  double top = 0.0, depth = 0.0;
  for (std::size_t j = lo; j < hi; ++j) {
    double left = 0.0, right = 0.0;
    for (std::size_t i = lo; i <= j; ++i) left = std::max(left, p[i]);
    for (std::size_t i = j; i < hi; ++i) right = std::max(right, p[i]);
    depth = std::max(depth, std::min(left, right) - p[j]);
    top = std::max(top, p[j]);
  }
  return depth / top;
}

ObjectMask edge_mask(int w, int h, double pitch) {
  Image t(w, h, 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x) t(x, y) = 0.0;
  return ObjectMask(t, pitch);
}

}  // namespace

TEST(PsfFwhm, DiffractionFormula) {
  OpticalParams p;
  EXPECT_NEAR(psf_fwhm(p, PsfKind::classical_lambda), 0.51 * 0.532 / 0.0936, 1e-12);
  EXPECT_NEAR(psf_fwhm(p, PsfKind::classical_lambda), 2.899, 1e-3);
}

TEST(PsfFwhm, HalfWavelengthIsHalf) {
  OpticalParams p;
  p.numerical_aperture = 0.51 * p.wavelength_um / 2.9;
  EXPECT_NEAR(psf_fwhm(p, PsfKind::classical_lambda), 2.9, 1e-12);
  EXPECT_NEAR(psf_fwhm(p, PsfKind::qmc_half_lambda), 1.45, 1e-12);
}

TEST(PsfFwhm, Deterministic) {
  OpticalParams p;
  EXPECT_EQ(psf_fwhm(p, PsfKind::classical_lambda), psf_fwhm(p, PsfKind::classical_lambda));
}

TEST(PsfFwhm, RejectsNonPositiveInputs) {
  OpticalParams p;
  p.numerical_aperture = 0.0;
  EXPECT_THROW(
      {
        try {
          psf_fwhm(p, PsfKind::classical_lambda);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::invalid_parameter);
          throw;
        }
      },
      Error);
  p = OpticalParams{};
  p.wavelength_um = -1.0;
  EXPECT_THROW(psf_fwhm(p, PsfKind::classical_lambda), Error);
}

TEST(GaussianPsf, UnitSigma) {
  const PsfKernel k = make_gaussian_psf(kFwhmPerSigma, 1.0, 5);
  EXPECT_NEAR(k.sigma_px(), 1.0, 1e-12);
  EXPECT_NEAR(second_moment_x(k.grid), 1.0, 1e-3);
}

TEST(GaussianPsf, NormalizedToOne) {
  for (double fwhm : {1.0, 2.9, 7.3}) {
    const PsfKernel k = make_gaussian_psf(fwhm, 0.5, default_support_radius(fwhm, 0.5));
    EXPECT_NEAR(kernel_sum(k), 1.0, 1e-9);
  }
}

TEST(GaussianPsf, HalvedFwhmQuartersSecondMoment) {
  const PsfKernel wide = make_gaussian_psf(8.0, 1.0, 20);
  const PsfKernel narrow = make_gaussian_psf(4.0, 1.0, 20);
  EXPECT_NEAR(second_moment_x(narrow.grid) / second_moment_x(wide.grid), 0.25, 1e-6);
}

TEST(GaussianPsf, TruncationError) {
  try {
    make_gaussian_psf(10.0, 1.0, 2);
    FAIL() << "expected truncation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::truncation);
  }
  EXPECT_NO_THROW(make_gaussian_psf(10.0, 1.0, default_support_radius(10.0, 1.0)));
}

TEST(Illumination, UniformSourceGivesConstantInterior) {
  const PsfKernel lam = make_gaussian_psf(2.0, 1.0, 4);
  const PsfKernel half = make_gaussian_psf(1.0, 1.0, 2, PsfKind::qmc_half_lambda);
  const IlluminationField f = illumination_fields({Image(40, 40, 3.0)}, lam, half);
  for (int y = 8; y < 32; ++y) {
    for (int x = 8; x < 32; ++x) {
      EXPECT_NEAR(f.gamma_ci(x, y), 3.0, 3.0 * 1e-6);
      EXPECT_NEAR(f.gamma_qmc(x, y), 9.0, 9.0 * 1e-6);
    }
  }
}

TEST(Illumination, PointSourceReproducesPsf) {
  const PsfKernel lam = make_gaussian_psf(3.0, 1.0, 6);
  const PsfKernel half = make_gaussian_psf(1.5, 1.0, 3, PsfKind::qmc_half_lambda);
  Image delta(31, 31, 0.0);
  delta(15, 15) = 1.0;
  const IlluminationField f = illumination_fields({delta}, lam, half);
  for (int y = -6; y <= 6; ++y)
    for (int x = -6; x <= 6; ++x) EXPECT_NEAR(f.gamma_ci(15 + x, 15 + y), lam.grid(6 + x, 6 + y), 1e-15);
}

TEST(Illumination, GaussianVariancesAdd) {
  // Source intensity with sigma 3 px, PSF sigma 2 px: result sigma^2 = 9 + 4.
  const int n = 81, c = 40;
  Image src(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      src(x, y) = std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * 9.0));
  const PsfKernel lam = make_gaussian_psf(2.0 * kFwhmPerSigma, 1.0, 10);
  const PsfKernel half = make_gaussian_psf(kFwhmPerSigma, 1.0, 5, PsfKind::qmc_half_lambda);
  const IlluminationField f = illumination_fields({src}, lam, half);
  const double var_src = second_moment_x(src);
  const double var_psf = second_moment_x(lam.grid);
  EXPECT_NEAR(second_moment_x(f.gamma_ci), var_src + var_psf, 1e-3 * (var_src + var_psf));
}

TEST(RenderClassical, ConstantAndZeroScenes) {
  const PsfKernel lam = make_gaussian_psf(2.0, 1.0, 4);
  const IlluminationField u = uniform_illumination(30, 30);
  const ClassicalImage ones = render_classical(ObjectMask(Image(30, 30, 1.0), 1.0), u, lam);
  for (int y = 5; y < 25; ++y)
    for (int x = 5; x < 25; ++x) EXPECT_NEAR(ones.values(x, y), 1.0, 1e-12);
  const ClassicalImage zeros = render_classical(ObjectMask(Image(30, 30, 0.0), 1.0), u, lam);
  for (double v : zeros.values) EXPECT_EQ(v, 0.0);
}

TEST(RenderQmc, ConstantScene) {
  const PsfKernel half = make_gaussian_psf(1.0, 1.0, 2, PsfKind::qmc_half_lambda);
  const CoincidenceImage img =
      render_qmc_oracle(ObjectMask(Image(20, 20, 1.0), 1.0), uniform_illumination(20, 20), half);
  for (int y = 3; y < 17; ++y)
    for (int x = 3; x < 17; ++x) EXPECT_NEAR(img.values(x, y), 1.0, 1e-12);
}

TEST(RenderEdge, FittedFwhmMatchesKernels) {
  const double pitch = 0.25;
  const ObjectMask mask = edge_mask(160, 40, pitch);
  const IlluminationField u = uniform_illumination(160, 40);
  const PsfKernel lam = make_gaussian_psf(2.9, pitch, default_support_radius(2.9, pitch));
  const PsfKernel half =
      make_gaussian_psf(1.45, pitch, default_support_radius(1.45, pitch), PsfKind::qmc_half_lambda);

  const auto classical = middle_row(render_classical(mask, u, lam).values);
  const auto qmc = middle_row(render_qmc_oracle(mask, u, half).values);
  // Stay clear of the zero-padded borders.
  const std::vector<double> c(classical.begin() + 40, classical.end() - 40);
  const std::vector<double> q(qmc.begin() + 40, qmc.end() - 40);
  const double fc = fwhm_resolution(fit_esf(c).w) * pitch;
  const double fq = fwhm_resolution(fit_esf(q).w) * pitch;
  EXPECT_NEAR(fc, 2.9, 0.02 * 2.9);
  EXPECT_NEAR(fq, 1.45, 0.02 * 1.45);
  EXPECT_NEAR(fq / fc, 0.5, 0.01);
}

TEST(RenderBars, HalfWavelengthResolvesCloseBars) {
  // Two thin bars whose gap is 0.7 classical FWHM.
  const double pitch = 0.1, fwhm = 2.9, bar = 0.2, gap = 0.7 * fwhm;
  const int w = 240, h = 120;
  Image t(w, h, 0.0);
  const double x1 = 0.5 * w * pitch - 0.5 * gap - bar;
  const double x2 = 0.5 * w * pitch + 0.5 * gap;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double xc = (x + 0.5) * pitch;
      if ((xc >= x1 && xc < x1 + bar) || (xc >= x2 && xc < x2 + bar)) t(x, y) = 1.0;
    }
  }
  const ObjectMask mask(t, pitch);
  const IlluminationField u = uniform_illumination(w, h);
  const PsfKernel lam = make_gaussian_psf(fwhm, pitch, default_support_radius(fwhm, pitch));
  const PsfKernel half = make_gaussian_psf(fwhm / 2, pitch, default_support_radius(fwhm / 2, pitch),
                                           PsfKind::qmc_half_lambda);
  const auto c = middle_row(render_classical(mask, u, lam).values);
  const auto q = middle_row(render_qmc_oracle(mask, u, half).values);
  const auto lo = static_cast<std::size_t>(x1 / pitch), hi = static_cast<std::size_t>((x2 + bar) / pitch) + 1;
  EXPECT_LT(dip_depth(c, lo, hi), 1e-9);
  EXPECT_GT(dip_depth(q, lo, hi), 0.05);
}

TEST(Scenes, EdgeIsStep) {
  SceneSpec s;
  s.kind = SceneKind::edge;
  s.width = 40;
  s.height = 10;
  s.pitch_um = 0.5;
  s.edge_x_um = 7.0;
  const ObjectMask m = make_test_scene(s);
  for (int x = 0; x < 40; ++x) {
    const double xc = (x + 0.5) * 0.5;
    EXPECT_EQ(m.transmission()(x, 5), xc < 7.0 ? 0.0 : 1.0) << x;
  }
}

TEST(Scenes, BarsOnTwiceWidthPitch) {
  SceneSpec s;
  s.kind = SceneKind::bars;
  s.width = 200;
  s.height = 100;
  s.pitch_um = 0.12;
  s.bar_width_um = 2.76;
  s.bar_count = 3;
  const ObjectMask m = make_test_scene(s);
  // Rising edges of dark bars along the middle row.
  std::vector<int> starts;
  const int y = s.height / 2;
  for (int x = 1; x < s.width; ++x)
    if (m.transmission()(x, y) == s.feature_t && m.transmission()(x - 1, y) != s.feature_t) starts.push_back(x);
  ASSERT_EQ(starts.size(), 3u);
  EXPECT_NEAR((starts[1] - starts[0]) * s.pitch_um, 2 * 2.76, 1.01 * s.pitch_um);
  EXPECT_NEAR((starts[2] - starts[1]) * s.pitch_um, 2 * 2.76, 1.01 * s.pitch_um);
}

TEST(Scenes, FibersDeterministic) {
  SceneSpec s;
  s.kind = SceneKind::fibers;
  s.seed = 42;
  EXPECT_EQ(make_test_scene(s).transmission(), make_test_scene(s).transmission());
  SceneSpec other = s;
  other.seed = 43;
  EXPECT_NE(make_test_scene(s).transmission(), make_test_scene(other).transmission());
}

TEST(Scenes, ImportRejectsMalformedFile) {
  const auto path = std::filesystem::temp_directory_path() / "qmc_bad_scene.pgm";
  { std::ofstream(path) << "P2\n2 2\n255\n0 0 0 0\n"; }
  SceneSpec s;
  s.kind = SceneKind::import;
  s.import_path = path;
  try {
    make_test_scene(s);
    FAIL() << "expected format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::format);
  }
  std::filesystem::remove(path);
}

TEST(Scenes, LabelsMarkBoundaryAsMixed) {
  const ObjectMask m = edge_mask(40, 8, 0.5);
  const LabelImage l = scene_labels(m, 2, 0.0, 1);
  ASSERT_EQ(l.width(), 20);
  EXPECT_EQ(l(0, 2), kLabelFeature);
  EXPECT_EQ(l(19, 2), kLabelBackground);
  EXPECT_EQ(l(9, 2), kLabelMixed);
  EXPECT_EQ(l(10, 2), kLabelMixed);
}

TEST(BinImage, SumsBlocks) {
  Image img(4, 2, 1.0);
  const Image b = bin_image(img, 2);
  ASSERT_EQ(b.width(), 2);
  ASSERT_EQ(b.height(), 1);
  EXPECT_EQ(b(0, 0), 4.0);
}

TEST(RenderClassical, MaskingIsMonotone) {
  const OpticalParams op;
  const PsfKernel psf = make_gaussian_psf(psf_fwhm(op, PsfKind::classical_lambda), 0.5,
                                          default_support_radius(psf_fwhm(op, PsfKind::classical_lambda), 0.5));
  const IlluminationField ill = uniform_illumination(40, 30);
  Image t(40, 30, 1.0);
  for (int y = 0; y < 30; ++y) t(y % 40, y) = 0.3;
  Image darker = t;
  for (int x = 10; x < 18; ++x)
    for (int y = 5; y < 25; ++y) darker(x, y) = 0.0;
  const Image a = render_classical(ObjectMask(t, 0.5), ill, psf).values;
  const Image b = render_classical(ObjectMask(darker, 0.5), ill, psf).values;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(b[i], a[i] + 1e-12);
}

TEST(RenderQmc, OracleIsClassicalRenderWithHalfKernel) {
  const OpticalParams op;
  const double fwhm = psf_fwhm(op, PsfKind::qmc_half_lambda);
  const PsfKernel half = make_gaussian_psf(fwhm, 0.5, default_support_radius(fwhm, 0.5),
                                           PsfKind::qmc_half_lambda);
  const ObjectMask mask = edge_mask(40, 20, 0.5);
  IlluminationField ill = uniform_illumination(40, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) ill.gamma_qmc(x, y) = 1.0 + 0.01 * x;
  const Image q = render_qmc_oracle(mask, ill, half).values;
  const Image c = render_classical(mask, {ill.gamma_qmc, ill.gamma_qmc}, half).values;
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_DOUBLE_EQ(q[i], c[i]);
}
