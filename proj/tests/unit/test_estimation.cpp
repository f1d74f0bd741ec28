#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "qmc/config.hpp"
#include "qmc/error.hpp"
#include "qmc/estimation.hpp"
#include "qmc/source_sim.hpp"

using namespace qmc;

namespace {

// 1x1 regions: frame = [L | R].
Frame pair_frame(std::uint16_t l, std::uint16_t r) {
  Frame f(2, 1);
  f(0, 0) = l;
  f(1, 0) = r;
  return f;
}

const Registration kOnePixel = Registration::from_center({1.0, 0.5}, 1, 1);

std::vector<Frame> noise_frames(int w, int h, std::size_t n, std::uint64_t seed) {
  DetectorModel det;
  det.width = w;
  det.height = h;
  StrayLightModel stray = make_stray_light(0.5, 1.5, det, seed);
  std::vector<Frame> out;
  for (std::size_t i = 0; i < n; ++i) {
    Engine rng = make_stream(seed, i);
    out.push_back(synthesize_frame({}, det, stray, rng));
  }
  return out;
}

double mean_of(const Image& img) {
  return std::accumulate(img.begin(), img.end(), 0.0) / static_cast<double>(img.size());
}

// Mean and standard error of the mean of per-frame product deviations,
// pooled over pixels treated as independent.
struct Stats {
  double mean;
  double se;
};

Stats pixel_stats(const Image& img) {
  const double n = static_cast<double>(img.size());
  const double m = mean_of(img);
  double ss = 0.0;
  for (double v : img) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / (n - 1) / n)};
}

SimulationSetup centre_setup(Vec2 centre, double pair_rate = 2450.0, int region_width = 100) {
  RunConfig cfg;
  cfg.detector.width = region_width;
  cfg.scene.width = 2 * region_width;
  cfg.spdc.center = centre;
  cfg.spdc.pair_rate = pair_rate;
  return make_setup(cfg, 31);
}

std::vector<Frame> simulate(const SimulationSetup& s, std::uint64_t n) {
  return simulate_stack(Simulator(s), n, 1).frames;
}

}  // namespace

TEST(Covariance, HandEvaluatedThreeFrames) {
  const std::vector<Frame> frames{pair_frame(1, 1), pair_frame(2, 2), pair_frame(3, 3)};
  const CoincidenceImage c = covariance_image(frames, kOnePixel, 0.0);
  EXPECT_NEAR(c.values(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(c.valid(0, 0), 1);
  EXPECT_EQ(c.domain, Domain::counts_squared);
}

TEST(Covariance, ConstantPartnerIsExactlyZero) {
  const std::vector<Frame> frames{pair_frame(5, 9), pair_frame(17, 9), pair_frame(2, 9), pair_frame(40, 9)};
  EXPECT_EQ(covariance_image(frames, kOnePixel, 3.0).values(0, 0), 0.0);
}

TEST(Covariance, OffsetDoesNotMatter) {
  const std::vector<Frame> frames{pair_frame(470, 480), pair_frame(490, 471), pair_frame(500, 520)};
  EXPECT_NEAR(covariance_image(frames, kOnePixel, 0.0).values(0, 0),
              covariance_image(frames, kOnePixel, 467.0).values(0, 0), 1e-9);
}

TEST(Covariance, NeedsTwoFrames) {
  const std::vector<Frame> one{pair_frame(1, 2)};
  try {
    covariance_image(one, kOnePixel, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_data);
  }
}

TEST(Covariance, ShapeMismatchRejected) {
  CovarianceAccumulator acc(kOnePixel, 0.0);
  EXPECT_THROW(acc.accumulate(Frame(4, 1)), Error);
}

TEST(Covariance, IndependentNoiseIsNull) {
  const auto frames = noise_frames(8, 8, 20000, 41);
  const Registration reg = Registration::from_center({8.0, 4.0}, 8, 8);
  const Stats s = pixel_stats(covariance_image(frames, reg, 467.0).values);
  EXPECT_LT(std::abs(s.mean), 3.0 * s.se) << s.mean << " +- " << s.se;
}

TEST(Registration, MirrorAndValidity) {
  const Registration r = Registration::from_center({100.0, 25.0}, 100, 50);
  EXPECT_EQ(r.k, (Pixel{200, 50}));
  EXPECT_EQ(r.mirror({0, 0}), (Pixel{199, 49}));
  EXPECT_TRUE(r.has_partner({0, 0}));
  // k = 210: left pixel p pairs with 209 - p, inside [100, 200) for p >= 10.
  const Registration off = Registration::from_center({105.0, 25.0}, 100, 50);
  EXPECT_FALSE(off.has_partner({9, 3}));
  EXPECT_TRUE(off.has_partner({10, 3}));
  const LabelImage v = off.valid_mask();
  EXPECT_EQ(v(9, 3), 0);
  EXPECT_EQ(v(99, 3), 1);
}

TEST(Registration, MirrorIsAnInvolution) {
  for (const Vec2 c : {Vec2{100.0, 25.0}, Vec2{104.6, 23.2}, Vec2{97.3, 26.9}}) {
    const Registration r = Registration::from_center(c, 100, 50);
    for (int y = -3; y < 53; y += 7)
      for (int x = -5; x < 205; x += 11) EXPECT_EQ(r.mirror(r.mirror({x, y})), (Pixel{x, y}));
  }
}

TEST(Accumulator, FourChunkMergeMatchesSinglePass) {
  const auto frames = noise_frames(6, 4, 10000, 42);
  const Registration reg = Registration::from_center({6.0, 2.0}, 6, 4);
  CovarianceAccumulator whole(reg, 467.0);
  for (const auto& f : frames) whole.accumulate(f);
  std::vector<CovarianceAccumulator> parts(4, CovarianceAccumulator(reg, 467.0));
  for (std::size_t i = 0; i < frames.size(); ++i) parts[i * 4 / frames.size()].accumulate(frames[i]);
  CovarianceAccumulator merged = parts[0];
  for (int i = 1; i < 4; ++i) merged.merge(parts[i]);
  const Image a = finalize_covariance(whole).values, b = finalize_covariance(merged).values;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-9 * std::abs(a[i]) + 1e-12);
  const Image sa = finalize_shifted(whole).values, sb = finalize_shifted(merged).values;
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_LE(std::abs(sa[i] - sb[i]), 1e-9 * std::abs(sa[i]) + 1e-12);
}

TEST(Accumulator, SameFrameTwiceEqualsMergeOfSingles) {
  const Frame f = noise_frames(4, 2, 1, 43)[0];
  const Registration reg = Registration::from_center({4.0, 1.0}, 4, 2);
  CovarianceAccumulator twice(reg, 467.0), a(reg, 467.0), b(reg, 467.0);
  twice.accumulate(f);
  twice.accumulate(f);
  a.accumulate(f);
  b.accumulate(f);
  a.merge(b);
  EXPECT_EQ(twice.n(), a.n());
  EXPECT_EQ(twice.sum_l(), a.sum_l());
  EXPECT_EQ(twice.sum_r(), a.sum_r());
  EXPECT_EQ(twice.sum_lr(), a.sum_lr());
  EXPECT_EQ(twice.sum_shifted(), a.sum_shifted());
}

TEST(Shifted, ConstantFramesGiveZero) {
  const std::vector<Frame> frames(5, pair_frame(480, 490));
  EXPECT_EQ(shifted_product_baseline(frames, kOnePixel, 467.0).values(0, 0), 0.0);
}

TEST(Shifted, HandEvaluated) {
  // mean(LR) = (1*1 + 2*2 + 3*3)/3; mean(L_i R_{i+1}) = (1*2 + 2*3)/2.
  const std::vector<Frame> frames{pair_frame(1, 1), pair_frame(2, 2), pair_frame(3, 3)};
  EXPECT_NEAR(shifted_product_baseline(frames, kOnePixel, 0.0).values(0, 0), 14.0 / 3.0 - 4.0, 1e-12);
}

TEST(Shifted, AgreesWithCovarianceOnStationaryFrames) {
  const std::vector<Frame> frames = simulate(centre_setup({100.0, 25.0}), 3000);
  const Registration reg = Registration::from_center({100.0, 25.0}, 100, 50);
  const Image c = covariance_image(frames, reg, 467.0).values;
  const Image s = shifted_product_baseline(frames, reg, 467.0).values;
  Image d(c.width(), c.height());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = c[i] - s[i];
  const Stats st = pixel_stats(d);
  EXPECT_LT(std::abs(st.mean), 3.0 * st.se) << st.mean << " +- " << st.se;
}

TEST(Shifted, LinearDriftBiasOrdering) {
  // Independent Poisson L and R (true covariance 0) under a common linear
  // intensity ramp. The ramp is a shared fluctuation, so the population
  // covariance picks up its variance, while adjacent-frame products cancel it
  // to first order.
  const int n = 4000;
  std::vector<Frame> frames;
  Engine rng = make_stream(44, 0);
  for (int i = 0; i < n; ++i) {
    const double level = 50.0 + 100.0 * i / n;
    boost::random::poisson_distribution<int, double> p(level);
    frames.push_back(pair_frame(static_cast<std::uint16_t>(p(rng)), static_cast<std::uint16_t>(p(rng))));
  }
  const double cov_bias = std::abs(covariance_image(frames, kOnePixel, 0.0).values(0, 0));
  const double shift_bias = std::abs(shifted_product_baseline(frames, kOnePixel, 0.0).values(0, 0));
  EXPECT_GT(cov_bias, 500.0);  // ramp variance 100^2 / 12
  EXPECT_LT(shift_bias, cov_bias);
}

TEST(Classical, DarkFramesAreZero) {
  const std::vector<Frame> frames(3, Frame(4, 2, 467));
  for (double v : classical_image(frames, 2, 2, 467.0).values) EXPECT_EQ(v, 0.0);
}

TEST(Classical, TwoFrameMean) {
  const std::vector<Frame> frames{pair_frame(500, 1), pair_frame(520, 2)};
  EXPECT_DOUBLE_EQ(classical_image(frames, 1, 1, 467.0).values(0, 0), (500.0 + 520.0) / 2.0 - 467.0);
}

TEST(Classical, EmptyStackRejected) {
  EXPECT_THROW(classical_image({}, 1, 1, 467.0), Error);
}

TEST(Photons, Scaling) {
  const std::vector<Frame> frames{pair_frame(1, 1), pair_frame(2, 2), pair_frame(3, 3)};
  const CoincidenceImage c = to_photons(covariance_image(frames, kOnePixel, 0.0), 0.5);
  EXPECT_NEAR(c.values(0, 0), 2.0 / 3.0 * 0.25, 1e-15);
  EXPECT_EQ(c.domain, Domain::photons_squared);
  const ClassicalImage m = to_photons(classical_image(frames, 1, 1, 0.0), 0.5);
  EXPECT_NEAR(m.values(0, 0), 1.0, 1e-15);
  EXPECT_EQ(m.domain, Domain::photons);
}

TEST(FindCenter, RecoversKnownCentre) {
  // 60 x 50 regions, so (60, 25) is the middle of the full frame.
  const std::vector<Frame> frames = simulate(centre_setup({60.0, 25.0}, 2450.0, 60), 1000);
  CenterSearch s;
  s.guess = {61.5, 24.0};
  const CenterEstimate e = find_center(frames, 60, 50, s);
  EXPECT_NEAR(e.registration.center.x, 60.0, 0.5);
  EXPECT_NEAR(e.registration.center.y, 25.0, 0.5);
  EXPECT_GT(e.confidence, 1.0);
}

TEST(FindCenter, IntegerShiftIsEquivariant) {
  CenterSearch s;
  s.guess = {100.0, 25.0};
  const CenterEstimate a = find_center(simulate(centre_setup({100.0, 25.0}), 1000), 100, 50, s);
  const CenterEstimate b = find_center(simulate(centre_setup({102.0, 24.0}), 1000), 100, 50, s);
  EXPECT_NEAR(b.registration.center.x - a.registration.center.x, 2.0, 0.5);
  EXPECT_NEAR(b.registration.center.y - a.registration.center.y, -1.0, 0.5);
}

TEST(FindCenter, NoPairsNoSignal) {
  const std::vector<Frame> frames = simulate(centre_setup({100.0, 25.0}, 0.0), 1000);
  try {
    find_center(frames, 100, 50);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::no_signal);
  }
}

TEST(FindCenter, TooFewFrames) {
  const std::vector<Frame> frames = simulate(centre_setup({100.0, 25.0}), 10);
  try {
    find_center(frames, 100, 50);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_data);
  }
}
