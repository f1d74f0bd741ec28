#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <boost/random/poisson_distribution.hpp>

#include "qmc/optics.hpp"
#include "qmc/random.hpp"
#include "qmc/types.hpp"

namespace qmc {

/// Pair source. Negative split or center components select the defaults
/// resolved by make_pair_geometry.
struct SpdcParams {
  /// Mean pairs per frame.
  double pair_rate = 2450.0;
  /// Per-axis std of the anti-symmetric split offset, object-plane um.
  Vec2 split_sigma_um{-1.0, -1.0};
  /// Symmetric centre in full-frame pixel coordinates.
  Vec2 center{-1.0, -1.0};

  void validate() const;
};

/// EMCCD readout. Width and height are per region (binned pixels); a frame
/// holds the left (signal) and right (idler) regions side by side.
struct DetectorModel {
  int width = 100;
  int height = 50;
  /// Native pixels per binned pixel side. Affects only the stray speckle grain.
  int binning = 2;
  double background_offset = 467.0;
  /// Incident photons per net count.
  double photons_per_count_slope = 0.037;
  double em_gain_mean = 1.0 / 0.037;
  double read_noise_sigma = 6.0;
  double quantum_efficiency = 1.0;
  int saturation = 65535;

  int full_width() const noexcept { return 2 * width; }
  void validate() const;
};

/// photons = slope * net reading. Negative readings stay negative.
double reading_to_photons(double net_reading, double slope = 0.037) noexcept;

struct StrayLightModel {
  /// Photons per binned pixel per frame.
  double mean_intensity = 0.0;
  /// Speckle grain (intensity autocorrelation FWHM), binned pixels.
  double speckle_corr_length = 1.5;
  /// Full-frame map of per-pixel means; empty when there is no stray light.
  Image static_map;
};

/// |Gaussian-filtered complex white noise|^2 with periodic boundaries, rescaled
/// to the requested mean.
Image generate_speckle(double mean_intensity, double corr_length, int width, int height,
                       Engine& rng);

/// Static full-frame map, drawn on the native grid and binned.
StrayLightModel make_stray_light(double mean_intensity, double corr_length,
                                 const DetectorModel& det, std::uint64_t seed);

/// Per-pair sampling constants in binned-pixel units.
struct PairGeometry {
  double sigma_c_px = 0.0;
  Vec2 split_sigma_px;
  Vec2 center;
  /// round(2 * center); mirror(p) = k - 1 - p.
  Pixel k;
  double pixel_pitch_um = 1.0;
  int width = 0;
  int height = 0;

  Pixel mirror(Pixel p) const noexcept { return {k.x - 1 - p.x, k.y - 1 - p.y}; }
};

/// Default split: sqrt(sigma_lambda^2 - sigma_c^2), sigma_c from the
/// half-wavelength PSF.
PairGeometry make_pair_geometry(const OpticalParams& optics, const SpdcParams& spdc,
                                const DetectorModel& det);

struct PairDetection {
  bool transmitted = false;
  bool signal_hit = false;  // transmitted and inside the left region
  bool idler_hit = false;   // inside the right region
  bool registered = false;  // signal pixel == mirror(idler pixel)
  Pixel signal{-1, -1};     // full-frame pixels, -1 when missing
  Pixel idler{-1, -1};
};

PairDetection detect_pair(Vec2 rho_um, const ObjectMask& mask, const PairGeometry& geom,
                          Engine& rng);

/// Poisson(pair_rate) births uniform over the mask extent, in um.
std::vector<Vec2> sample_pair_births(double pair_rate, const ObjectMask& extent, Engine& rng);

/// Expected signal photons per left-region pixel per frame.
double mean_signal_per_pixel(const ObjectMask& mask, const SpdcParams& spdc,
                             const DetectorModel& det);

/// EM chain with the stray-light Poisson laws prepared once.
class DetectorChain {
 public:
  DetectorChain(DetectorModel det, const StrayLightModel& stray);

  /// `arrivals` holds photons per full-frame pixel; it is consumed (QE
  /// thinning happens in place).
  void synthesize(Grid2D<std::int32_t>& arrivals, Engine& rng, Frame& out) const;
  const DetectorModel& detector() const noexcept { return det_; }

 private:
  DetectorModel det_;
  std::vector<boost::random::poisson_distribution<std::int32_t, double>> stray_;
};

Frame synthesize_frame(std::span<const Pixel> hits, const DetectorModel& det,
                       const StrayLightModel& stray, Engine& rng);

struct PairRecord {
  std::uint64_t frame = 0;
  std::uint32_t index = 0;
  Vec2 rho_um;
  Pixel signal{-1, -1};
  Pixel idler{-1, -1};
  bool transmitted = false;
  bool registered = false;
};

/// Ground truth. Integer tallies so that per-worker ledgers merge exactly.
class PairLedger {
 public:
  /// Sum coordinates are histogrammed on [-kSumRange, kSumRange].
  static constexpr int kSumRange = 256;

  PairLedger() = default;
  PairLedger(int width, int height, std::uint64_t record_frames = 0);

  void begin_frame(std::uint64_t frame);
  void add(std::uint32_t index, Vec2 rho_um, const PairDetection& d, const PairGeometry& g);
  void end_frame();
  void merge(const PairLedger& other);

  int width() const noexcept { return count_sum_.width(); }
  int height() const noexcept { return count_sum_.height(); }
  std::uint64_t frames() const noexcept { return frames_; }
  std::uint64_t pairs() const noexcept { return pairs_; }
  std::uint64_t transmitted() const noexcept { return transmitted_; }
  std::uint64_t lost() const noexcept { return lost_; }
  std::uint64_t both_detected() const noexcept { return both_; }
  std::uint64_t registered() const noexcept { return registered_; }

  /// Per left pixel: sum over frames of registered pairs, and of its square.
  const Grid2D<std::uint64_t>& count_sum() const noexcept { return count_sum_; }
  const Grid2D<std::uint64_t>& count_square_sum() const noexcept { return count_sq_; }
  /// Mean registered coincidences per frame.
  Image mean_rate() const;
  /// Population variance over frames of the per-frame counts.
  Image count_variance() const;

  /// Histogram of signal + idler + 1 - k for pairs with both photons
  /// detected; bin i holds value i - kSumRange. Out-of-range values are
  /// counted in sum_overflow().
  const std::vector<std::uint64_t>& sum_histogram_x() const noexcept { return sum_x_; }
  const std::vector<std::uint64_t>& sum_histogram_y() const noexcept { return sum_y_; }
  std::uint64_t sum_overflow() const noexcept { return sum_overflow_; }

  /// Records of frames below record_frames, sorted by (frame, index).
  const std::vector<PairRecord>& records() const noexcept { return records_; }

 private:
  std::uint64_t record_frames_ = 0;
  std::uint64_t current_frame_ = 0;
  std::uint64_t frames_ = 0;
  std::uint64_t pairs_ = 0;
  std::uint64_t transmitted_ = 0;
  std::uint64_t lost_ = 0;
  std::uint64_t both_ = 0;
  std::uint64_t registered_ = 0;
  std::uint64_t sum_overflow_ = 0;
  Grid2D<std::uint64_t> count_sum_;
  Grid2D<std::uint64_t> count_sq_;
  Grid2D<std::uint32_t> frame_counts_;
  std::vector<std::size_t> touched_;
  std::vector<std::uint64_t> sum_x_;
  std::vector<std::uint64_t> sum_y_;
  std::vector<PairRecord> records_;
};

/// Everything a run needs, with defaults already resolved.
struct SimulationSetup {
  ObjectMask mask;
  OpticalParams optics;
  SpdcParams spdc;
  DetectorModel detector;
  StrayLightModel stray;
  std::uint64_t seed = 1;
  /// Frames whose per-pair records the ledger keeps.
  std::uint64_t record_frames = 0;
};

class Simulator {
 public:
  explicit Simulator(SimulationSetup setup);

  const SimulationSetup& setup() const noexcept { return setup_; }
  const PairGeometry& geometry() const noexcept { return geometry_; }
  const DetectorModel& detector() const noexcept { return setup_.detector; }

  /// Frame `index` of the run. Pairs are drawn before detector noise so the
  /// ledger does not depend on whether frames are synthesized.
  void frame(std::uint64_t index, Frame& out, PairLedger* ledger) const;
  /// Pairs of frame `index` only.
  void trace(std::uint64_t index, PairLedger& ledger) const;

  PairLedger make_ledger() const;

 private:
  void draw_pairs(std::uint64_t index, Engine& rng, Grid2D<std::int32_t>* arrivals,
                  PairLedger* ledger) const;

  SimulationSetup setup_;
  PairGeometry geometry_;
  DetectorChain chain_;
  double extent_w_ = 0.0;
  double extent_h_ = 0.0;
};

struct FrameStack {
  DetectorModel detector;
  std::uint64_t seed = 0;
  std::vector<Frame> frames;
};

/// Called in frame order.
using FrameSink = std::function<void(std::uint64_t index, const Frame& frame)>;

/// Frames [first, first + count) with up to `workers` threads. Output and
/// ledger are identical for any worker count.
void simulate_stream(const Simulator& sim, std::uint64_t first, std::uint64_t count, int workers,
                     const FrameSink& sink, PairLedger* ledger = nullptr);

FrameStack simulate_stack(const Simulator& sim, std::uint64_t n_frames, int workers,
                          PairLedger* ledger = nullptr);

/// Ledger of frames [first, first + count) without detector synthesis.
PairLedger simulate_ledger(const Simulator& sim, std::uint64_t first, std::uint64_t count,
                           int workers);

}  // namespace qmc
