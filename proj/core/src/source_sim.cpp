#include "qmc/source_sim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <thread>

#include "qmc/error.hpp"

namespace qmc {

void SpdcParams::validate() const {
  require(std::isfinite(pair_rate) && pair_rate >= 0.0, ErrorCode::invalid_parameter,
          "pair_rate must be >= 0");
}

void DetectorModel::validate() const {
  require(width > 0 && height > 0, ErrorCode::invalid_parameter,
          "detector region must be at least 1x1");
  require(binning >= 1, ErrorCode::invalid_parameter, "binning must be >= 1");
  require(photons_per_count_slope > 0.0, ErrorCode::invalid_parameter, "slope must be > 0");
  require(em_gain_mean > 0.0, ErrorCode::invalid_parameter, "EM gain must be > 0");
  require(read_noise_sigma >= 0.0, ErrorCode::invalid_parameter, "read noise must be >= 0");
  require(quantum_efficiency >= 0.0 && quantum_efficiency <= 1.0, ErrorCode::invalid_parameter,
          "quantum efficiency must lie in [0, 1]");
  require(saturation > 0 && saturation <= 65535, ErrorCode::invalid_parameter,
          "saturation must lie in [1, 65535]");
  require(background_offset >= 0.0 && background_offset < saturation,
          ErrorCode::invalid_parameter, "background offset must lie below saturation");
}

double reading_to_photons(double net_reading, double slope) noexcept {
  return slope * net_reading;
}

namespace {

// Periodic separable Gaussian blur of a complex field.
std::vector<std::complex<double>> blur_periodic(const std::vector<std::complex<double>>& in,
                                                int width, int height, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));

  auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
  std::vector<std::complex<double>> tmp(in.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::complex<double> acc;
      for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * in[y * width + wrap(x + i, width)];
      tmp[y * width + x] = acc;
    }
  }
  std::vector<std::complex<double>> out(in.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::complex<double> acc;
      for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * tmp[wrap(y + i, height) * width + x];
      out[y * width + x] = acc;
    }
  }
  return out;
}

void rescale_mean(Image& map, double mean) {
  double sum = 0.0;
  for (double v : map) sum += v;
  const double scale = sum > 0.0 ? mean * static_cast<double>(map.size()) / sum : 0.0;
  for (double& v : map) v *= scale;
}

}  // namespace

Image generate_speckle(double mean_intensity, double corr_length, int width, int height,
                       Engine& rng) {
  require(mean_intensity >= 0.0, ErrorCode::invalid_parameter, "stray mean must be >= 0");
  require(corr_length >= 1.0, ErrorCode::invalid_parameter,
          "speckle correlation length must be >= 1 pixel");
  require(width > 0 && height > 0, ErrorCode::invalid_parameter, "speckle map must be non-empty");
  Image map(width, height);
  if (mean_intensity == 0.0) return map;

  std::vector<std::complex<double>> field(map.size());
  for (auto& z : field) z = {standard_normal(rng), standard_normal(rng)};
  // |field|^2 autocorrelation of a blur with std s has std s, so FWHM = s * 2.3548.
  const auto blurred = blur_periodic(field, width, height, corr_length / kFwhmPerSigma);
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = std::norm(blurred[i]);
  rescale_mean(map, mean_intensity);
  return map;
}

StrayLightModel make_stray_light(double mean_intensity, double corr_length,
                                 const DetectorModel& det, std::uint64_t seed) {
  StrayLightModel stray;
  stray.mean_intensity = mean_intensity;
  stray.speckle_corr_length = corr_length;
  if (mean_intensity <= 0.0) return stray;
  Engine rng = make_stream(seed, kSpeckleStream);
  const int b = det.binning;
  const Image native = generate_speckle(mean_intensity / (b * b), corr_length * b,
                                        det.full_width() * b, det.height * b, rng);
  stray.static_map = bin_image(native, b);
  rescale_mean(stray.static_map, mean_intensity);
  return stray;
}

PairGeometry make_pair_geometry(const OpticalParams& optics, const SpdcParams& spdc,
                                const DetectorModel& det) {
  optics.validate();
  spdc.validate();
  det.validate();
  PairGeometry g;
  g.pixel_pitch_um = optics.pixel_pitch_um;
  g.width = det.width;
  g.height = det.height;
  const double sigma_lambda =
      psf_fwhm(optics, PsfKind::classical_lambda) / kFwhmPerSigma / optics.pixel_pitch_um;
  g.sigma_c_px = psf_fwhm(optics, PsfKind::qmc_half_lambda) / kFwhmPerSigma / optics.pixel_pitch_um;
  const double default_split = std::sqrt(sigma_lambda * sigma_lambda - g.sigma_c_px * g.sigma_c_px);
  g.split_sigma_px.x = spdc.split_sigma_um.x < 0.0 ? default_split
                                                   : spdc.split_sigma_um.x / optics.pixel_pitch_um;
  g.split_sigma_px.y = spdc.split_sigma_um.y < 0.0 ? default_split
                                                   : spdc.split_sigma_um.y / optics.pixel_pitch_um;
  g.center.x = spdc.center.x < 0.0 ? det.width : spdc.center.x;
  g.center.y = spdc.center.y < 0.0 ? 0.5 * det.height : spdc.center.y;
  g.k = {static_cast<int>(std::lround(2.0 * g.center.x)),
         static_cast<int>(std::lround(2.0 * g.center.y))};
  return g;
}

PairDetection detect_pair(Vec2 rho_um, const ObjectMask& mask, const PairGeometry& geom,
                          Engine& rng) {
  PairDetection d;
  const double t = mask.at(rho_um.x, rho_um.y);
  d.transmitted = uniform01(rng) < t * t;

  const double x = rho_um.x / geom.pixel_pitch_um + geom.sigma_c_px * standard_normal(rng);
  const double y = rho_um.y / geom.pixel_pitch_um + geom.sigma_c_px * standard_normal(rng);
  const double sx = geom.split_sigma_px.x * standard_normal(rng);
  const double sy = geom.split_sigma_px.y * standard_normal(rng);

  const Pixel signal{static_cast<int>(std::floor(x + sx)), static_cast<int>(std::floor(y + sy))};
  const Pixel idler{static_cast<int>(std::floor(2.0 * geom.center.x - (x - sx))),
                    static_cast<int>(std::floor(2.0 * geom.center.y - (y - sy)))};

  d.signal_hit = d.transmitted && signal.x >= 0 && signal.x < geom.width && signal.y >= 0 &&
                 signal.y < geom.height;
  d.idler_hit = idler.x >= geom.width && idler.x < 2 * geom.width && idler.y >= 0 &&
                idler.y < geom.height;
  if (d.signal_hit) d.signal = signal;
  if (d.idler_hit) d.idler = idler;
  d.registered = d.signal_hit && d.idler_hit && geom.mirror(idler) == signal;
  return d;
}

namespace {

std::int32_t draw_pair_count(double rate, Engine& rng) {
  if (rate <= 0.0) return 0;
  return boost::random::poisson_distribution<std::int32_t, double>(rate)(rng);
}

}  // namespace

std::vector<Vec2> sample_pair_births(double pair_rate, const ObjectMask& extent, Engine& rng) {
  require(pair_rate >= 0.0, ErrorCode::invalid_parameter, "pair_rate must be >= 0");
  const std::int32_t n = draw_pair_count(pair_rate, rng);
  std::vector<Vec2> births(static_cast<std::size_t>(n));
  for (auto& b : births) {
    b.x = uniform01(rng) * extent.width_um();
    b.y = uniform01(rng) * extent.height_um();
  }
  return births;
}

double mean_signal_per_pixel(const ObjectMask& mask, const SpdcParams& spdc,
                             const DetectorModel& det) {
  return spdc.pair_rate * mask.mean_intensity_transmission() /
         (static_cast<double>(det.width) * det.height);
}

DetectorChain::DetectorChain(DetectorModel det, const StrayLightModel& stray)
    : det_(std::move(det)) {
  det_.validate();
  if (stray.static_map.empty()) return;
  require(stray.static_map.width() == det_.full_width() && stray.static_map.height() == det_.height,
          ErrorCode::shape_mismatch, "stray map does not match the detector frame");
  stray_.reserve(stray.static_map.size());
  for (double mean : stray.static_map) {
    // A zero-mean law is stored with a tiny mean; it never fires in practice.
    stray_.emplace_back(std::max(mean, 1e-300));
  }
}

void DetectorChain::synthesize(Grid2D<std::int32_t>& arrivals, Engine& rng, Frame& out) const {
  const int fw = det_.full_width();
  require(arrivals.width() == fw && arrivals.height() == det_.height, ErrorCode::shape_mismatch,
          "hit grid does not match the detector frame");
  if (!out.same_shape(arrivals)) out = Frame(fw, det_.height);

  const double qe = det_.quantum_efficiency;
  const double gain = det_.em_gain_mean;
  const double offset = det_.background_offset;
  const double sigma = det_.read_noise_sigma;
  const double sat = det_.saturation;
  const bool with_stray = !stray_.empty();

  for (std::size_t i = 0; i < arrivals.size(); ++i) {
    std::int32_t n = arrivals[i];
    if (qe < 1.0 && n > 0) {
      std::int32_t kept = 0;
      for (std::int32_t j = 0; j < n; ++j) kept += uniform01(rng) < qe;
      n = kept;
    }
    if (with_stray) n += stray_[i](rng);
    double v = offset + sigma * standard_normal(rng);
    if (n > 0) v += sample_erlang(rng, n, gain);
    out[i] = static_cast<std::uint16_t>(std::clamp(std::nearbyint(v), 0.0, sat));
  }
}

Frame synthesize_frame(std::span<const Pixel> hits, const DetectorModel& det,
                       const StrayLightModel& stray, Engine& rng) {
  const DetectorChain chain(det, stray);
  Grid2D<std::int32_t> arrivals(det.full_width(), det.height);
  for (const Pixel& p : hits) {
    require(arrivals.contains(p.x, p.y), ErrorCode::invalid_parameter, "hit outside the frame");
    ++arrivals(p.x, p.y);
  }
  Frame out;
  chain.synthesize(arrivals, rng, out);
  return out;
}

PairLedger::PairLedger(int width, int height, std::uint64_t record_frames)
    : record_frames_(record_frames),
      count_sum_(width, height),
      count_sq_(width, height),
      frame_counts_(width, height),
      sum_x_(2 * kSumRange + 1),
      sum_y_(2 * kSumRange + 1) {}

void PairLedger::begin_frame(std::uint64_t frame) { current_frame_ = frame; }

void PairLedger::add(std::uint32_t index, Vec2 rho_um, const PairDetection& d,
                     const PairGeometry& g) {
  ++pairs_;
  transmitted_ += d.transmitted;
  if (!d.idler_hit || (d.transmitted && !d.signal_hit)) ++lost_;
  if (d.signal_hit && d.idler_hit) {
    ++both_;
    const int ux = d.signal.x + d.idler.x + 1 - g.k.x;
    const int uy = d.signal.y + d.idler.y + 1 - g.k.y;
    if (std::abs(ux) <= kSumRange && std::abs(uy) <= kSumRange) {
      ++sum_x_[ux + kSumRange];
      ++sum_y_[uy + kSumRange];
    } else {
      ++sum_overflow_;
    }
  }
  if (d.registered) {
    ++registered_;
    const std::size_t i = frame_counts_.index(d.signal.x, d.signal.y);
    if (frame_counts_[i]++ == 0) touched_.push_back(i);
  }
  if (current_frame_ < record_frames_) {
    records_.push_back({current_frame_, index, rho_um, d.signal, d.idler, d.transmitted,
                        d.registered});
  }
}

void PairLedger::end_frame() {
  ++frames_;
  for (std::size_t i : touched_) {
    const std::uint64_t k = frame_counts_[i];
    count_sum_[i] += k;
    count_sq_[i] += k * k;
    frame_counts_[i] = 0;
  }
  touched_.clear();
}

void PairLedger::merge(const PairLedger& other) {
  if (other.count_sum_.empty()) return;
  if (count_sum_.empty()) {
    *this = other;
    return;
  }
  require(count_sum_.same_shape(other.count_sum_), ErrorCode::shape_mismatch,
          "ledgers cover different regions");
  frames_ += other.frames_;
  pairs_ += other.pairs_;
  transmitted_ += other.transmitted_;
  lost_ += other.lost_;
  both_ += other.both_;
  registered_ += other.registered_;
  sum_overflow_ += other.sum_overflow_;
  for (std::size_t i = 0; i < count_sum_.size(); ++i) {
    count_sum_[i] += other.count_sum_[i];
    count_sq_[i] += other.count_sq_[i];
  }
  for (std::size_t i = 0; i < sum_x_.size(); ++i) {
    sum_x_[i] += other.sum_x_[i];
    sum_y_[i] += other.sum_y_[i];
  }
  records_.insert(records_.end(), other.records_.begin(), other.records_.end());
  std::sort(records_.begin(), records_.end(), [](const PairRecord& a, const PairRecord& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.index < b.index;
  });
}

Image PairLedger::mean_rate() const {
  Image out(width(), height());
  if (frames_ == 0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(count_sum_[i]) / static_cast<double>(frames_);
  }
  return out;
}

Image PairLedger::count_variance() const {
  Image out(width(), height());
  if (frames_ == 0) return out;
  const double n = static_cast<double>(frames_);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = static_cast<double>(count_sum_[i]) / n;
    out[i] = static_cast<double>(count_sq_[i]) / n - m * m;
  }
  return out;
}

Simulator::Simulator(SimulationSetup setup)
    : setup_(std::move(setup)),
      geometry_(make_pair_geometry(setup_.optics, setup_.spdc, setup_.detector)),
      chain_(setup_.detector, setup_.stray),
      extent_w_(setup_.mask.width_um()),
      extent_h_(setup_.mask.height_um()) {
  require(!setup_.mask.transmission().empty(), ErrorCode::invalid_parameter,
          "simulation needs an object mask");
}

PairLedger Simulator::make_ledger() const {
  return PairLedger(setup_.detector.width, setup_.detector.height, setup_.record_frames);
}

void Simulator::draw_pairs(std::uint64_t index, Engine& rng, Grid2D<std::int32_t>* arrivals,
                           PairLedger* ledger) const {
  const std::int32_t n = draw_pair_count(setup_.spdc.pair_rate, rng);
  if (ledger) ledger->begin_frame(index);
  for (std::int32_t j = 0; j < n; ++j) {
    const Vec2 rho{uniform01(rng) * extent_w_, uniform01(rng) * extent_h_};
    const PairDetection d = detect_pair(rho, setup_.mask, geometry_, rng);
    if (arrivals) {
      if (d.signal_hit) ++(*arrivals)(d.signal.x, d.signal.y);
      if (d.idler_hit) ++(*arrivals)(d.idler.x, d.idler.y);
    }
    if (ledger) ledger->add(static_cast<std::uint32_t>(j), rho, d, geometry_);
  }
  if (ledger) ledger->end_frame();
}

void Simulator::frame(std::uint64_t index, Frame& out, PairLedger* ledger) const {
  Engine rng = make_stream(setup_.seed, index);
  Grid2D<std::int32_t> arrivals(setup_.detector.full_width(), setup_.detector.height);
  draw_pairs(index, rng, &arrivals, ledger);
  chain_.synthesize(arrivals, rng, out);
}

void Simulator::trace(std::uint64_t index, PairLedger& ledger) const {
  Engine rng = make_stream(setup_.seed, index);
  draw_pairs(index, rng, nullptr, &ledger);
}

namespace {

int effective_workers(int workers, std::uint64_t count) {
  const auto w = static_cast<std::uint64_t>(std::max(1, workers));
  return static_cast<int>(std::min<std::uint64_t>(w, std::max<std::uint64_t>(1, count)));
}

}  // namespace

void simulate_stream(const Simulator& sim, std::uint64_t first, std::uint64_t count, int workers,
                     const FrameSink& sink, PairLedger* ledger) {
  const int nw = effective_workers(workers, count);
  std::vector<PairLedger> ledgers;
  if (ledger) ledgers.assign(static_cast<std::size_t>(nw), sim.make_ledger());

  if (nw == 1) {
    Frame frame;
    for (std::uint64_t i = first; i < first + count; ++i) {
      sim.frame(i, frame, ledger ? &ledgers[0] : nullptr);
      sink(i, frame);
    }
  } else {
    const std::uint64_t batch = 16 * static_cast<std::uint64_t>(nw);
    std::vector<Frame> buffer(batch);
    for (std::uint64_t start = first; start < first + count; start += batch) {
      const std::uint64_t n = std::min(batch, first + count - start);
      std::vector<std::jthread> threads;
      for (int w = 0; w < nw; ++w) {
        threads.emplace_back([&, w] {
          for (std::uint64_t j = w; j < n; j += nw) {
            sim.frame(start + j, buffer[j], ledger ? &ledgers[w] : nullptr);
          }
        });
      }
      threads.clear();
      for (std::uint64_t j = 0; j < n; ++j) sink(start + j, buffer[j]);
    }
  }
  if (ledger) {
    for (const auto& l : ledgers) ledger->merge(l);
  }
}

FrameStack simulate_stack(const Simulator& sim, std::uint64_t n_frames, int workers,
                          PairLedger* ledger) {
  require(n_frames >= 1, ErrorCode::config, "n_frames must be ≥ 1");
  FrameStack stack;
  stack.detector = sim.detector();
  stack.seed = sim.setup().seed;
  stack.frames.reserve(n_frames);
  simulate_stream(
      sim, 0, n_frames, workers, [&](std::uint64_t, const Frame& f) { stack.frames.push_back(f); },
      ledger);
  return stack;
}

PairLedger simulate_ledger(const Simulator& sim, std::uint64_t first, std::uint64_t count,
                           int workers) {
  const int nw = effective_workers(workers, count);
  std::vector<PairLedger> ledgers(static_cast<std::size_t>(nw), sim.make_ledger());
  const std::uint64_t chunk = (count + nw - 1) / nw;
  {
    std::vector<std::jthread> threads;
    for (int w = 0; w < nw; ++w) {
      threads.emplace_back([&, w] {
        const std::uint64_t lo = first + std::min(count, w * chunk);
        const std::uint64_t hi = first + std::min(count, (w + 1) * chunk);
        for (std::uint64_t i = lo; i < hi; ++i) sim.trace(i, ledgers[w]);
      });
    }
  }
  PairLedger out = sim.make_ledger();
  for (const auto& l : ledgers) out.merge(l);
  return out;
}

}  // namespace qmc
