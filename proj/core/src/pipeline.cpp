#include "qmc/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <mutex>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "qmc/error.hpp"
#include "qmc/io.hpp"
#include "qmc/random.hpp"

namespace qmc {

void init_logging() {
  static std::once_flag once;
  std::call_once(once, [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("qmc"));
    spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  });
  const char* env = std::getenv("QMC_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

Reconstructor::Reconstructor(int width, int height, ReconstructOptions options,
                             CheckpointFn on_checkpoint)
    : width_(width), height_(height), options_(std::move(options)),
      on_checkpoint_(std::move(on_checkpoint)) {
  require(std::is_sorted(options_.checkpoints.begin(), options_.checkpoints.end()),
          ErrorCode::invalid_parameter, "checkpoints must be ascending");
  if (options_.center) start(Registration::from_center(*options_.center, width_, height_), 0.0);
}

void Reconstructor::start(const Registration& reg, double confidence) {
  registration_ = reg;
  confidence_ = confidence;
  cov_ = CovarianceAccumulator(reg, options_.offset);
  classical_ = ClassicalAccumulator(width_, height_, options_.offset);
  started_ = true;
  spdlog::info("registration centre ({:.2f}, {:.2f}), k = ({}, {})", reg.center.x, reg.center.y,
               reg.k.x, reg.k.y);
}

void Reconstructor::push(const Frame& frame) {
  if (started_) {
    consume(frame);
    return;
  }
  pending_.push_back(frame);
  if (pending_.size() >= std::max(options_.search.max_frames, options_.search.min_frames)) {
    const CenterEstimate est = find_center(pending_, width_, height_, options_.search);
    start(est.registration, est.confidence);
    std::vector<Frame> buffered;
    buffered.swap(pending_);
    for (const Frame& f : buffered) consume(f);
  }
}

void Reconstructor::consume(const Frame& frame) {
  cov_.accumulate(frame);
  classical_.accumulate(frame);
  ++seen_;
  while (next_checkpoint_ < options_.checkpoints.size() &&
         options_.checkpoints[next_checkpoint_] <= seen_) {
    if (options_.checkpoints[next_checkpoint_] == seen_ && on_checkpoint_) on_checkpoint_(snapshot());
    ++next_checkpoint_;
  }
}

Reconstruction Reconstructor::snapshot() const {
  Reconstruction r;
  r.registration = registration_;
  r.center_confidence = confidence_;
  r.covariance = to_photons(finalize_covariance(cov_), options_.slope);
  if (options_.shifted) r.shifted = to_photons(finalize_shifted(cov_), options_.slope);
  r.classical = to_photons(classical_.finalize(), options_.slope);
  r.n_frames = seen_;
  return r;
}

Reconstruction Reconstructor::finish() {
  if (!started_) {
    const CenterEstimate est = find_center(pending_, width_, height_, options_.search);
    start(est.registration, est.confidence);
    std::vector<Frame> buffered;
    buffered.swap(pending_);
    for (const Frame& f : buffered) consume(f);
  }
  return snapshot();
}

Reconstruction reconstruct_frames(std::span<const Frame> frames, int width, int height,
                                  const ReconstructOptions& options) {
  Reconstructor rec(width, height, options);
  for (const Frame& f : frames) rec.push(f);
  return rec.finish();
}

Reconstruction reconstruct_qfs(const std::filesystem::path& qfs, const ReconstructOptions& options) {
  QfsReader reader(qfs);
  const QfsHeader& h = reader.header();
  require(h.split(), ErrorCode::format, "'" + qfs.string() + "' does not hold split L|R frames");
  Reconstructor rec(static_cast<int>(h.width / 2), static_cast<int>(h.height), options);
  Frame f;
  while (reader.read(f)) rec.push(f);
  return rec.finish();
}

Reconstruction simulate_and_reconstruct(const Simulator& sim, std::uint64_t n_frames, int workers,
                                        const ReconstructOptions& options,
                                        const CheckpointFn& on_checkpoint, PairLedger* ledger) {
  require(n_frames >= 1, ErrorCode::config, "n_frames must be ≥ 1");
  Reconstructor rec(sim.detector().width, sim.detector().height, options, on_checkpoint);
  simulate_stream(
      sim, 0, n_frames, workers, [&](std::uint64_t, const Frame& f) { rec.push(f); }, ledger);
  return rec.finish();
}

ReconstructOptions reconstruct_options(const RunConfig& cfg) {
  ReconstructOptions o;
  o.offset = cfg.detector.background_offset;
  o.slope = cfg.detector.photons_per_count_slope;
  o.center = cfg.analysis.center;
  o.shifted = cfg.estimator != EstimatorChoice::covariance;
  return o;
}

CnrEvaluation evaluate_cnr(const Reconstruction& rec, const LabelImage& labels,
                           const AnalysisParams& analysis, std::uint64_t seed) {
  require(labels.same_shape(rec.covariance.values), ErrorCode::shape_mismatch,
          "labels do not match the reconstruction");
  LabelImage usable = labels;
  for (std::size_t i = 0; i < usable.size(); ++i)
    if (!rec.covariance.valid[i]) usable[i] = kLabelMixed;

  CnrEvaluation ev;
  ev.roi = auto_template(usable, analysis.roi_width, analysis.roi_height, analysis.jitter);
  const CnrOptions opt{analysis.n_placements, analysis.jitter};
  auto run = [&](const Image& img) {
    Engine rng = make_stream(seed, kCnrStream);
    return cnr_protocol(img, ev.roi, opt, rng, &usable);
  };
  ev.covariance = run(rec.covariance.values);
  if (rec.shifted) ev.shifted = run(rec.shifted->values);
  ev.classical = run(rec.classical.values);
  return ev;
}

namespace {

void push_rows(std::vector<SweepRow>& rows, const CnrEvaluation& ev, std::uint64_t frames,
               double stray, std::uint64_t seed) {
  rows.push_back({"cnr_covariance", ev.covariance, frames, stray, seed});
  if (ev.shifted) rows.push_back({"cnr_shifted", *ev.shifted, frames, stray, seed});
  rows.push_back({"cnr_classical", ev.classical, frames, stray, seed});
}

}  // namespace

std::vector<SweepRow> sweep_frames(const RunConfig& cfg, std::span<const std::uint64_t> frames,
                                   std::span<const std::uint64_t> seeds, int workers) {
  require(!frames.empty() && !seeds.empty(), ErrorCode::invalid_parameter,
          "sweep needs frame counts and seeds");
  std::vector<std::uint64_t> points(frames.begin(), frames.end());
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  require(points.front() >= 2, ErrorCode::invalid_parameter, "frame counts must be >= 2");

  std::vector<SweepRow> rows;
  for (std::uint64_t seed : seeds) {
    const Simulator sim(make_setup(cfg, seed));
    const LabelImage labels = detector_labels(cfg, sim.setup().mask);
    ReconstructOptions opt = reconstruct_options(cfg);
    opt.checkpoints = points;
    const double stray = cfg.stray_multiplier;
    simulate_and_reconstruct(sim, points.back(), workers, opt, [&](const Reconstruction& r) {
      spdlog::info("seed {} frames {}", seed, r.n_frames);
      push_rows(rows, evaluate_cnr(r, labels, cfg.analysis, seed), r.n_frames, stray, seed);
    });
  }
  return rows;
}

std::vector<SweepRow> sweep_stray(const RunConfig& cfg, std::span<const double> multipliers,
                                  std::span<const std::uint64_t> seeds, int workers) {
  require(!multipliers.empty() && !seeds.empty(), ErrorCode::invalid_parameter,
          "sweep needs stray levels and seeds");
  std::vector<SweepRow> rows;
  for (double m : multipliers) {
    require(m >= 0.0, ErrorCode::invalid_parameter, "stray multipliers must be >= 0");
    RunConfig c = cfg;
    c.stray_mean = 0.0;
    c.stray_multiplier = m;
    for (std::uint64_t seed : seeds) {
      const Simulator sim(make_setup(c, seed));
      const LabelImage labels = detector_labels(c, sim.setup().mask);
      const Reconstruction r = simulate_and_reconstruct(sim, c.n_frames, workers, reconstruct_options(c));
      spdlog::info("stray x{} seed {} done", m, seed);
      push_rows(rows, evaluate_cnr(r, labels, c.analysis, seed), r.n_frames, m, seed);
    }
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  MetricsCsv csv(path);
  write_sweep_csv(csv, rows);
}

void write_sweep_csv(MetricsCsv& csv, std::span<const SweepRow> rows) {
  for (const SweepRow& r : rows) {
    csv.row(r.metric, r.result.mean, r.result.sem, r.result.n_placements,
            fmt::format("frames={};stray={};seed={};template_cnr={}", r.frames, r.stray_multiplier,
                        r.seed, r.result.cnr));
  }
}

SimulationSummary run_simulation(const RunConfig& cfg, std::uint64_t seed, int workers) {
  cfg.validate();
  require(cfg.n_frames <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::config,
          "n_frames exceeds the QFS frame-count field");
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create '" + cfg.output_dir.string() + "': " + ec.message());

  const Simulator sim(make_setup(cfg, seed));
  SimulationSummary s;
  s.qfs = cfg.output_dir / "frames.qfs";
  s.ledger_csv = cfg.output_dir / "ledger.csv";

  QfsWriter writer(s.qfs, static_cast<std::uint32_t>(cfg.detector.full_width()),
                   static_cast<std::uint32_t>(cfg.detector.height),
                   static_cast<std::uint32_t>(cfg.n_frames));
  PairLedger ledger = sim.make_ledger();
  simulate_stream(
      sim, 0, cfg.n_frames, workers,
      [&](std::uint64_t i, const Frame& f) {
        writer.write(f);
        if ((i + 1) % 10000 == 0) spdlog::info("{} / {} frames", i + 1, cfg.n_frames);
      },
      &ledger);
  writer.close();
  write_ledger_csv(s.ledger_csv, ledger);

  s.frames = ledger.frames();
  s.pairs = ledger.pairs();
  s.registered = ledger.registered();
  MetricsCsv summary(cfg.output_dir / "summary.csv");
  const std::string params = fmt::format("seed={}", seed);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  summary.row("frames", static_cast<double>(ledger.frames()), nan, ledger.frames(), params);
  summary.row("pairs", static_cast<double>(ledger.pairs()), nan, ledger.frames(), params);
  summary.row("transmitted", static_cast<double>(ledger.transmitted()), nan, ledger.frames(), params);
  summary.row("lost", static_cast<double>(ledger.lost()), nan, ledger.frames(), params);
  summary.row("registered", static_cast<double>(ledger.registered()), nan, ledger.frames(), params);
  summary.row("stray_mean", sim.setup().stray.mean_intensity, nan, ledger.frames(), params);
  return s;
}

}  // namespace qmc
