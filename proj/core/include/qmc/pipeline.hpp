#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qmc/config.hpp"
#include "qmc/estimation.hpp"
#include "qmc/io.hpp"
#include "qmc/metrics.hpp"
#include "qmc/source_sim.hpp"

namespace qmc {

/// Reads QMC_LOG (trace, debug, info, warn, error, off; default warn).
void init_logging();

struct ReconstructOptions {
  /// Known centre; otherwise find_center on the first frames.
  std::optional<Vec2> center;
  CenterSearch search;
  bool shifted = true;
  double offset = 467.0;
  double slope = 0.037;
  /// Frame counts at which on_checkpoint fires (ascending).
  std::vector<std::uint64_t> checkpoints;
};

/// Photon-domain images.
struct Reconstruction {
  Registration registration;
  double center_confidence = 0.0;
  CoincidenceImage covariance;
  std::optional<CoincidenceImage> shifted;
  ClassicalImage classical;
  std::uint64_t n_frames = 0;
};

using CheckpointFn = std::function<void(const Reconstruction&)>;

/// Streaming reconstruction. Frames arrive through push(); the first
/// search.max_frames frames are buffered when the centre is unknown.
class Reconstructor {
 public:
  Reconstructor(int width, int height, ReconstructOptions options, CheckpointFn on_checkpoint = {});

  void push(const Frame& frame);
  /// Throws insufficient_data when fewer than 2 frames arrived.
  Reconstruction finish();
  std::uint64_t frames() const noexcept { return seen_; }

 private:
  void start(const Registration& reg, double confidence);
  void consume(const Frame& frame);
  Reconstruction snapshot() const;

  int width_;
  int height_;
  ReconstructOptions options_;
  CheckpointFn on_checkpoint_;
  std::vector<Frame> pending_;
  bool started_ = false;
  Registration registration_;
  double confidence_ = 0.0;
  CovarianceAccumulator cov_;
  ClassicalAccumulator classical_;
  std::uint64_t seen_ = 0;
  std::size_t next_checkpoint_ = 0;
};

Reconstruction reconstruct_frames(std::span<const Frame> frames, int width, int height,
                                  const ReconstructOptions& options);
Reconstruction reconstruct_qfs(const std::filesystem::path& qfs, const ReconstructOptions& options);

/// Simulates frames [0, n_frames) and reconstructs them on the fly.
Reconstruction simulate_and_reconstruct(const Simulator& sim, std::uint64_t n_frames, int workers,
                                        const ReconstructOptions& options,
                                        const CheckpointFn& on_checkpoint = {},
                                        PairLedger* ledger = nullptr);

/// Options seeded from a run config: offset, slope, centre.
ReconstructOptions reconstruct_options(const RunConfig& cfg);

struct CnrEvaluation {
  CnrResult covariance;
  std::optional<CnrResult> shifted;
  CnrResult classical;
  CnrTemplate roi;
};

/// One ROI template (auto-placed on the labels) and one placement sequence
/// shared by all estimators.
CnrEvaluation evaluate_cnr(const Reconstruction& rec, const LabelImage& labels,
                           const AnalysisParams& analysis, std::uint64_t seed);

struct SweepRow {
  std::string metric;
  CnrResult result;
  std::uint64_t frames = 0;
  double stray_multiplier = 0.0;
  std::uint64_t seed = 0;
};

/// CNR of each estimator at every frame count; one simulation per seed with
/// checkpoints at the requested counts.
std::vector<SweepRow> sweep_frames(const RunConfig& cfg, std::span<const std::uint64_t> frames,
                                   std::span<const std::uint64_t> seeds, int workers);

/// CNR at cfg.n_frames for each stray multiplier.
std::vector<SweepRow> sweep_stray(const RunConfig& cfg, std::span<const double> multipliers,
                                  std::span<const std::uint64_t> seeds, int workers);

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
void write_sweep_csv(MetricsCsv& csv, std::span<const SweepRow> rows);

struct SimulationSummary {
  std::filesystem::path qfs;
  std::filesystem::path ledger_csv;
  std::uint64_t frames = 0;
  std::uint64_t pairs = 0;
  std::uint64_t registered = 0;
};

/// Writes frames.qfs, ledger.csv and summary.csv into cfg.output_dir.
SimulationSummary run_simulation(const RunConfig& cfg, std::uint64_t seed, int workers);

}  // namespace qmc
