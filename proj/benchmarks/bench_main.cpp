#include <cmath>
#include <map>

#include <benchmark/benchmark.h>

#include "qmc/config.hpp"
#include "qmc/estimation.hpp"
#include "qmc/metrics.hpp"
#include "qmc/source_sim.hpp"

using namespace qmc;

namespace {

const Simulator& default_simulator(double stray_multiplier) {
  static std::map<double, Simulator> cache;
  auto it = cache.find(stray_multiplier);
  if (it == cache.end()) {
    RunConfig cfg;
    cfg.stray_multiplier = stray_multiplier;
    it = cache.emplace(stray_multiplier, Simulator(make_setup(cfg, 1))).first;
  }
  return it->second;
}

// 1000 default frames, enough for one centre search.
const std::vector<Frame>& default_frames() {
  static const std::vector<Frame> frames = simulate_stack(default_simulator(0.0), 1000, 1).frames;
  return frames;
}

}  // namespace

static void BM_SampleErlang(benchmark::State& state) {
  Engine rng = make_stream(1, 0);
  const int shape = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sample_erlang(rng, shape, 27.0));
}
BENCHMARK(BM_SampleErlang)->Arg(1)->Arg(3)->Arg(12)->Arg(80);

static void BM_SynthesizeDarkFrame(benchmark::State& state) {
  const DetectorModel det;
  const StrayLightModel none;
  Engine rng = make_stream(1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(synthesize_frame({}, det, none, rng));
  state.SetItemsProcessed(state.iterations() * det.full_width() * det.height);
}
BENCHMARK(BM_SynthesizeDarkFrame)->Unit(benchmark::kMicrosecond);

// Full default frame: pair births, detection, EMCCD chain.
static void BM_SimulatorFrame(benchmark::State& state) {
  const Simulator& sim = default_simulator(static_cast<double>(state.range(0)));
  Frame f;
  std::uint64_t i = 0;
  for (auto _ : state) {
    sim.frame(i++, f, nullptr);
    benchmark::DoNotOptimize(f.data());
  }
}
BENCHMARK(BM_SimulatorFrame)->Arg(0)->Arg(8)->Unit(benchmark::kMicrosecond);

static void BM_LedgerOnlyFrame(benchmark::State& state) {
  const Simulator& sim = default_simulator(0.0);
  PairLedger ledger = sim.make_ledger();
  std::uint64_t i = 0;
  for (auto _ : state) sim.trace(i++, ledger);
}
BENCHMARK(BM_LedgerOnlyFrame)->Unit(benchmark::kMicrosecond);

static void BM_CovarianceAccumulate(benchmark::State& state) {
  const auto& frames = default_frames();
  CovarianceAccumulator acc(Registration::from_center({100.0, 25.0}, 100, 50), 467.0);
  std::size_t i = 0;
  for (auto _ : state) acc.accumulate(frames[i++ % frames.size()]);
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_CovarianceAccumulate)->Unit(benchmark::kMicrosecond);

static void BM_FindCenter(benchmark::State& state) {
  const auto& frames = default_frames();
  for (auto _ : state) benchmark::DoNotOptimize(find_center(frames, 100, 50));
}
BENCHMARK(BM_FindCenter)->Unit(benchmark::kMillisecond);

static void BM_FitEsf(benchmark::State& state) {
  std::vector<double> p(100);
  for (int i = 0; i < 100; ++i) p[i] = 0.5 * std::erf((i - 49.5) / 1.74) + 0.5;
  for (auto _ : state) benchmark::DoNotOptimize(fit_esf(p));
}
BENCHMARK(BM_FitEsf)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
