#pragma once

#include <cstdint>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace qmc {

using Engine = boost::random::mt19937_64;

/// Stream identifiers outside the frame-index range.
inline constexpr std::uint64_t kSpeckleStream = 0xF000'0000'0000'0001ULL;
inline constexpr std::uint64_t kSceneStream = 0xF000'0000'0000'0002ULL;
inline constexpr std::uint64_t kCnrStream = 0xF000'0000'0000'0003ULL;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Independent engine for (run seed, stream). Frame i of a run always draws
/// from stream i, whatever thread produces it.
inline Engine make_stream(std::uint64_t run_seed, std::uint64_t stream) {
  return Engine(mix64(mix64(run_seed) ^ mix64(stream + 0x632BE59BD9B4E019ULL)));
}

inline double uniform01(Engine& rng) {
  return boost::random::uniform_01<double>{}(rng);
}

inline double standard_normal(Engine& rng) {
  return boost::random::normal_distribution<double>{}(rng);
}

/// Gamma(shape, scale) for integer shape >= 1. Boost's generic gamma sampler
/// is roughly 20x slower for shape > 1 and this sits in the per-pixel loop.
double sample_erlang(Engine& rng, int shape, double scale);

}  // namespace qmc
