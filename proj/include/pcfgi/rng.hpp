#pragma once

#include <cstdint>
#include <random>

namespace pcfgi {

// Portable random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; conversion to doubles is done here with
// integer arithmetic (top 53 bits) instead of std::uniform_real_distribution,
// whose algorithm is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1].
  double uniform_positive() { return 1.0 - uniform(); }

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed of the sub-stream `stream` of `seed`. Sub-streams let independent jobs
// (one per sentence, one per model) draw reproducibly in any execution order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

}  // namespace pcfgi
