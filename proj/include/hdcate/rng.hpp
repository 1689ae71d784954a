#pragma once

#include <cstdint>
#include <random>

namespace hdcate {

// Purpose tags keep streams for different consumers disjoint even when they
// share a root seed and an index.
enum class StreamTag : std::uint32_t {
  dgp = 1,
  folds = 2,
  bootstrap = 3,
  replication = 4,
};

/// Deterministic random stream addressed by (root seed, purpose, index, sub).
///
/// Each stream is an independent mt19937_64 seeded through std::seed_seq, so
/// the draws of stream (s, t, i) never depend on how many other streams were
/// created or in which order. That is what lets replications and bootstrap
/// draws run in any order and still reproduce bit-for-bit.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, StreamTag tag, std::uint64_t index,
            std::uint64_t sub = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(root_seed),
                      static_cast<std::uint32_t>(root_seed >> 32),
                      static_cast<std::uint32_t>(tag),
                      static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(sub),
                      static_cast<std::uint32_t>(sub >> 32)};
    engine_.seed(seq);
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    return mean + sd * std_normal_(engine_);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  std::mt19937_64& engine() { return engine_; }

  // Derive a child seed; used to re-seed whole sub-experiments.
  std::uint64_t next_seed() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> std_normal_{0.0, 1.0};
};

}  // namespace hdcate
