#pragma once

#include <atomic>
#include <cstdint>

namespace ntrans {

/// Query counters for one phase of a run. Every transmittance provider
/// increments through these, so counts cannot drift from what ran.
struct PhaseCounters {
  std::atomic<std::uint64_t> density_queries{0};
  std::atomic<std::uint64_t> tau_network_queries{0};
  std::atomic<std::uint64_t> tau_march_sample_queries{0};
  std::atomic<std::uint64_t> provider_failures{0};  // samples that fell back to tau = 1
  double wall_ms = 0;
};

struct PhaseTotals {
  std::uint64_t density_queries = 0;
  std::uint64_t tau_network_queries = 0;
  std::uint64_t tau_march_sample_queries = 0;
  std::uint64_t provider_failures = 0;
  double wall_ms = 0;

  std::uint64_t total_queries() const { return density_queries + tau_network_queries + tau_march_sample_queries; }
};

inline PhaseTotals snapshot(const PhaseCounters& c) {
  return {c.density_queries.load(), c.tau_network_queries.load(), c.tau_march_sample_queries.load(),
          c.provider_failures.load(), c.wall_ms};
}

struct QueryStats {
  PhaseTotals precompute;
  PhaseTotals render;

  std::uint64_t density_queries() const { return precompute.density_queries + render.density_queries; }
  std::uint64_t tau_network_queries() const { return precompute.tau_network_queries + render.tau_network_queries; }
  std::uint64_t tau_march_sample_queries() const {
    return precompute.tau_march_sample_queries + render.tau_march_sample_queries;
  }
  std::uint64_t total_queries() const { return precompute.total_queries() + render.total_queries(); }
};

}  // namespace ntrans
