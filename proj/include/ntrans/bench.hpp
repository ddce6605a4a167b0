#pragma once

// Query-count accounting and wall-clock sweeps over environment-map size.
//
// Symbols: l lights (environment-map texels), n samples per camera ray,
// c camera pixels, m_map cells per transmittance map. The predicted speedup
// uses m for the camera pixel count, so predicted_speedup is called with c.

#include "ntrans/render.hpp"

#include <limits>
#include <ostream>

namespace ntrans {

/// psi = (l m n + n m) / (l m + n m): the per-point baseline issues l m n
/// transmittance queries plus n m density queries, the map path l m
/// transmittance queries plus the same n m density queries.
inline double predicted_speedup(double l, double m, double n) {
  if (!(l > 0 && m > 0 && n > 0)) throw ValidationError("predicted_speedup: l, m, n must be positive");
  return (l * m * n + n * m) / (l * m + n * m);
}

enum class ProviderKind { kOracle, kNeural, kMap };

inline const char* provider_name(ProviderKind k) {
  switch (k) {
    case ProviderKind::kOracle: return "oracle";
    case ProviderKind::kNeural: return "neural";
    case ProviderKind::kMap: return "map";
  }
  return "?";
}

inline ProviderKind parse_provider(const std::string& s) {
  if (s == "oracle") return ProviderKind::kOracle;
  if (s == "neural") return ProviderKind::kNeural;
  if (s == "map") return ProviderKind::kMap;
  throw ValidationError("unknown provider '" + s + "'");
}

struct SweepSpec {
  std::string scene_id = "sphere";
  Scene scene;
  Camera camera;
  std::vector<int> l_values;
  std::vector<ProviderKind> providers{ProviderKind::kNeural, ProviderKind::kMap};
  int repetitions = 1;
  std::uint64_t seed = 0;
  int n_samples = 192;
  int map_width = 0;   // 0: same as the camera
  int map_height = 0;
  MarchConfig light_march{};
  std::shared_ptr<const TauNet> net;
  int threads = 0;
};

struct SweepRow {
  std::string provider;
  int l = 0;
  std::uint64_t m_map = 0;
  int n = 0;
  std::uint64_t c = 0;
  std::uint64_t density_q = 0;
  std::uint64_t tau_net_q = 0;
  std::uint64_t tau_march_q = 0;
  std::uint64_t render_tau_net_q = 0;  // light-side network queries during the render phase
  double precompute_ms = 0;
  double render_ms = 0;
  double speedup_measured = 0;  // baseline total queries / this row's total queries
  double psi_predicted = 0;

  std::uint64_t total_queries() const { return density_q + tau_net_q + tau_march_q; }
};

/// Lat-long resolution W x H with W * H == l and W / H closest to 2 (in log
/// ratio; ties go to the smaller H).
inline std::pair<int, int> envmap_shape_for(int l) {
  if (l < 1) throw ValidationError("environment map size must be >= 1");
  int best = 1;
  double best_err = std::numeric_limits<double>::infinity();
  for (int h = 1; h <= l; ++h) {
    if (l % h) continue;
    const double err = std::abs(std::log(static_cast<double>(l / h) / h / 2.0));
    if (err < best_err - 1e-12) {
      best = h;
      best_err = err;
    }
  }
  return {l / best, best};
}

inline SweepRow sweep_row(const SweepSpec& spec, ProviderKind kind, int l) {
  const auto [ew, eh] = envmap_shape_for(l);
  const EnvMap env = procedural_envmap(ew, eh);
  const int mw = spec.map_width > 0 ? spec.map_width : spec.camera.width;
  const int mh = spec.map_height > 0 ? spec.map_height : spec.camera.height;
  TauProvider provider;
  switch (kind) {
    case ProviderKind::kOracle: provider = OracleMarch{spec.light_march}; break;
    case ProviderKind::kNeural: provider = NeuralPerPoint{spec.net}; break;
    case ProviderKind::kMap: provider = MapLookup{{}, spec.net, mw, mh}; break;
  }
  if (kind != ProviderKind::kOracle && !spec.net) throw ValidationError("sweep needs a transmittance network");
  RenderOptions opts;
  opts.n_samples = spec.n_samples;
  opts.seed = spec.seed;
  opts.threads = spec.threads;

  SweepRow row;
  row.provider = provider_name(kind);
  row.l = l;
  row.m_map = kind == ProviderKind::kMap ? static_cast<std::uint64_t>(mw) * mh : 0;
  row.n = spec.n_samples;
  row.c = spec.camera.pixels();
  row.psi_predicted = predicted_speedup(l, static_cast<double>(row.c), spec.n_samples);
  for (int rep = 0; rep < std::max(1, spec.repetitions); ++rep) {
    const RenderResult r = render_envmap(spec.scene, spec.camera, env, provider, opts);
    if (rep == 0) {
      row.density_q = r.stats.density_queries();
      row.tau_net_q = r.stats.tau_network_queries();
      row.tau_march_q = r.stats.tau_march_sample_queries();
      row.render_tau_net_q = r.stats.render.tau_network_queries;
      row.precompute_ms = r.stats.precompute.wall_ms;
      row.render_ms = r.stats.render.wall_ms;
    } else {
      row.precompute_ms = std::min(row.precompute_ms, r.stats.precompute.wall_ms);
      row.render_ms = std::min(row.render_ms, r.stats.render.wall_ms);
    }
  }
  return row;
}

/// One row per (l, provider). The per-point neural provider is the baseline
/// for measured speedup and is always run, reported only if requested.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec) {
  if (spec.repetitions < 1) throw ValidationError("repetitions must be >= 1");
  if (spec.l_values.empty()) throw ValidationError("sweep needs at least one environment-map size");
  std::vector<SweepRow> rows;
  for (int l : spec.l_values) {
    const SweepRow baseline = sweep_row(spec, ProviderKind::kNeural, l);
    for (ProviderKind k : spec.providers) {
      SweepRow row = k == ProviderKind::kNeural ? baseline : sweep_row(spec, k, l);
      row.speedup_measured =
          static_cast<double>(baseline.total_queries()) / static_cast<double>(std::max<std::uint64_t>(1, row.total_queries()));
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "provider,l,m_map,n,c,density_q,tau_net_q,tau_march_q,precompute_ms,render_ms,speedup_measured,psi_predicted\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%llu,%d,%llu,%llu,%llu,%llu,%.3f,%.3f,%.6f,%.6f\n", r.provider.c_str(), r.l,
                  static_cast<unsigned long long>(r.m_map), r.n, static_cast<unsigned long long>(r.c),
                  static_cast<unsigned long long>(r.density_q), static_cast<unsigned long long>(r.tau_net_q),
                  static_cast<unsigned long long>(r.tau_march_q), r.precompute_ms, r.render_ms, r.speedup_measured,
                  r.psi_predicted);
    out << buf;
  }
}

}  // namespace ntrans
