#pragma once

// Ray-marched ground truth: transmittance by midpoint/stratified quadrature
// and the matching alpha-compositing weights.

#include "ntrans/raygeom.hpp"
#include "ntrans/scene.hpp"

#include <concepts>
#include <random>

namespace ntrans {

enum class Jitter { kOff, kStratified };

struct MarchConfig {
  int n_samples = 192;
  Jitter jitter = Jitter::kOff;
  std::uint64_t rng_seed = 0;
};

struct MarchSample {
  double t = 0;      // sample position along the ray
  double dt = 0;     // segment length
  double sigma = 0;  // density at the sample
  double tau = 1;    // transmittance at the end of this segment
};

/// Marches origin + t*dir over [0, t_max] with n equal segments and one
/// density sample per segment (segment midpoint, or uniform within it when
/// stratified). stream selects the jitter sequence, so each ray can draw from
/// its own stream independent of evaluation order.
template <typename DensityFn>
  requires std::invocable<DensityFn&, const Vec3&>
std::vector<MarchSample> transmittance_march(DensityFn&& density, const Vec3& origin, const Vec3& dir, double t_max,
                                             const MarchConfig& cfg, std::uint64_t stream = 0) {
  if (cfg.n_samples < 2) throw Error("MarchConfig.n_samples must be >= 2");
  if (!(t_max > 0)) throw Error("t_max must be > 0");
  const int n = cfg.n_samples;
  const double dt = t_max / n;
  std::vector<MarchSample> out(static_cast<std::size_t>(n));
  std::mt19937_64 rng(mix_seed(cfg.rng_seed, stream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double optical = 0.0;
  for (int j = 0; j < n; ++j) {
    const double u = cfg.jitter == Jitter::kStratified ? unit(rng) : 0.5;
    const double t = (j + u) * dt;
    const double sigma = density(Vec3(origin + t * dir));
    optical += sigma * dt;
    out[static_cast<std::size_t>(j)] = MarchSample{t, dt, sigma, std::exp(-optical)};
  }
  return out;
}

inline std::vector<MarchSample> transmittance_march(const Scene& scene, const Vec3& origin, const Vec3& dir,
                                                    double t_max, const MarchConfig& cfg, std::uint64_t stream = 0) {
  return transmittance_march([&](const Vec3& x) { return scene.density(x); }, origin, dir, t_max, cfg, stream);
}

/// w_j = T_j (1 - exp(-sigma_j dt_j)) with T_j the transmittance entering
/// segment j. Telescopes to sum w_j = 1 - tau_final.
inline std::vector<double> quadrature_weights(const std::vector<MarchSample>& samples) {
  std::vector<double> w(samples.size());
  double before = 1.0;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    w[j] = before - samples[j].tau;
    before = samples[j].tau;
  }
  return w;
}

/// Samples along the whole chord of ray, with t re-expressed as the signed
/// ray coordinate (entry at -h).
template <typename DensityFn>
  requires std::invocable<DensityFn&, const Vec3&>
std::vector<MarchSample> chord_profile(DensityFn&& density, const TwoSphereRay& ray, const MarchConfig& cfg,
                                       std::uint64_t stream = 0) {
  const RayFrame f = ray_frame(ray);
  auto samples = transmittance_march(density, ray.omega1, f.direction, 2.0 * f.half_length, cfg, stream);
  for (auto& s : samples) s.t -= f.half_length;
  return samples;
}

inline std::vector<MarchSample> chord_profile(const Scene& scene, const TwoSphereRay& ray, const MarchConfig& cfg,
                                              std::uint64_t stream = 0) {
  return chord_profile([&](const Vec3& x) { return scene.density(x); }, ray, cfg, stream);
}

/// Transmittance from the chord entry to depth t_prime.
inline double oracle_tau_on_two_sphere(const Scene& scene, const TwoSphereRay& ray, double t_prime,
                                       const MarchConfig& cfg, std::uint64_t stream = 0) {
  const RayFrame f = ray_frame(ray);
  if (std::abs(t_prime) > f.half_length + 1e-12) throw OutOfChord("ray coordinate outside chord");
  const double len = t_prime + f.half_length;
  if (len <= 0) return 1.0;
  return transmittance_march(scene, ray.omega1, f.direction, len, cfg, stream).back().tau;
}

}  // namespace ntrans
