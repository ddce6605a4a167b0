#pragma once

#include "ntrans/neuraltau.hpp"

#include <random>

namespace ntrans::testing {

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  return Vec3(g(rng), g(rng), g(rng)).normalized();
}

inline Vec3 random_in_ball(std::mt19937_64& rng, double radius) {
  std::uniform_real_distribution<double> u(-radius, radius);
  for (;;) {
    const Vec3 x(u(rng), u(rng), u(rng));
    if (x.norm() <= radius) return x;
  }
}

inline std::vector<Camera> training_cameras() { return orbit_cameras(30, 3.0, 64, 64); }

// Short oracle-direct fit on the sphere scene, shared within a test binary.
inline const TauNet& sphere_net() {
  static const TauNet net = [] {
    TrainConfig cfg;
    cfg.iterations = 2000;
    cfg.log_every = 0;
    cfg.heldout_rays = 0;
    return train(*builtin_scene("sphere"), training_cameras(), cfg).net;
  }();
  return net;
}

}  // namespace ntrans::testing
