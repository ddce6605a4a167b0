#pragma once

// Two-sphere ray parameterization. A ray through the scene is stored as the
// two points where it crosses the unit sphere; depths along it are measured
// from the chord midpoint.

#include "ntrans/common.hpp"

#include <optional>

namespace ntrans {

inline constexpr double kTangencyEps = 1e-12;

struct TwoSphereRay {
  Vec3 omega1;  // entry
  Vec3 omega2;  // exit
};

struct RayFrame {
  Vec3 origin;     // chord midpoint
  Vec3 direction;  // unit, omega1 -> omega2
  double half_length = 0;
};

/// Intersects origin + t*direction with the unit sphere. Returns nullopt when
/// the ray misses or only grazes it.
inline std::optional<TwoSphereRay> to_two_sphere(const Vec3& origin, const Vec3& direction) {
  // |o + t d|^2 = 1 with |d| = 1  ->  t^2 + 2 (o.d) t + |o|^2 - 1 = 0
  const double half_b = origin.dot(direction);
  const double c = origin.squaredNorm() - 1.0;
  const double disc = half_b * half_b - c;
  if (disc <= kTangencyEps) return std::nullopt;
  const double root = std::sqrt(disc);
  // Numerically stable pair of roots.
  const double q = half_b > 0 ? -(half_b + root) : -(half_b - root);
  double t0 = q;
  double t1 = c / q;
  if (q == 0) {
    t0 = -root;
    t1 = root;
  }
  if (t0 > t1) std::swap(t0, t1);
  Vec3 p0 = origin + t0 * direction;
  Vec3 p1 = origin + t1 * direction;
  return TwoSphereRay{p0.normalized(), p1.normalized()};
}

inline RayFrame ray_frame(const TwoSphereRay& ray) {
  const Vec3 chord = ray.omega2 - ray.omega1;
  const double len = chord.norm();
  if (len < 1e-9) throw DegenerateRay("ray endpoints coincide");
  return RayFrame{0.5 * (ray.omega1 + ray.omega2), chord / len, 0.5 * len};
}

/// Signed depth of the orthogonal projection of point onto the ray line.
inline double to_ray_coord(const RayFrame& frame, const Vec3& point) {
  return (point - frame.origin).dot(frame.direction);
}

inline Vec3 ray_point(const RayFrame& frame, double t) {
  return frame.origin + t * frame.direction;
}

}  // namespace ntrans
