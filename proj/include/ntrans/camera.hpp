#pragma once

#include "ntrans/common.hpp"

#include <Eigen/Geometry>

#include <numbers>

namespace ntrans {

/// Pinhole camera. fov is the vertical field of view in radians; pixel
/// (0, 0) is the top-left corner of the image.
struct Camera {
  Vec3 position = Vec3(0, 0, 3);
  Vec3 right = Vec3(1, 0, 0);
  Vec3 up = Vec3(0, 1, 0);
  Vec3 forward = Vec3(0, 0, -1);
  double fov = 0.7;
  int width = 32;
  int height = 32;

  void validate() const {
    const double tol = 1e-9;
    if (std::abs(right.norm() - 1) > tol || std::abs(up.norm() - 1) > tol || std::abs(forward.norm() - 1) > tol ||
        std::abs(right.dot(up)) > tol || std::abs(right.dot(forward)) > tol || std::abs(up.dot(forward)) > tol)
      throw ValidationError("camera basis is not orthonormal");
    if (!(fov > 0 && fov < std::numbers::pi)) throw ValidationError("camera fov must lie in (0, pi)");
    if (width < 1 || height < 1) throw ValidationError("camera resolution must be positive");
  }

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  /// Unit direction through the center of pixel (px, py).
  Vec3 pixel_dir(double px, double py) const {
    const double tan_half = std::tan(0.5 * fov);
    const double aspect = static_cast<double>(width) / height;
    const double sx = (2.0 * (px + 0.5) / width - 1.0) * tan_half * aspect;
    const double sy = (1.0 - 2.0 * (py + 0.5) / height) * tan_half;
    return (forward + sx * right + sy * up).normalized();
  }
};

inline Camera look_at(const Vec3& eye, const Vec3& target, double fov, int width, int height,
                      const Vec3& world_up = Vec3(0, 1, 0)) {
  Camera c;
  c.position = eye;
  c.forward = (target - eye).normalized();
  Vec3 up_hint = world_up;
  if (std::abs(c.forward.dot(up_hint.normalized())) > 0.999) up_hint = Vec3(0, 0, 1);
  c.right = c.forward.cross(up_hint).normalized();
  c.up = c.right.cross(c.forward).normalized();
  c.fov = fov;
  c.width = width;
  c.height = height;
  c.validate();
  return c;
}

/// Vertical fov at which the unit sphere seen from distance d just fills
/// the frame (every pixel ray of a square image hits the sphere).
inline double full_frame_fov(double distance, int width, int height) {
  const double tan_sil = 1.0 / std::sqrt(distance * distance - 1.0);
  const double aspect = static_cast<double>(width) / height;
  // The image corner lies at (tan_half*aspect, tan_half) in the film plane.
  const double tan_half = 0.98 * tan_sil / std::sqrt(1.0 + aspect * aspect);
  return 2.0 * std::atan(tan_half);
}

/// Cameras on a Fibonacci sphere of the given radius, all aimed at the
/// origin with the unit sphere just fitting the frame.
inline std::vector<Camera> orbit_cameras(int count, double radius, int width, int height) {
  std::vector<Camera> cams;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double fov = 2.0 * std::asin(1.0 / radius) * 1.05;
  for (int i = 0; i < count; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(1.0 - y * y);
    const double phi = golden * i;
    cams.push_back(look_at(radius * Vec3(r * std::cos(phi), y, r * std::sin(phi)), Vec3::Zero(), fov, width, height));
  }
  return cams;
}

}  // namespace ntrans
