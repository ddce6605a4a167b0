#pragma once

// Analytic volumetric scenes: smooth signed-distance primitives inside the
// unit sphere, plus the plain-text config format used to describe them.
//
// Config grammar (one statement per line, '#' starts a comment):
//
//   background = <r> <g> <b>          optional, defaults to 0 0 0
//   [sphere]                          starts a sphere primitive
//   [box]                             starts a box primitive
//   center = <x> <y> <z>
//   radius = <r>                      sphere only
//   half_extents = <hx> <hy> <hz>     box only
//   sigma_max = <s>                   peak density, > 0
//   sharpness = <k>                   boundary sharpness, > 0
//   albedo = <r> <g> <b>              each in [0, 1]
//
// Every field of a primitive is required.

#include "ntrans/common.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace ntrans {

enum class Shape { kSphere, kBox };

struct Primitive {
  Shape shape = Shape::kSphere;
  Vec3 center = Vec3::Zero();
  double radius = 0;                  // sphere
  Vec3 half_extents = Vec3::Zero();   // box
  double sigma_max = 0;
  double sharpness = 0;
  Rgb albedo = Rgb::Zero();

  // Signed distance, negative inside. Lipschitz-1 for both shapes.
  double sdf(const Vec3& x) const {
    if (shape == Shape::kSphere) return (x - center).norm() - radius;
    const Vec3 q = (x - center).cwiseAbs() - half_extents;
    return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
  }

  // Unnormalized SDF gradient; zero on the singular set.
  Vec3 sdf_gradient(const Vec3& x) const {
    const Vec3 rel = x - center;
    if (shape == Shape::kSphere) return rel;
    const Vec3 q = rel.cwiseAbs() - half_extents;
    const Vec3 sign(std::copysign(1.0, rel.x()), std::copysign(1.0, rel.y()), std::copysign(1.0, rel.z()));
    if (q.maxCoeff() > 0) return q.cwiseMax(0.0).cwiseProduct(sign);
    Eigen::Index axis = 0;
    q.maxCoeff(&axis);
    // Equidistant faces (edges, center) have no well-defined gradient.
    for (Eigen::Index i = 0; i < 3; ++i)
      if (i != axis && q[i] == q[axis]) return Vec3::Zero();
    Vec3 g = Vec3::Zero();
    g[axis] = sign[axis];
    return g;
  }

  double density(const Vec3& x) const { return sigma_max * sigmoid(-sharpness * sdf(x)); }

  // Radius of the smallest origin-centered ball containing the primitive.
  double extent() const {
    return center.norm() + (shape == Shape::kSphere ? radius : half_extents.norm());
  }
};

class Scene {
 public:
  std::vector<Primitive> primitives;
  Rgb background = Rgb::Zero();

  /// Index of the primitive with the largest density contribution at x;
  /// ties go to the earlier primitive. nullopt outside the unit ball or
  /// for an empty scene.
  std::optional<std::size_t> dominant(const Vec3& x) const {
    if (x.squaredNorm() > 1.0 || primitives.empty()) return std::nullopt;
    std::size_t best = 0;
    double best_sigma = primitives[0].density(x);
    for (std::size_t i = 1; i < primitives.size(); ++i) {
      const double s = primitives[i].density(x);
      if (s > best_sigma) {
        best_sigma = s;
        best = i;
      }
    }
    return best;
  }

  double density(const Vec3& x) const {
    if (x.squaredNorm() > 1.0) return 0.0;
    double sigma = 0.0;
    for (const auto& p : primitives) sigma = std::max(sigma, p.density(x));
    return sigma;
  }

  Vec3 normal(const Vec3& x) const {
    const Vec3 up(0, 0, 1);
    if (primitives.empty()) return up;
    std::size_t idx = 0;
    if (auto d = dominant(x)) idx = *d;
    const Vec3 g = primitives[idx].sdf_gradient(x);
    const double len = g.norm();
    if (len < 1e-12) return up;
    return g / len;
  }

  Rgb albedo(const Vec3& x) const {
    auto d = dominant(x);
    if (!d) return Rgb::Zero();
    return primitives[*d].albedo;
  }

  void validate() const {
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      const auto& p = primitives[i];
      const std::string where = "primitive " + std::to_string(i) + ": ";
      if (!(p.sigma_max > 0)) throw ValidationError(where + "sigma_max must be > 0");
      if (!(p.sharpness > 0)) throw ValidationError(where + "sharpness must be > 0");
      if (p.shape == Shape::kSphere && !(p.radius > 0)) throw ValidationError(where + "radius must be > 0");
      if (p.shape == Shape::kBox && !(p.half_extents.minCoeff() > 0))
        throw ValidationError(where + "half_extents must be > 0");
      if ((p.albedo < 0).any() || (p.albedo > 1).any()) throw ValidationError(where + "albedo must lie in [0, 1]");
      if (p.extent() > 1.0 + 1e-12) throw ValidationError(where + "outside unit sphere");
    }
    if ((background < 0).any() || !background.allFinite())
      throw ValidationError("background must be finite and nonnegative");
  }
};

namespace detail {

template <int N>
std::array<double, N> parse_numbers(const std::string& value, int line, const std::string& key) {
  std::istringstream in(value);
  std::array<double, N> out{};
  for (int i = 0; i < N; ++i) {
    if (!(in >> out[i]))
      throw ParseError("line " + std::to_string(line) + ": field '" + key + "' expects " + std::to_string(N) +
                       " number(s)");
  }
  std::string rest;
  if (in >> rest)
    throw ParseError("line " + std::to_string(line) + ": field '" + key + "' has trailing text '" + rest + "'");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline Scene parse_scene(std::istream& in) {
  Scene scene;
  struct Pending {
    Primitive prim;
    int line = 0;
    std::map<std::string, bool> seen;
  };
  std::optional<Pending> cur;

  auto finish = [&] {
    if (!cur) return;
    std::vector<std::string> required = {"center", "sigma_max", "sharpness", "albedo"};
    required.push_back(cur->prim.shape == Shape::kSphere ? "radius" : "half_extents");
    for (const auto& key : required)
      if (!cur->seen.count(key))
        throw ParseError("line " + std::to_string(cur->line) + ": primitive missing field '" + key + "'");
    scene.primitives.push_back(cur->prim);
    cur.reset();
  };

  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    const std::string text = detail::trim(raw);
    if (text.empty()) continue;
    if (text.front() == '[') {
      finish();
      Pending p;
      p.line = line;
      if (text == "[sphere]") p.prim.shape = Shape::kSphere;
      else if (text == "[box]") p.prim.shape = Shape::kBox;
      else throw ParseError("line " + std::to_string(line) + ": unknown section '" + text + "'");
      cur = p;
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(line) + ": expected 'key = value'");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (!cur) {
      if (key != "background") throw ParseError("line " + std::to_string(line) + ": unknown field '" + key + "'");
      auto v = detail::parse_numbers<3>(value, line, key);
      scene.background = Rgb(v[0], v[1], v[2]);
      continue;
    }
    auto& prim = cur->prim;
    if (cur->seen.count(key)) throw ParseError("line " + std::to_string(line) + ": duplicate field '" + key + "'");
    if (key == "center") {
      auto v = detail::parse_numbers<3>(value, line, key);
      prim.center = Vec3(v[0], v[1], v[2]);
    } else if (key == "radius" && prim.shape == Shape::kSphere) {
      prim.radius = detail::parse_numbers<1>(value, line, key)[0];
    } else if (key == "half_extents" && prim.shape == Shape::kBox) {
      auto v = detail::parse_numbers<3>(value, line, key);
      prim.half_extents = Vec3(v[0], v[1], v[2]);
    } else if (key == "sigma_max") {
      prim.sigma_max = detail::parse_numbers<1>(value, line, key)[0];
    } else if (key == "sharpness") {
      prim.sharpness = detail::parse_numbers<1>(value, line, key)[0];
    } else if (key == "albedo") {
      auto v = detail::parse_numbers<3>(value, line, key);
      prim.albedo = Rgb(v[0], v[1], v[2]);
    } else {
      throw ParseError("line " + std::to_string(line) + ": unknown field '" + key + "'");
    }
    cur->seen[key] = true;
  }
  finish();
  scene.validate();
  return scene;
}

inline Scene parse_scene(const std::string& text) {
  std::istringstream in(text);
  return parse_scene(in);
}

inline Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scene file '" + path.string() + "'");
  return parse_scene(in);
}

/// Desk-scale scenes that ship with the library.
inline std::optional<Scene> builtin_scene(const std::string& name) {
  if (name == "empty") return parse_scene(std::string{});
  if (name == "sphere")
    return parse_scene(R"([sphere]
center = 0 0 0
radius = 0.5
sigma_max = 50
sharpness = 200
albedo = 0.8 0.1 0.1
)");
  if (name == "two-spheres")
    return parse_scene(R"([sphere]
center = -0.4 0 0
radius = 0.35
sigma_max = 50
sharpness = 200
albedo = 0.8 0.1 0.1
[sphere]
center = 0.45 0.1 0
radius = 0.3
sigma_max = 50
sharpness = 200
albedo = 0.1 0.3 0.8
)");
  if (name == "box-occluder")
    return parse_scene(R"([sphere]
center = 0 0 -0.3
radius = 0.35
sigma_max = 50
sharpness = 200
albedo = 0.7 0.7 0.7
[box]
center = 0 0 0.4
half_extents = 0.3 0.3 0.05
sigma_max = 80
sharpness = 300
albedo = 0.2 0.6 0.2
)");
  return std::nullopt;
}

/// Resolves a builtin scene name, falling back to a config file path.
inline Scene scene_by_name_or_path(const std::string& ref) {
  if (auto s = builtin_scene(ref)) return *s;
  return load_scene(ref);
}

}  // namespace ntrans
