#pragma once

// Precomputed transmittance maps. For each light, a W x H grid of rays that
// covers the unit sphere stores the logistic parameters predicted by the
// transmittance network. Transmittance at an arbitrary point is then the
// bilinear blend of the four surrounding rays evaluated at the point's depth,
// with no network query at render time.
//
// Point lights: the grid is a virtual image plane at the light, aimed at the
// origin, wide enough for the sphere's silhouette plus a 5% margin.
// Directional lights: the grid spans the bounding square of the unit disc
// perpendicular to the light through the origin; rays are parallel to the
// light. Cells whose ray misses the sphere are marked free space (tau = 1).

#include "ntrans/neuraltau.hpp"
#include "ntrans/stats.hpp"

#include <array>
#include <fstream>

namespace ntrans {

enum class LightKind : std::uint8_t { kPoint = 0, kDirectional = 1 };

struct LightDesc {
  LightKind kind = LightKind::kDirectional;
  Vec3 position = Vec3::Zero();        // point
  Vec3 direction = Vec3(0, 0, -1);     // directional: the direction light travels
  Rgb radiance = Rgb::Ones();          // intensity for point lights

  static LightDesc point(const Vec3& pos, const Rgb& intensity) {
    return {LightKind::kPoint, pos, Vec3(0, 0, -1), intensity};
  }
  static LightDesc directional(const Vec3& travel, const Rgb& radiance) {
    return {LightKind::kDirectional, Vec3::Zero(), travel.normalized(), radiance};
  }

  void validate() const {
    if (kind == LightKind::kPoint) {
      if (position.norm() <= 1.0) throw LightInsideSphere("point light must lie outside the unit sphere");
    } else if (std::abs(direction.norm() - 1.0) > 1e-9) {
      throw ValidationError("light direction must be unit length");
    }
    if ((radiance < 0).any() || !radiance.allFinite()) throw ValidationError("light radiance must be >= 0");
  }

  /// Unit direction in which light travels when it reaches x.
  Vec3 travel_at(const Vec3& x) const {
    return kind == LightKind::kPoint ? Vec3((x - position).normalized()) : direction;
  }

  /// The ray from the light through x, in two-sphere form.
  std::optional<TwoSphereRay> ray_through(const Vec3& x) const {
    if (kind == LightKind::kPoint) return to_two_sphere(position, (x - position).normalized());
    return to_two_sphere(x - 3.0 * direction, direction);
  }
};

struct TransmittanceMap {
  LightDesc light;
  int width = 0;
  int height = 0;
  // Grid frame. forward is the central ray direction; cell (i, j) sits at
  // plane coordinates (s_i, s_j) * scale along (u, v), where
  // s_i = 2 (i + 0.5) / width - 1. For point lights scale is the tangent of
  // the half field of view; for directional lights it is the disc radius.
  Vec3 forward = Vec3(0, 0, -1);
  Vec3 u = Vec3(1, 0, 0);
  Vec3 v = Vec3(0, 1, 0);
  double scale = 1;
  std::vector<TauParams> params;       // row-major, index j * width + i
  std::vector<std::uint8_t> free_space;
  std::vector<RayFrame> frames;        // cell ray frames, derived from the grid

  std::size_t cells() const { return static_cast<std::size_t>(width) * height; }

  std::size_t covered() const {
    return static_cast<std::size_t>(std::count(free_space.begin(), free_space.end(), std::uint8_t{0}));
  }

  double plane_coord(int i, int n) const { return (2.0 * (i + 0.5) / n - 1.0) * scale; }

  /// Origin and direction of the ray stored at cell (i, j).
  std::pair<Vec3, Vec3> cell_ray(int i, int j) const {
    const double su = plane_coord(i, width);
    const double sv = plane_coord(j, height);
    if (light.kind == LightKind::kPoint) return {light.position, (forward + su * u + sv * v).normalized()};
    return {su * u + sv * v - 3.0 * forward, forward};
  }
};

/// Sets up the grid frame and per-cell rays, leaving params untouched.
inline void init_map_geometry(TransmittanceMap& map, std::vector<std::optional<TwoSphereRay>>* rays = nullptr) {
  if (map.width < 2 || map.height < 2) throw ValidationError("map grid must be at least 2x2");
  map.light.validate();
  if (map.light.kind == LightKind::kPoint) {
    const double d = map.light.position.norm();
    map.forward = -map.light.position / d;
    map.scale = 1.05 / std::sqrt(d * d - 1.0);
  } else {
    map.forward = map.light.direction;
    map.scale = 1.0;
  }
  orthonormal_basis(map.forward, map.u, map.v);
  map.frames.assign(map.cells(), RayFrame{});
  map.free_space.assign(map.cells(), 1);
  if (rays) rays->assign(map.cells(), std::nullopt);
  for (int j = 0; j < map.height; ++j)
    for (int i = 0; i < map.width; ++i) {
      const auto idx = static_cast<std::size_t>(j) * map.width + i;
      const auto [o, d] = map.cell_ray(i, j);
      if (auto r = to_two_sphere(o, d)) {
        map.frames[idx] = ray_frame(*r);
        map.free_space[idx] = 0;
        if (rays) (*rays)[idx] = *r;
      }
    }
}

/// One network query per covered cell.
inline TransmittanceMap build_map(const LightDesc& light, int width, int height, const TauNet& net,
                                  PhaseCounters* counters = nullptr, unsigned threads = 1) {
  TransmittanceMap map;
  map.light = light;
  map.width = width;
  map.height = height;
  std::vector<std::optional<TwoSphereRay>> rays;
  init_map_geometry(map, &rays);
  map.params.assign(map.cells(), TauParams{0, 0});

  std::vector<TwoSphereRay> hits;
  std::vector<std::size_t> where;
  for (std::size_t k = 0; k < rays.size(); ++k)
    if (rays[k]) {
      hits.push_back(*rays[k]);
      where.push_back(k);
    }
  const std::size_t chunks = (hits.size() + kPredictChunk - 1) / kPredictChunk;
  parallel_chunks(chunks, threads, [&](std::size_t c) {
    const std::size_t start = c * kPredictChunk;
    const std::size_t n = std::min(kPredictChunk, hits.size() - start);
    const auto p = predict_batch(net, std::span<const TwoSphereRay>(hits).subspan(start, n));
    for (std::size_t i = 0; i < n; ++i) map.params[where[start + i]] = p[i];
  });
  if (counters) counters->tau_network_queries += hits.size();
  return map;
}

struct NearestSet {
  std::array<std::size_t, 4> index{};   // (i0,j0), (i0+1,j0), (i0,j0+1), (i0+1,j0+1)
  std::array<TauParams, 4> params{};
  std::array<double, 4> t{};            // signed ray coordinate of each point
  std::array<Vec3, 4> points{};         // x_k on each ray, in the plane through x
  std::array<bool, 4> free{};
  double alpha = 0;                     // blend along u
  double beta = 0;                      // blend along v

  std::array<double, 4> weights() const {
    return {(1 - alpha) * (1 - beta), alpha * (1 - beta), (1 - alpha) * beta, alpha * beta};
  }
};

namespace detail {

// Continuous grid coordinate of plane coordinate s; cell centers are integers.
inline double grid_coord(double s, double scale, int n) { return (s / scale + 1.0) * 0.5 * n - 0.5; }

}  // namespace detail

inline NearestSet nearest(const Vec3& x, const TransmittanceMap& map) {
  double su = 0;
  double sv = 0;
  if (map.light.kind == LightKind::kPoint) {
    const Vec3 d = x - map.light.position;
    const double depth = d.dot(map.forward);
    if (depth <= 0) throw OutsideMap("point behind the light's image plane");
    su = d.dot(map.u) / depth;
    sv = d.dot(map.v) / depth;
  } else {
    su = x.dot(map.u);
    sv = x.dot(map.v);
  }
  double gx = detail::grid_coord(su, map.scale, map.width);
  double gy = detail::grid_coord(sv, map.scale, map.height);
  const double eps = 1e-9;
  if (!(gx >= -0.5 - eps && gx <= map.width - 0.5 + eps && gy >= -0.5 - eps && gy <= map.height - 0.5 + eps))
    throw OutsideMap("point projects outside the transmittance map");
  gx = std::clamp(gx, 0.0, map.width - 1.0);
  gy = std::clamp(gy, 0.0, map.height - 1.0);
  const int i0 = std::min(static_cast<int>(gx), map.width - 2);
  const int j0 = std::min(static_cast<int>(gy), map.height - 2);

  NearestSet ns;
  ns.alpha = gx - i0;
  ns.beta = gy - j0;
  const Vec3 travel = map.light.travel_at(x);
  for (int k = 0; k < 4; ++k) {
    const int i = i0 + (k & 1);
    const int j = j0 + (k >> 1);
    const auto idx = static_cast<std::size_t>(j) * map.width + i;
    ns.index[k] = idx;
    ns.free[k] = map.free_space[idx] != 0;
    const auto [o, d] = map.cell_ray(i, j);
    // Intersect the cell ray with the plane through x orthogonal to the
    // light's travel direction at x.
    const double denom = d.dot(travel);
    const double s = denom > 1e-12 ? (x - o).dot(travel) / denom : 0.0;
    ns.points[k] = o + s * d;
    if (!ns.free[k]) {
      ns.params[k] = map.params[idx];
      ns.t[k] = to_ray_coord(map.frames[idx], ns.points[k]);
    }
  }
  return ns;
}

inline double interp_tau(const NearestSet& ns) {
  const auto w = ns.weights();
  double tau = 0;
  for (int k = 0; k < 4; ++k) tau += w[k] * (ns.free[k] ? 1.0 : eval_tau(ns.params[k], ns.t[k]));
  return std::clamp(tau, 0.0, 1.0);
}

inline double interp_tau(const Vec3& x, const TransmittanceMap& map) { return interp_tau(nearest(x, map)); }

// ---------------------------------------------------------------------------
// Map file (little-endian):
//   char[4] "NTMP"; u32 version (1); u32 map count
//   per map:
//     u8 light kind (0 point, 1 directional)
//     3 x f64 position; 3 x f64 direction; 3 x f64 radiance
//     u32 width; u32 height
//     3 x f64 forward; 3 x f64 u; 3 x f64 v; f64 scale
//     width*height x (f64 a, f64 b), row-major (free cells hold 0, 0)
//     ceil(width*height / 8) bytes free-space bitmap, bit k%8 of byte k/8
// ---------------------------------------------------------------------------

inline void write_maps(std::ostream& out, const std::vector<TransmittanceMap>& maps) {
  out.write("NTMP", 4);
  io::put<std::uint32_t>(out, 1);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(maps.size()));
  auto put3 = [&](const auto& v) {
    for (int i = 0; i < 3; ++i) io::put<double>(out, v[i]);
  };
  for (const auto& m : maps) {
    io::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.light.kind));
    put3(m.light.position);
    put3(m.light.direction);
    put3(m.light.radiance);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.width));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.height));
    put3(m.forward);
    put3(m.u);
    put3(m.v);
    io::put<double>(out, m.scale);
    for (const auto& p : m.params) {
      io::put<double>(out, p.a);
      io::put<double>(out, p.b);
    }
    std::vector<std::uint8_t> bits((m.cells() + 7) / 8, 0);
    for (std::size_t k = 0; k < m.cells(); ++k)
      if (m.free_space[k]) bits[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
    out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  }
}

inline std::vector<TransmittanceMap> read_maps(std::istream& in) {
  io::expect_magic(in, "NTMP");
  if (const auto version = io::get<std::uint32_t>(in); version != 1)
    throw FormatError("unsupported map version " + std::to_string(version));
  const auto count = io::get<std::uint32_t>(in);
  auto get3 = [&] {
    Vec3 v;
    for (int i = 0; i < 3; ++i) v[i] = io::get<double>(in);
    return v;
  };
  std::vector<TransmittanceMap> maps;
  for (std::uint32_t c = 0; c < count; ++c) {
    TransmittanceMap m;
    const auto kind = io::get<std::uint8_t>(in);
    if (kind > 1) throw FormatError("unknown light kind");
    m.light.kind = static_cast<LightKind>(kind);
    m.light.position = get3();
    m.light.direction = get3();
    m.light.radiance = get3().array();
    m.width = static_cast<int>(io::get<std::uint32_t>(in));
    m.height = static_cast<int>(io::get<std::uint32_t>(in));
    if (m.width < 2 || m.height < 2 || m.cells() > (1u << 26)) throw FormatError("implausible map size");
    // Stored frame is informational; the grid is re-derived from the light
    // so the lookup path always matches the build path.
    get3();
    get3();
    get3();
    io::get<double>(in);
    init_map_geometry(m);
    std::vector<std::uint8_t> stored_free = m.free_space;
    m.params.resize(m.cells());
    for (auto& p : m.params) {
      p.a = io::get<double>(in);
      p.b = io::get<double>(in);
    }
    std::vector<std::uint8_t> bits((m.cells() + 7) / 8);
    in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    if (!in) throw FormatError("unexpected end of file");
    for (std::size_t k = 0; k < m.cells(); ++k) {
      m.free_space[k] = (bits[k / 8] >> (k % 8)) & 1u;
      if (m.free_space[k] != stored_free[k]) throw FormatError("free-space bitmap disagrees with map geometry");
      if (!m.free_space[k] && !(m.params[k].a > 0 && std::abs(m.params[k].b) <= 1.0))
        throw FormatError("stored transmittance parameters out of range");
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

inline void save_maps(const std::string& path, const std::vector<TransmittanceMap>& maps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write map file '" + path + "'");
  write_maps(out, maps);
}

inline std::vector<TransmittanceMap> load_maps(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open map file '" + path + "'");
  return read_maps(in);
}

}  // namespace ntrans
