#pragma once

// Single-scattering volume renderer. Camera rays are always ray-marched
// against the scene; the transmittance from each light to each camera sample
// comes from a pluggable provider:
//
//   OracleMarch     march from the light to the sample
//   NeuralPerPoint  one transmittance-network query per (sample, light)
//   MapLookup       bilinear lookup in a per-light transmittance map
//
// Reflectance is Lambertian with the scene's analytic normals.

#include "ntrans/camera.hpp"
#include "ntrans/oracle.hpp"
#include "ntrans/stats.hpp"
#include "ntrans/tmap.hpp"

#include <chrono>
#include <fstream>
#include <memory>
#include <sstream>
#include <variant>

namespace ntrans {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;  // linear radiance, row-major, 3 per pixel

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0) {}

  Rgb at(int x, int y) const {
    const auto k = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[k], rgb[k + 1], rgb[k + 2]};
  }
  void set(int x, int y, const Rgb& c) {
    const auto k = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[k] = c[0];
    rgb[k + 1] = c[1];
    rgb[k + 2] = c[2];
  }
};

/// Reflected radiance at x toward the camera from one light, given the
/// transmittance between the light and x.
inline Rgb shade(const Rgb& albedo, const Vec3& normal, const Vec3& x, const LightDesc& light, double tau) {
  if (light.kind == LightKind::kPoint) {
    const Vec3 to_light = light.position - x;
    const double dist2 = to_light.squaredNorm();
    const double cosine = std::max(0.0, normal.dot(to_light / std::sqrt(dist2)));
    return tau * (albedo / std::numbers::pi) * cosine * light.radiance / dist2;
  }
  const double cosine = std::max(0.0, normal.dot(-light.direction));
  return tau * (albedo / std::numbers::pi) * cosine * light.radiance;
}

inline Rgb shade(const Scene& scene, const Vec3& x, const LightDesc& light, double tau) {
  return shade(scene.albedo(x), scene.normal(x), x, light, tau);
}

struct OracleMarch {
  MarchConfig cfg;
};

struct NeuralPerPoint {
  std::shared_ptr<const TauNet> net;
};

struct MapLookup {
  std::vector<TransmittanceMap> maps;  // one per light, in light order
  std::shared_ptr<const TauNet> net;   // used to build maps when none are given
  int width = 64;
  int height = 64;
};

using TauProvider = std::variant<OracleMarch, NeuralPerPoint, MapLookup>;

struct RenderOptions {
  int n_samples = 192;
  Jitter jitter = Jitter::kOff;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: TRANSMIT_THREADS or hardware
};

struct RenderResult {
  Image image;
  QueryStats stats;
};

namespace detail {

struct CameraSample {
  std::size_t pixel;
  Vec3 x;
  double weight;
  Rgb albedo;
  Vec3 normal;
};

inline constexpr std::size_t kPixelChunk = 16;

// Light-side transmittance for a batch of points toward one light.
class TauEvaluator {
 public:
  TauEvaluator(const TauProvider& p, PhaseCounters& c) : provider_(p), counters_(c) {}

  void eval(const Scene& scene, const LightDesc& light, std::size_t light_index, std::span<const CameraSample> samples,
            std::vector<double>& tau) const {
    tau.assign(samples.size(), 1.0);
    std::visit([&](const auto& p) { run(p, scene, light, light_index, samples, tau); }, provider_);
  }

 private:
  void run(const OracleMarch& p, const Scene& scene, const LightDesc& light, std::size_t,
           std::span<const CameraSample> samples, std::vector<double>& tau) const {
    std::uint64_t marched = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto ray = light.ray_through(samples[i].x);
      if (!ray) {
        ++counters_.provider_failures;
        continue;
      }
      const RayFrame f = ray_frame(*ray);
      const double len = to_ray_coord(f, samples[i].x) + f.half_length;
      if (len <= 0) continue;
      tau[i] = transmittance_march(scene, ray->omega1, f.direction, len, p.cfg, samples[i].pixel).back().tau;
      marched += static_cast<std::uint64_t>(p.cfg.n_samples);
    }
    counters_.tau_march_sample_queries += marched;
  }

  void run(const NeuralPerPoint& p, const Scene&, const LightDesc& light, std::size_t,
           std::span<const CameraSample> samples, std::vector<double>& tau) const {
    std::vector<TwoSphereRay> rays;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (auto r = light.ray_through(samples[i].x)) {
        rays.push_back(*r);
        where.push_back(i);
      } else {
        ++counters_.provider_failures;
      }
    }
    const auto params = predict_batch(*p.net, rays);
    counters_.tau_network_queries += rays.size();
    for (std::size_t k = 0; k < rays.size(); ++k) {
      const std::size_t i = where[k];
      tau[i] = eval_tau(params[k], to_ray_coord(ray_frame(rays[k]), samples[i].x));
    }
  }

  void run(const MapLookup& p, const Scene&, const LightDesc&, std::size_t light_index,
           std::span<const CameraSample> samples, std::vector<double>& tau) const {
    const TransmittanceMap& map = p.maps[light_index];
    for (std::size_t i = 0; i < samples.size(); ++i) {
      try {
        tau[i] = interp_tau(samples[i].x, map);
      } catch (const OutsideMap&) {
        ++counters_.provider_failures;
      }
    }
  }

  const TauProvider& provider_;
  PhaseCounters& counters_;
};

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

inline RenderResult render(const Scene& scene, const Camera& camera, const std::vector<LightDesc>& lights,
                           TauProvider provider, const RenderOptions& opts = {}) {
  camera.validate();
  for (const auto& l : lights) l.validate();
  const unsigned threads = resolve_threads(opts.threads);
  MarchConfig cam_cfg{opts.n_samples, opts.jitter, opts.seed};

  RenderResult out;
  PhaseCounters pre;
  PhaseCounters ren;

  // Precompute phase: transmittance maps, one per light.
  const auto t_pre = std::chrono::steady_clock::now();
  if (auto* ml = std::get_if<MapLookup>(&provider)) {
    if (ml->maps.empty() && !lights.empty()) {
      if (!ml->net) throw ValidationError("MapLookup needs maps or a network to build them");
      for (const auto& l : lights) ml->maps.push_back(build_map(l, ml->width, ml->height, *ml->net, &pre, threads));
    }
    if (ml->maps.size() != lights.size()) throw ValidationError("MapLookup carries one map per light");
  }
  if (auto* nn = std::get_if<NeuralPerPoint>(&provider); nn && !nn->net)
    throw ValidationError("NeuralPerPoint needs a network");
  pre.wall_ms = detail::elapsed_ms(t_pre);

  const auto t_ren = std::chrono::steady_clock::now();
  Image img(camera.width, camera.height);
  const detail::TauEvaluator evaluator(provider, ren);
  const std::size_t n_pix = camera.pixels();
  const std::size_t chunks = (n_pix + detail::kPixelChunk - 1) / detail::kPixelChunk;

  parallel_chunks(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * detail::kPixelChunk;
    const std::size_t end = std::min(n_pix, begin + detail::kPixelChunk);
    std::vector<detail::CameraSample> samples;
    std::vector<Rgb> radiance(end - begin, Rgb::Zero());
    std::uint64_t density_q = 0;
    for (std::size_t pix = begin; pix < end; ++pix) {
      const int px = static_cast<int>(pix % camera.width);
      const int py = static_cast<int>(pix / camera.width);
      const Vec3 dir = camera.pixel_dir(px, py);
      auto ray = to_two_sphere(camera.position, dir);
      if (!ray) {
        radiance[pix - begin] = scene.background;
        continue;
      }
      const RayFrame f = ray_frame(*ray);
      const auto march = transmittance_march(scene, ray->omega1, f.direction, 2.0 * f.half_length, cam_cfg, pix);
      density_q += march.size();
      const auto w = quadrature_weights(march);
      for (std::size_t j = 0; j < march.size(); ++j) {
        const Vec3 x = ray->omega1 + march[j].t * f.direction;
        samples.push_back({pix, x, w[j], scene.albedo(x), scene.normal(x)});
      }
      radiance[pix - begin] = scene.background * march.back().tau;
    }
    ren.density_queries += density_q;

    std::vector<double> tau;
    for (std::size_t l = 0; l < lights.size(); ++l) {
      evaluator.eval(scene, lights[l], l, samples, tau);
      for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& cs = samples[s];
        radiance[cs.pixel - begin] += cs.weight * shade(cs.albedo, cs.normal, cs.x, lights[l], tau[s]);
      }
    }
    for (std::size_t pix = begin; pix < end; ++pix)
      img.set(static_cast<int>(pix % camera.width), static_cast<int>(pix / camera.width), radiance[pix - begin]);
  });
  ren.wall_ms = detail::elapsed_ms(t_ren);

  out.image = std::move(img);
  out.stats.precompute = snapshot(pre);
  out.stats.render = snapshot(ren);
  return out;
}

// ---------------------------------------------------------------------------
// Environment maps
//
// Text format: "<width> <height>" followed by width*height RGB triples in
// row-major order, row 0 at the top. Texel (i, j) is the direction
//   theta = pi (j + 0.5) / height      (polar angle from +y)
//   phi   = 2 pi (i + 0.5) / width
//   d     = (sin theta sin phi, cos theta, sin theta cos phi)
// and becomes a directional light arriving from d whose radiance is the
// texel value times the texel's solid angle.
// ---------------------------------------------------------------------------

struct EnvMap {
  int width = 0;
  int height = 0;
  std::vector<Rgb> texels;

  Rgb& at(int i, int j) { return texels[static_cast<std::size_t>(j) * width + i]; }
  const Rgb& at(int i, int j) const { return texels[static_cast<std::size_t>(j) * width + i]; }
};

inline EnvMap make_envmap(int width, int height, const Rgb& fill = Rgb::Zero()) {
  if (width < 1 || height < 1) throw ValidationError("environment map must be at least 1x1");
  return {width, height, std::vector<Rgb>(static_cast<std::size_t>(width) * height, fill)};
}

inline EnvMap parse_envmap(std::istream& in) {
  int w = 0;
  int h = 0;
  if (!(in >> w >> h) || w < 1 || h < 1) throw ParseError("environment map: expected positive '<width> <height>'");
  EnvMap env = make_envmap(w, h);
  for (std::size_t k = 0; k < env.texels.size(); ++k) {
    double r, g, b;
    if (!(in >> r >> g >> b))
      throw ParseError("environment map: expected " + std::to_string(env.texels.size()) + " RGB texels, got " +
                       std::to_string(k));
    env.texels[k] = Rgb(r, g, b);
    if ((env.texels[k] < 0).any() || !env.texels[k].allFinite())
      throw ValidationError("environment map texels must be finite and >= 0");
  }
  std::string rest;
  if (in >> rest) throw ParseError("environment map: trailing data");
  return env;
}

inline EnvMap load_envmap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open environment map '" + path + "'");
  return parse_envmap(in);
}

inline void write_envmap(std::ostream& out, const EnvMap& env) {
  out << env.width << ' ' << env.height << '\n';
  char buf[128];
  for (const auto& t : env.texels) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", t[0], t[1], t[2]);
    out << buf;
  }
}

inline Vec3 envmap_direction(const EnvMap& env, int i, int j) {
  const double theta = std::numbers::pi * (j + 0.5) / env.height;
  const double phi = 2.0 * std::numbers::pi * (i + 0.5) / env.width;
  return {std::sin(theta) * std::sin(phi), std::cos(theta), std::sin(theta) * std::cos(phi)};
}

inline double envmap_solid_angle(const EnvMap& env, int j) {
  const double t0 = std::numbers::pi * j / env.height;
  const double t1 = std::numbers::pi * (j + 1) / env.height;
  return 2.0 * std::numbers::pi / env.width * (std::cos(t0) - std::cos(t1));
}

/// One directional light per texel, row-major.
inline std::vector<LightDesc> envmap_lights(const EnvMap& env) {
  std::vector<LightDesc> lights;
  lights.reserve(env.texels.size());
  for (int j = 0; j < env.height; ++j)
    for (int i = 0; i < env.width; ++i)
      lights.push_back(LightDesc::directional(-envmap_direction(env, i, j), env.at(i, j) * envmap_solid_angle(env, j)));
  return lights;
}

inline RenderResult render_envmap(const Scene& scene, const Camera& camera, const EnvMap& env, TauProvider provider,
                                  const RenderOptions& opts = {}) {
  if (env.texels.empty()) throw ValidationError("environment map has no texels");
  return render(scene, camera, envmap_lights(env), std::move(provider), opts);
}

/// Smooth deterministic sky used by benchmarks: a bright patch over a dim
/// gradient, resampled to the requested resolution.
inline EnvMap procedural_envmap(int width, int height) {
  EnvMap env = make_envmap(width, height);
  const Vec3 sun = Vec3(0.5, 0.7, 0.5).normalized();
  for (int j = 0; j < height; ++j)
    for (int i = 0; i < width; ++i) {
      const Vec3 d = envmap_direction(env, i, j);
      const double sky = 0.15 + 0.1 * d.y();
      const double patch = std::pow(std::max(0.0, d.dot(sun)), 8.0);
      env.at(i, j) = Rgb(sky + 0.9 * patch, sky + 0.8 * patch, sky + 0.6 * patch);
    }
  return env;
}

// ---------------------------------------------------------------------------
// Image metrics
// ---------------------------------------------------------------------------

struct ImageMetrics {
  double rmse = 0;
  double ssim = 1;
};

inline double luma(const Rgb& c) { return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]; }

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5) of
/// the luma channel, dynamic range 1. The window shrinks for images smaller
/// than 11 pixels on a side.
inline double ssim(const Image& img, const Image& ref) {
  if (img.width != ref.width || img.height != ref.height) throw DimensionMismatch("images differ in size");
  int win = std::min({11, img.width, img.height});
  if (win % 2 == 0) --win;
  const int r = win / 2;
  std::vector<double> kernel(static_cast<std::size_t>(win) * win);
  double ksum = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      kernel[static_cast<std::size_t>(dy + r) * win + (dx + r)] = g;
      ksum += g;
    }
  for (auto& k : kernel) k /= ksum;
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double total = 0;
  int count = 0;
  for (int cy = r; cy + r < img.height; ++cy)
    for (int cx = r; cx + r < img.width; ++cx) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double k = kernel[static_cast<std::size_t>(dy + r) * win + (dx + r)];
          const double a = luma(img.at(cx + dx, cy + dy));
          const double b = luma(ref.at(cx + dx, cy + dy));
          mx += k * a;
          my += k * b;
          sxx += k * a * a;
          syy += k * b * b;
          sxy += k * a * b;
        }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cov = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return count ? total / count : 1.0;
}

inline double rmse(const Image& img, const Image& ref) {
  if (img.width != ref.width || img.height != ref.height) throw DimensionMismatch("images differ in size");
  if (img.rgb.empty()) return 0;
  double sum = 0;
  for (std::size_t k = 0; k < img.rgb.size(); ++k) {
    const double d = img.rgb[k] - ref.rgb[k];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(img.rgb.size()));
}

inline ImageMetrics metrics(const Image& img, const Image& ref) { return {rmse(img, ref), ssim(img, ref)}; }

// ---------------------------------------------------------------------------
// Image files
//
// PPM: binary P6, maxval 255. Each channel is scaled by 2^exposure, encoded
// with the sRGB transfer curve, clamped to [0, 1] and rounded to 8 bits.
//
// Raw dump (little-endian): char[4] "NTIM"; u32 version (1); u32 width;
// u32 height; width*height*3 x f64 linear radiance, row-major RGB.
// ---------------------------------------------------------------------------

inline double linear_to_srgb(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline void write_ppm(std::ostream& out, const Image& img, double exposure = 0.0) {
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  const double gain = std::exp2(exposure);
  std::vector<unsigned char> bytes(img.rgb.size());
  for (std::size_t k = 0; k < img.rgb.size(); ++k)
    bytes[k] = static_cast<unsigned char>(std::lround(255.0 * linear_to_srgb(img.rgb[k] * gain)));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_raw(std::ostream& out, const Image& img) {
  out.write("NTIM", 4);
  io::put<std::uint32_t>(out, 1);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(img.width));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(img.height));
  io::put_doubles(out, img.rgb.data(), img.rgb.size());
}

namespace detail {

inline std::string ppm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace detail

/// Reads either a raw dump or a P6 PPM (decoded back to linear radiance).
inline Image read_image(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 2);
  if (!in) throw FormatError("empty image file");
  if (magic[0] == 'P' && magic[1] == '6') {
    const int w = std::stoi(detail::ppm_token(in));
    const int h = std::stoi(detail::ppm_token(in));
    const int maxval = std::stoi(detail::ppm_token(in));
    if (w < 1 || h < 1 || maxval != 255) throw FormatError("unsupported PPM header");
    Image img(w, h);
    std::vector<unsigned char> bytes(img.rgb.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw FormatError("truncated PPM data");
    for (std::size_t k = 0; k < bytes.size(); ++k) img.rgb[k] = srgb_to_linear(bytes[k] / 255.0);
    return img;
  }
  in.read(magic + 2, 2);
  if (!in || std::string(magic, 4) != "NTIM") throw FormatError("unknown image format");
  if (const auto version = io::get<std::uint32_t>(in); version != 1)
    throw FormatError("unsupported raw image version " + std::to_string(version));
  const auto w = io::get<std::uint32_t>(in);
  const auto h = io::get<std::uint32_t>(in);
  if (w < 1 || h < 1 || static_cast<std::uint64_t>(w) * h > (1u << 28)) throw FormatError("implausible image size");
  Image img(static_cast<int>(w), static_cast<int>(h));
  io::get_doubles(in, img.rgb.data(), img.rgb.size());
  return img;
}

inline Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image '" + path + "'");
  return read_image(in);
}

}  // namespace ntrans
