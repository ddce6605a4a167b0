#include "ntrans/render.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace ntrans {
namespace {

const double kPi = std::numbers::pi;

Camera front_camera(int w, int h) { return look_at(Vec3(0, 0, 3), Vec3::Zero(), full_frame_fov(3, w, h), w, h); }

Camera wide_camera(int w, int h) { return look_at(Vec3(0.4, 0.5, 3), Vec3::Zero(), 0.8, w, h); }

RenderOptions opts(int n, int threads = 1) {
  RenderOptions o;
  o.n_samples = n;
  o.threads = threads;
  return o;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t k = 0; k < a.rgb.size(); ++k) m = std::max(m, std::abs(a.rgb[k] - b.rgb[k]));
  return m;
}

std::string raw_bytes(const Image& img) {
  std::ostringstream out;
  write_raw(out, img);
  return out.str();
}

TEST(Shade, Examples) {
  const Vec3 n(0, 0, 1);
  const LightDesc sun = LightDesc::directional(Vec3(0, 0, -1), Rgb::Constant(kPi));
  EXPECT_TRUE(shade(Rgb::Ones(), n, Vec3::Zero(), sun, 0.0).isApprox(Rgb::Zero()));
  EXPECT_EQ(shade(Rgb::Ones(), Vec3(1, 0, 0), Vec3::Zero(), sun, 1.0).abs().maxCoeff(), 0.0);
  EXPECT_TRUE(shade(Rgb::Ones(), n, Vec3::Zero(), sun, 1.0).isApprox(Rgb::Ones(), 1e-15));
  // Point light: inverse-square falloff from intensity.
  const LightDesc bulb = LightDesc::point(Vec3(0, 0, 2), Rgb::Constant(4 * kPi));
  EXPECT_TRUE(shade(Rgb::Ones(), n, Vec3::Zero(), bulb, 0.5).isApprox(Rgb::Constant(0.5), 1e-15));
  // Light from behind the surface.
  EXPECT_EQ(shade(Rgb::Ones(), -n, Vec3::Zero(), bulb, 1.0).abs().maxCoeff(), 0.0);
}

TEST(Render, EmptySceneIsBackground) {
  Scene empty;
  empty.background = Rgb(0.2, 0.3, 0.4);
  const auto net = std::make_shared<const TauNet>(make_tau_net(1));
  const std::vector<LightDesc> lights{LightDesc::directional(Vec3(0, -1, 0), Rgb::Ones())};
  for (const TauProvider& p : {TauProvider{OracleMarch{}}, TauProvider{NeuralPerPoint{net}},
                               TauProvider{MapLookup{{}, net, 8, 8}}}) {
    const Image img = render(empty, wide_camera(9, 7), lights, p, opts(16)).image;
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x) EXPECT_EQ((img.at(x, y) - empty.background).abs().maxCoeff(), 0.0);
  }
}

TEST(Render, EnergyBound) {
  for (const char* name : {"sphere", "two-spheres", "box-occluder"}) {
    Scene s = *builtin_scene(name);
    s.background = Rgb(0.1, 0.1, 0.1);
    const Image img =
        render(s, wide_camera(12, 12), {LightDesc::directional(Vec3(-1, -1, -1), Rgb::Ones())}, OracleMarch{}, opts(64))
            .image;
    for (double v : img.rgb) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 0.1 + 1.0);
    }
  }
}

TEST(Render, LinearInLights) {
  const Scene s = *builtin_scene("two-spheres");
  const LightDesc a = LightDesc::directional(Vec3(1, -0.2, -0.5), Rgb(1, 0.5, 0.2));
  const LightDesc b = LightDesc::point(Vec3(-2, 1, 2), Rgb(3, 3, 5));
  const auto net = std::make_shared<const TauNet>(make_tau_net(2));
  for (const TauProvider& p : {TauProvider{OracleMarch{MarchConfig{32}}}, TauProvider{NeuralPerPoint{net}}}) {
    const Image ab = render(s, wide_camera(10, 8), {a, b}, p, opts(32)).image;
    const Image ia = render(s, wide_camera(10, 8), {a}, p, opts(32)).image;
    const Image ib = render(s, wide_camera(10, 8), {b}, p, opts(32)).image;
    Image sum = ia;
    for (std::size_t k = 0; k < sum.rgb.size(); ++k) sum.rgb[k] += ib.rgb[k];
    EXPECT_LT(max_abs_diff(ab, sum), 1e-6);
  }
}

TEST(RenderEnvmap, SingleTexelEqualsDirectionalLight) {
  const Scene s = *builtin_scene("box-occluder");
  EnvMap env = make_envmap(6, 3);
  env.at(4, 0) = Rgb(2, 1, 0.5);
  const Vec3 from = envmap_direction(env, 4, 0);
  const LightDesc light = LightDesc::directional(-from, env.at(4, 0) * envmap_solid_angle(env, 0));
  const Camera cam = wide_camera(10, 10);
  const Image a = render_envmap(s, cam, env, OracleMarch{MarchConfig{48}}, opts(48)).image;
  const Image b = render(s, cam, {light}, OracleMarch{MarchConfig{48}}, opts(48)).image;
  EXPECT_LT(max_abs_diff(a, b), 1e-6);
  EXPECT_GT(*std::max_element(b.rgb.begin(), b.rgb.end()), 0.0);
}

TEST(RenderEnvmap, UniformOneByOne) {
  const Scene s = *builtin_scene("sphere");
  const EnvMap env = make_envmap(1, 1, Rgb(0.5, 0.5, 0.5));
  const Vec3 from = envmap_direction(env, 0, 0);
  EXPECT_NEAR(envmap_solid_angle(env, 0), 4 * kPi, 1e-12);
  const LightDesc light = LightDesc::directional(-from, Rgb::Constant(2 * kPi));
  const Image a = render_envmap(s, front_camera(8, 8), env, OracleMarch{MarchConfig{32}}, opts(32)).image;
  const Image b = render(s, front_camera(8, 8), {light}, OracleMarch{MarchConfig{32}}, opts(32)).image;
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(RenderEnvmap, SolidAnglesCoverSphere) {
  const EnvMap env = make_envmap(24, 12);
  double total = 0;
  for (int j = 0; j < 12; ++j) total += 24 * envmap_solid_angle(env, j);
  EXPECT_NEAR(total, 4 * kPi, 1e-12);
  EXPECT_EQ(envmap_lights(env).size(), 288u);
}

TEST(RenderEnvmap, TextRoundTripAndErrors) {
  const EnvMap env = procedural_envmap(5, 3);
  std::stringstream io;
  write_envmap(io, env);
  const EnvMap back = parse_envmap(io);
  ASSERT_EQ(back.width, 5);
  for (std::size_t k = 0; k < env.texels.size(); ++k) EXPECT_EQ((back.texels[k] - env.texels[k]).abs().maxCoeff(), 0.0);
  std::istringstream short_data("2 1\n1 1 1\n");
  EXPECT_THROW(parse_envmap(short_data), ParseError);
  std::istringstream negative("1 1\n1 -1 1\n");
  EXPECT_THROW(parse_envmap(negative), ValidationError);
  std::istringstream trailing("1 1\n1 1 1 7\n");
  EXPECT_THROW(parse_envmap(trailing), ParseError);
}

TEST(QueryStats, NeuralPerPointCountsEverySampleAndLight) {
  const Scene s = *builtin_scene("sphere");
  const auto net = std::make_shared<const TauNet>(make_tau_net(3));
  const std::vector<LightDesc> lights{LightDesc::directional(Vec3(0, -1, 0), Rgb::Ones()),
                                      LightDesc::point(Vec3(2, 2, 2), Rgb::Ones())};
  const RenderResult r = render(s, front_camera(4, 4), lights, NeuralPerPoint{net}, opts(8));
  EXPECT_EQ(r.stats.render.tau_network_queries, 256u);
  EXPECT_EQ(r.stats.precompute.tau_network_queries, 0u);
  EXPECT_EQ(r.stats.render.density_queries, 4u * 4u * 8u);
  EXPECT_EQ(r.stats.render.tau_march_sample_queries, 0u);
  EXPECT_EQ(r.stats.render.provider_failures, 0u);
}

TEST(QueryStats, OracleCountsMarchSamples) {
  const Scene s = *builtin_scene("sphere");
  const RenderResult r = render(s, front_camera(4, 4), {LightDesc::directional(Vec3(0, -1, 0), Rgb::Ones())},
                                OracleMarch{MarchConfig{10}}, opts(8));
  EXPECT_EQ(r.stats.render.tau_march_sample_queries, 4u * 4u * 8u * 10u);
  EXPECT_EQ(r.stats.tau_network_queries(), 0u);
}

TEST(QueryStats, MapLookupQueriesOnlyDuringPrecompute) {
  const Scene s = *builtin_scene("sphere");
  const auto net = std::make_shared<const TauNet>(make_tau_net(4));
  const EnvMap env = procedural_envmap(4, 2);
  std::size_t covered = 0;
  for (const auto& l : envmap_lights(env)) covered += build_map(l, 16, 16, *net).covered();
  for (int res : {4, 12}) {
    const RenderResult r = render_envmap(s, wide_camera(res, res), env, MapLookup{{}, net, 16, 16}, opts(16));
    EXPECT_EQ(r.stats.render.tau_network_queries, 0u);
    EXPECT_EQ(r.stats.precompute.tau_network_queries, covered);
    EXPECT_LE(covered, 8u * 16u * 16u);
    EXPECT_EQ(r.stats.render.provider_failures, 0u);
  }
}

TEST(Render, ProviderValidation) {
  const Scene s = *builtin_scene("sphere");
  const std::vector<LightDesc> lights{LightDesc::directional(Vec3(0, -1, 0), Rgb::Ones())};
  EXPECT_THROW(render(s, front_camera(4, 4), lights, MapLookup{}, opts(8)), ValidationError);
  EXPECT_THROW(render(s, front_camera(4, 4), lights, NeuralPerPoint{}, opts(8)), ValidationError);
  const auto net = std::make_shared<const TauNet>(make_tau_net(5));
  MapLookup two{{build_map(lights[0], 4, 4, *net), build_map(lights[0], 4, 4, *net)}, nullptr};
  EXPECT_THROW(render(s, front_camera(4, 4), lights, two, opts(8)), ValidationError);
  EXPECT_THROW(render(s, front_camera(4, 4), {LightDesc::point(Vec3(0, 0, 0.2), Rgb::Ones())}, OracleMarch{}, opts(8)),
               LightInsideSphere);
}

TEST(Render, DeterministicAcrossThreadCounts) {
  const Scene s = *builtin_scene("two-spheres");
  const auto net = std::make_shared<const TauNet>(make_tau_net(6));
  const std::vector<LightDesc> lights{LightDesc::point(Vec3(2, 1, 2), Rgb::Constant(5))};
  for (const TauProvider& p : {TauProvider{OracleMarch{MarchConfig{24, Jitter::kStratified, 9}}},
                               TauProvider{NeuralPerPoint{net}}, TauProvider{MapLookup{{}, net, 24, 24}}}) {
    RenderOptions o = opts(24, 1);
    o.jitter = Jitter::kStratified;
    o.seed = 3;
    const std::string one = raw_bytes(render(s, wide_camera(13, 11), lights, p, o).image);
    o.threads = 4;
    EXPECT_EQ(raw_bytes(render(s, wide_camera(13, 11), lights, p, o).image), one);
  }
}

// Independent SSIM: separable Gaussian filtering of whole images, then the
// SSIM map averaged over windows that fit entirely inside the image.
double reference_ssim(const std::vector<double>& x, const std::vector<double>& y, int w, int h) {
  const int r = 5;
  std::vector<double> g(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += g[i + r] = std::exp(-i * i / 4.5);
  for (auto& v : g) v /= sum;
  auto blur = [&](const std::vector<double>& in) {
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = r; xx < w - r; ++xx)
        for (int i = -r; i <= r; ++i) tmp[yy * w + xx] += g[i + r] * in[yy * w + xx + i];
    for (int yy = r; yy < h - r; ++yy)
      for (int xx = r; xx < w - r; ++xx)
        for (int i = -r; i <= r; ++i) out[yy * w + xx] += g[i + r] * tmp[(yy + i) * w + xx];
    return out;
  };
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    xx[k] = x[k] * x[k];
    yy[k] = y[k] * y[k];
    xy[k] = x[k] * y[k];
  }
  const auto mx = blur(x), my = blur(y), sxx = blur(xx), syy = blur(yy), sxy = blur(xy);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int n = 0;
  for (int j = r; j < h - r; ++j)
    for (int i = r; i < w - r; ++i) {
      const int k = j * w + i;
      const double vx = sxx[k] - mx[k] * mx[k], vy = syy[k] - my[k] * my[k], cv = sxy[k] - mx[k] * my[k];
      total += (2 * mx[k] * my[k] + c1) * (2 * cv + c2) / ((mx[k] * mx[k] + my[k] * my[k] + c1) * (vx + vy + c2));
      ++n;
    }
  return total / n;
}

TEST(Metrics, SsimMatchesIndependentImplementation) {
  Image a(16, 16), b(16, 16), c(16, 16);
  std::vector<double> la, lb, lc;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const double v = ((x / 2 + y / 2) % 2) ? 0.9 : 0.1;
      a.set(x, y, Rgb::Constant(v));
      b.set(x, y, Rgb::Constant(1.0 - v));
      c.set(x, y, Rgb(u(rng), u(rng), u(rng)));
      la.push_back(v);
      lb.push_back(1.0 - v);
      lc.push_back(luma(c.at(x, y)));
    }
  EXPECT_NEAR(ssim(a, b), reference_ssim(la, lb, 16, 16), 1e-12);
  EXPECT_LT(ssim(a, b), 0.0);
  EXPECT_NEAR(ssim(a, c), reference_ssim(la, lc, 16, 16), 1e-12);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Metrics, RmseAndDimensions) {
  Image a(5, 4);
  for (std::size_t k = 0; k < a.rgb.size(); ++k) a.rgb[k] = 0.01 * static_cast<double>(k);
  Image b = a;
  const ImageMetrics same = metrics(a, b);
  EXPECT_EQ(same.rmse, 0.0);
  EXPECT_NEAR(same.ssim, 1.0, 1e-12);
  for (auto& v : b.rgb) v += 0.1;
  EXPECT_NEAR(rmse(a, b), 0.1, 1e-12);
  EXPECT_THROW(metrics(a, Image(4, 5)), DimensionMismatch);
}

TEST(ImageFiles, RawRoundTripIsExact) {
  Image img(3, 2);
  for (std::size_t k = 0; k < img.rgb.size(); ++k) img.rgb[k] = 0.1 * static_cast<double>(k) + 1e-17;
  const std::string bytes = raw_bytes(img);
  EXPECT_EQ(bytes.size(), 16u + 3 * 2 * 3 * 8);
  std::istringstream in(bytes);
  const Image back = read_image(in);
  EXPECT_EQ(back.rgb, img.rgb);
  std::istringstream bad("NTIX0000");
  EXPECT_THROW(read_image(bad), FormatError);
}

TEST(ImageFiles, PpmEncodesSrgb) {
  Image img(2, 1);
  img.set(0, 0, Rgb(0, 0.5, 1));
  img.set(1, 0, Rgb(2, 0.0031308, 0.25));
  std::ostringstream out;
  write_ppm(out, img);
  const std::string s = out.str();
  const std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(s.substr(0, header.size()), header);
  const auto* px = reinterpret_cast<const unsigned char*>(s.data() + header.size());
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[1], 188);  // 1.055 * 0.5^(1/2.4) - 0.055 = 0.7354
  EXPECT_EQ(px[2], 255);
  EXPECT_EQ(px[3], 255);  // clamped
  EXPECT_EQ(px[4], 10);   // 12.92 * 0.0031308 = 0.04045
  std::istringstream in(s);
  const Image back = read_image(in);
  EXPECT_NEAR(back.at(0, 0)[1], 0.5, 0.005);
  // Exposure +1 doubles the linear value before encoding.
  std::ostringstream brighter;
  Image quarter(1, 1);
  quarter.set(0, 0, Rgb::Constant(0.25));
  write_ppm(brighter, quarter, 1.0);
  EXPECT_EQ(static_cast<unsigned char>(brighter.str().back()), 188);
}

TEST(TrainedRender, CollocatedNeuralMatchesOracle) {
  const Scene s = *builtin_scene("sphere");
  const auto net = std::make_shared<const TauNet>(testing::sphere_net());
  const Camera cam = look_at(Vec3(0.3, 0.2, 2.8), Vec3::Zero(), 0.75, 20, 20);
  const std::vector<LightDesc> lights{LightDesc::point(cam.position, Rgb::Constant(4 * kPi))};
  const Image oracle = render(s, cam, lights, OracleMarch{}, opts(96)).image;
  const Image neural = render(s, cam, lights, NeuralPerPoint{net}, opts(96)).image;
  const double peak = *std::max_element(oracle.rgb.begin(), oracle.rgb.end());
  EXPECT_GT(peak, 0.1);
  EXPECT_LT(rmse(neural, oracle), 0.05);
}

TEST(TrainedRender, MapConvergesToPerPointQueries) {
  const Scene s = *builtin_scene("sphere");
  const auto net = std::make_shared<const TauNet>(testing::sphere_net());
  const Camera cam = wide_camera(16, 16);
  const std::vector<LightDesc> lights{LightDesc::point(Vec3(2, 2, 1), Rgb::Constant(8)),
                                      LightDesc::directional(Vec3(-0.3, -1, -0.2), Rgb::Constant(2))};
  const Image ref = render(s, cam, lights, NeuralPerPoint{net}, opts(64)).image;
  double prev = 1e9;
  for (int res : {16, 64, 256}) {
    const double e = rmse(render(s, cam, lights, MapLookup{{}, net, res, res}, opts(64)).image, ref);
    EXPECT_LT(e, prev) << "map resolution " << res;
    prev = e;
  }
}

}  // namespace
}  // namespace ntrans
