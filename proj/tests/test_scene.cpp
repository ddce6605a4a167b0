#include "ntrans/scene.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <random>

#ifndef NTRANS_SCENES_DIR
#error "NTRANS_SCENES_DIR must point at the shipped scene configs"
#endif

namespace ntrans {
namespace {

Primitive make_sphere(const Vec3& c, double r, double sigma, double k, const Rgb& albedo) {
  Primitive p;
  p.shape = Shape::kSphere;
  p.center = c;
  p.radius = r;
  p.sigma_max = sigma;
  p.sharpness = k;
  p.albedo = albedo;
  return p;
}

Primitive make_box(const Vec3& c, const Vec3& h, double sigma, double k, const Rgb& albedo) {
  Primitive p;
  p.shape = Shape::kBox;
  p.center = c;
  p.half_extents = h;
  p.sigma_max = sigma;
  p.sharpness = k;
  p.albedo = albedo;
  return p;
}

TEST(Density, EmptyScene) {
  Scene s;
  EXPECT_EQ(s.density(Vec3(0.1, 0.2, 0.3)), 0.0);
  EXPECT_EQ(s.density(Vec3::Zero()), 0.0);
}

TEST(Density, SphereCenterAndBoundary) {
  Scene s;
  s.primitives.push_back(make_sphere(Vec3::Zero(), 0.4, 50, 200, Rgb(1, 1, 1)));
  EXPECT_NEAR(s.density(Vec3::Zero()), 50.0 / (1.0 + std::exp(-80.0)), 1e-12);
  EXPECT_NEAR(s.density(Vec3(0.4, 0, 0)), 25.0, 1e-12);
}

TEST(Density, ZeroOutsideUnitBall) {
  Scene s;
  s.primitives.push_back(make_sphere(Vec3::Zero(), 0.9, 50, 2, Rgb(1, 1, 1)));
  EXPECT_GT(s.density(Vec3(0.99, 0, 0)), 0.0);
  EXPECT_EQ(s.density(Vec3(1.01, 0, 0)), 0.0);
}

TEST(Normal, SphereAndSingularPoint) {
  Scene s;
  s.primitives.push_back(make_sphere(Vec3::Zero(), 0.4, 50, 200, Rgb(1, 1, 1)));
  EXPECT_TRUE(s.normal(Vec3(0.4, 0, 0)).isApprox(Vec3(1, 0, 0)));
  EXPECT_TRUE(s.normal(Vec3::Zero()).isApprox(Vec3(0, 0, 1)));
}

TEST(Normal, BoxFace) {
  Scene s;
  s.primitives.push_back(make_box(Vec3::Zero(), Vec3(0.3, 0.3, 0.3), 50, 200, Rgb(1, 1, 1)));
  EXPECT_TRUE(s.normal(Vec3(0.31, 0, 0)).isApprox(Vec3(1, 0, 0)));
  EXPECT_TRUE(s.normal(Vec3(0, -0.29, 0.01)).isApprox(Vec3(0, -1, 0)));
  EXPECT_TRUE(s.normal(Vec3::Zero()).isApprox(Vec3(0, 0, 1)));
}

TEST(Albedo, InsideOutsideAndOverlap) {
  Scene s;
  s.primitives.push_back(make_sphere(Vec3(-0.2, 0, 0), 0.3, 50, 200, Rgb(0.8, 0.1, 0.1)));
  EXPECT_TRUE(s.albedo(Vec3(-0.2, 0, 0)).isApprox(Rgb(0.8, 0.1, 0.1)));
  EXPECT_TRUE(s.albedo(Vec3(2, 0, 0)).isApprox(Rgb::Zero()));

  // Larger density contribution wins.
  s.primitives.push_back(make_sphere(Vec3(0.2, 0, 0), 0.3, 80, 200, Rgb(0.1, 0.1, 0.8)));
  EXPECT_TRUE(s.albedo(Vec3(0, 0, 0)).isApprox(Rgb(0.1, 0.1, 0.8)));
  // Exact tie: list order.
  Scene tie;
  tie.primitives.push_back(make_sphere(Vec3::Zero(), 0.3, 50, 200, Rgb(0.8, 0.1, 0.1)));
  tie.primitives.push_back(make_sphere(Vec3::Zero(), 0.3, 50, 200, Rgb(0.1, 0.8, 0.1)));
  EXPECT_TRUE(tie.albedo(Vec3(0.1, 0, 0)).isApprox(Rgb(0.8, 0.1, 0.1)));
}

TEST(LoadScene, MinimalSphere) {
  const Scene s = parse_scene(std::string(R"(# one sphere
[sphere]
center = 0 0 0
radius = 0.5
sigma_max = 50
sharpness = 200
albedo = 0.8 0.1 0.1
)"));
  ASSERT_EQ(s.primitives.size(), 1u);
  EXPECT_EQ(s.primitives[0].radius, 0.5);
  EXPECT_TRUE(s.background.isApprox(Rgb::Zero()));
}

TEST(LoadScene, RadiusOutsideUnitSphere) {
  try {
    parse_scene(std::string("[sphere]\ncenter = 0 0 0\nradius = 2\nsigma_max = 1\nsharpness = 1\nalbedo = 1 1 1\n"));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("outside unit sphere"), std::string::npos);
  }
}

TEST(LoadScene, NegativeSigma) {
  EXPECT_THROW(
      parse_scene(std::string("[sphere]\ncenter = 0 0 0\nradius = 0.5\nsigma_max = -1\nsharpness = 1\nalbedo = 1 1 1\n")),
      ValidationError);
}

TEST(LoadScene, ParseErrorsNameLineAndField) {
  try {
    parse_scene(std::string("[sphere]\ncenter = 0 0\n"));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos);
    EXPECT_NE(msg.find("center"), std::string::npos);
  }
  EXPECT_THROW(parse_scene(std::string("[cone]\n")), ParseError);
  EXPECT_THROW(parse_scene(std::string("[sphere]\nradius = 0.5\n")), ParseError);  // missing fields
  EXPECT_THROW(parse_scene(std::string("[sphere]\nradius = 0.5\nradius = 0.4\n")), ParseError);
  EXPECT_THROW(load_scene("/nonexistent/scene.txt"), ParseError);
}

TEST(LoadScene, ShippedFilesMatchBuiltins) {
  for (const char* name : {"sphere", "two-spheres", "box-occluder"}) {
    const Scene file = load_scene(std::string(NTRANS_SCENES_DIR) + "/" + name + ".scene");
    const Scene builtin = *builtin_scene(name);
    ASSERT_EQ(file.primitives.size(), builtin.primitives.size()) << name;
    for (std::size_t i = 0; i < file.primitives.size(); ++i) {
      EXPECT_EQ(file.primitives[i].center, builtin.primitives[i].center);
      EXPECT_EQ(file.primitives[i].sigma_max, builtin.primitives[i].sigma_max);
      EXPECT_EQ(file.primitives[i].sharpness, builtin.primitives[i].sharpness);
    }
  }
}

TEST(SceneProperties, DensityLipschitzBound) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  std::normal_distribution<double> g(0, 1e-3);
  for (const auto& prim : {make_sphere(Vec3(0.1, 0, 0), 0.4, 50, 200, Rgb(1, 1, 1)),
                           make_box(Vec3(0, 0.1, 0), Vec3(0.2, 0.3, 0.25), 30, 150, Rgb(1, 1, 1))}) {
    Scene s;
    s.primitives.push_back(prim);
    for (int i = 0; i < 5000; ++i) {
      const Vec3 x(u(rng), u(rng), u(rng));
      const Vec3 delta(g(rng), g(rng), g(rng));
      const double bound = prim.sigma_max * prim.sharpness * delta.norm() / 4.0 + 1e-12;
      EXPECT_LE(std::abs(s.density(x) - s.density(x + delta)), bound);
    }
  }
}

TEST(SceneProperties, SphereDensityIsRadiallySymmetric) {
  Scene s;
  const Vec3 c(0.1, -0.2, 0.05);
  s.primitives.push_back(make_sphere(c, 0.4, 50, 200, Rgb(1, 1, 1)));
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 offset(u(rng), u(rng), u(rng));
    const Eigen::Quaterniond q = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized();
    const Vec3 rotated = q * offset;
    if ((c + offset).norm() > 1 || (c + rotated).norm() > 1) continue;
    EXPECT_NEAR(s.density(c + offset), s.density(c + rotated), 1e-9);
  }
}

}  // namespace
}  // namespace ntrans
