#pragma once

// Neural transmittance: an MLP maps a two-sphere ray to the slope and center
// of a logistic step, tau(t') = S(-a (t' - b)), so the transmittance anywhere
// on the ray costs one network query instead of a ray march.

#include "ntrans/camera.hpp"
#include "ntrans/nn.hpp"
#include "ntrans/oracle.hpp"

#include <functional>
#include <numbers>
#include <ostream>

namespace ntrans {

inline constexpr double kSlopeFloor = 1e-4;

struct TauParams {
  double a = 1;  // slope, > 0
  double b = 0;  // center in ray coordinates, [-1, 1]
};

/// tau = S(-a (t' - b)); strictly decreasing in t' for a > 0.
inline double eval_tau(const TauParams& p, double t_prime) { return sigmoid(-p.a * (t_prime - p.b)); }

inline TauParams tau_params_from_output(double y_slope, double y_center) {
  return {softplus(y_slope) + kSlopeFloor, std::tanh(y_center)};
}

/// The transmittance network F with its input encoding.
struct TauNet {
  int levels = 6;
  MlpParams mlp;

  int input_dim() const { return static_cast<int>(encoded_size(6, levels)); }
};

struct NetShape {
  int levels = 6;
  int hidden = 64;
  int depth = 4;  // hidden layers
};

inline std::vector<int> mlp_widths(int in, int out, const NetShape& shape) {
  std::vector<int> w{in};
  for (int i = 0; i < shape.depth; ++i) w.push_back(shape.hidden);
  w.push_back(out);
  return w;
}

inline TauNet make_tau_net(std::uint64_t seed, const NetShape& shape = {}) {
  TauNet net;
  net.levels = shape.levels;
  net.mlp = init_mlp(mlp_widths(static_cast<int>(encoded_size(6, shape.levels)), 2, shape), seed);
  return net;
}

inline void encode_ray(const TwoSphereRay& ray, int levels, double* out) {
  const std::size_t half = encoded_size(3, levels);
  pos_encode_into(std::span<const double>(ray.omega1.data(), 3), levels, out);
  pos_encode_into(std::span<const double>(ray.omega2.data(), 3), levels, out + half);
}

inline Matrix encode_rays(std::span<const TwoSphereRay> rays, int levels) {
  Matrix x(static_cast<Eigen::Index>(encoded_size(6, levels)), static_cast<Eigen::Index>(rays.size()));
  for (std::size_t i = 0; i < rays.size(); ++i) encode_ray(rays[i], levels, x.col(static_cast<Eigen::Index>(i)).data());
  return x;
}

inline constexpr std::size_t kPredictChunk = 4096;

/// One network query per ray, evaluated in fixed-size chunks. Results match
/// single-ray prediction to rounding; they are bitwise reproducible for the
/// same sequence of rays.
inline std::vector<TauParams> predict_batch(const TauNet& net, std::span<const TwoSphereRay> rays) {
  std::vector<TauParams> out(rays.size());
  for (std::size_t start = 0; start < rays.size(); start += kPredictChunk) {
    const std::size_t n = std::min(kPredictChunk, rays.size() - start);
    const Matrix y = forward(net.mlp, encode_rays(rays.subspan(start, n), net.levels));
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      out[start + i] = tau_params_from_output(y(0, c), y(1, c));
    }
  }
  return out;
}

inline TauParams predict(const TauNet& net, const TwoSphereRay& ray) {
  return predict_batch(net, std::span<const TwoSphereRay>(&ray, 1)).front();
}

// ---------------------------------------------------------------------------
// Supervision and loss
// ---------------------------------------------------------------------------

/// Supervision for one ray: target transmittance at a set of depths plus,
/// optionally, the color the ray should render to under a collocated light.
/// phi[j] is the (constant) radiance weight of depth j, so the predicted color
/// is sum_j tau_nt(t_j) phi[j].
struct SupervisedRay {
  TwoSphereRay ray;
  std::vector<double> t;
  std::vector<double> tau;
  std::vector<Rgb> phi;
  Rgb color_ref = Rgb::Zero();

  bool has_color() const { return !phi.empty(); }
};

struct LossTerms {
  double total = 0;
  double tau = 0;    // mean squared transmittance error per depth
  double color = 0;  // mean squared color error per ray
  Vector grad;       // d total / d theta
};

/// total = weight * (L_tau + L_color). Supervision values and phi are
/// constants: no gradient reaches whatever produced them.
inline LossTerms loss_nt(const TauNet& net, std::span<const SupervisedRay> batch, double weight = 1.0) {
  LossTerms out;
  out.grad = Vector::Zero(net.mlp.theta.size());
  if (batch.empty()) return out;
  std::vector<TwoSphereRay> rays;
  rays.reserve(batch.size());
  std::size_t n_points = 0;
  std::size_t n_color = 0;
  for (const auto& s : batch) {
    if (s.t.size() != s.tau.size() || (s.has_color() && s.phi.size() != s.t.size()))
      throw ShapeMismatch("supervision arrays differ in length");
    rays.push_back(s.ray);
    n_points += s.t.size();
    n_color += s.has_color() ? 1 : 0;
  }

  MlpCache cache;
  const Matrix y = forward(net.mlp, encode_rays(rays, net.levels), &cache);
  Matrix dy = Matrix::Zero(2, y.cols());
  double sum_tau = 0;
  double sum_color = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto& s = batch[r];
    const auto c = static_cast<Eigen::Index>(r);
    const TauParams p = tau_params_from_output(y(0, c), y(1, c));
    double da = 0;
    double db = 0;
    Rgb pred = Rgb::Zero();
    std::vector<double> tau_nt(s.t.size());
    for (std::size_t j = 0; j < s.t.size(); ++j) {
      tau_nt[j] = eval_tau(p, s.t[j]);
      if (s.has_color()) pred += tau_nt[j] * s.phi[j];
    }
    const Rgb color_err = pred - s.color_ref;
    if (s.has_color()) sum_color += color_err.square().sum();
    for (std::size_t j = 0; j < s.t.size(); ++j) {
      const double err = tau_nt[j] - s.tau[j];
      sum_tau += err * err;
      double dl_dtau = n_points ? 2.0 * err / static_cast<double>(n_points) : 0.0;
      if (s.has_color()) dl_dtau += 2.0 * (color_err * s.phi[j]).sum() / static_cast<double>(n_color);
      const double slope = tau_nt[j] * (1.0 - tau_nt[j]);
      da += dl_dtau * slope * -(s.t[j] - p.b);
      db += dl_dtau * slope * p.a;
    }
    // a = softplus(y0) + floor, b = tanh(y1)
    dy(0, c) = weight * da * sigmoid(y(0, c));
    dy(1, c) = weight * db * (1.0 - p.b * p.b);
  }
  out.tau = n_points ? sum_tau / static_cast<double>(n_points) : 0.0;
  out.color = n_color ? sum_color / static_cast<double>(n_color) : 0.0;
  out.total = weight * (out.tau + out.color);
  out.grad = backward(net.mlp, cache, dy);
  return out;
}

/// Rays with both endpoints uniform on the unit sphere.
template <typename Rng>
std::vector<TwoSphereRay> sample_aug_rays(Rng& rng, std::size_t count) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto on_sphere = [&] {
    for (;;) {
      Vec3 v(gauss(rng), gauss(rng), gauss(rng));
      const double n = v.norm();
      if (n > 1e-12) return Vec3(v / n);
    }
  };
  std::vector<TwoSphereRay> rays;
  rays.reserve(count);
  while (rays.size() < count) {
    TwoSphereRay r{on_sphere(), on_sphere()};
    const double angle = std::acos(std::clamp(r.omega1.dot(r.omega2), -1.0, 1.0));
    if (angle < 1e-6) continue;
    rays.push_back(r);
  }
  return rays;
}

/// Sample layout used for supervision: n segments over the chord, one
/// density sample per segment; supervision depths are segment ends.
struct ChordSamples {
  RayFrame frame;
  std::vector<Vec3> points;
  std::vector<double> depth_end;
  double dt = 0;
};

inline ChordSamples chord_samples(const TwoSphereRay& ray, int n, std::mt19937_64& rng) {
  ChordSamples cs;
  cs.frame = ray_frame(ray);
  const double h = cs.frame.half_length;
  cs.dt = 2.0 * h / n;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int j = 0; j < n; ++j) {
    const double t = -h + (j + unit(rng)) * cs.dt;
    cs.points.push_back(ray_point(cs.frame, t));
    cs.depth_end.push_back(-h + (j + 1) * cs.dt);
  }
  return cs;
}

/// Builds supervision from densities at the chord samples. The color target
/// is the single-scattering render under a directional light collocated with
/// the viewer: light-side and view-side transmittance coincide.
inline SupervisedRay supervise(const Scene& scene, const TwoSphereRay& ray, const ChordSamples& cs,
                               std::span<const double> sigma) {
  SupervisedRay s;
  s.ray = ray;
  const std::size_t n = cs.points.size();
  s.t = cs.depth_end;
  s.tau.resize(n);
  s.phi.resize(n);
  double optical = 0;
  double before = 1;
  for (std::size_t j = 0; j < n; ++j) {
    optical += sigma[j] * cs.dt;
    s.tau[j] = std::exp(-optical);
    const Vec3& x = cs.points[j];
    const double cosine = std::max(0.0, scene.normal(x).dot(-cs.frame.direction));
    const Rgb rho = scene.albedo(x) * (cosine / std::numbers::pi);
    s.phi[j] = (before - s.tau[j]) * rho;
    s.color_ref += s.tau[j] * s.phi[j];
    before = s.tau[j];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Density network (joint mode): a stand-in for the reflectance field's
// density branch, fitted to collocated renders.
// ---------------------------------------------------------------------------

struct DensityNet {
  int levels = 6;
  MlpParams mlp;
};

inline DensityNet make_density_net(std::uint64_t seed, const NetShape& shape = {}) {
  DensityNet net;
  net.levels = shape.levels;
  net.mlp = init_mlp(mlp_widths(static_cast<int>(encoded_size(3, shape.levels)), 1, shape), seed);
  return net;
}

inline Matrix encode_points(std::span<const Vec3> pts, int levels) {
  Matrix x(static_cast<Eigen::Index>(encoded_size(3, levels)), static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i)
    pos_encode_into(std::span<const double>(pts[i].data(), 3), levels, x.col(static_cast<Eigen::Index>(i)).data());
  return x;
}

/// sigma = softplus(y), zero outside the unit ball.
inline std::vector<double> density_batch(const DensityNet& net, std::span<const Vec3> pts) {
  const Matrix y = forward(net.mlp, encode_points(pts, net.levels));
  std::vector<double> s(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    s[i] = pts[i].squaredNorm() > 1.0 ? 0.0 : softplus(y(0, static_cast<Eigen::Index>(i)));
  return s;
}

/// Collocated color I = sum_j rho_j T_j tau_j (1 - exp(-sigma_j dt)) and its
/// gradient with respect to each sigma_j, given per-sample reflectance rho_j.
inline Rgb collocated_color(std::span<const double> sigma, std::span<const Rgb> rho, double dt,
                            std::vector<Eigen::Matrix<double, 3, 1>>* dsigma = nullptr) {
  const std::size_t n = sigma.size();
  std::vector<double> tau(n), before(n);
  double optical = 0;
  for (std::size_t j = 0; j < n; ++j) {
    before[j] = std::exp(-optical);
    optical += sigma[j] * dt;
    tau[j] = std::exp(-optical);
  }
  Rgb color = Rgb::Zero();
  std::vector<Rgb> term(n);
  for (std::size_t j = 0; j < n; ++j) {
    term[j] = rho[j] * (tau[j] * before[j] - tau[j] * tau[j]);
    color += term[j];
  }
  if (dsigma) {
    dsigma->assign(n, Eigen::Matrix<double, 3, 1>::Zero());
    Rgb suffix = Rgb::Zero();
    for (std::size_t k = n; k-- > 0;) {
      const Rgb own = rho[k] * tau[k] * (2.0 * tau[k] - before[k]);
      (*dsigma)[k] = (dt * (own - 2.0 * suffix)).matrix();
      suffix += term[k];
    }
  }
  return color;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class SupervisionMode { kOracleDirect, kJoint };

struct TrainConfig {
  int iterations = 20000;
  int batch_pixels = 16 * 16;
  int n_aug_rays = 128;
  double alpha1 = 1.0;  // density (reflectance field) loss weight, joint mode
  double alpha2 = 1.0;  // transmittance network loss weight
  std::uint64_t seed = 0;
  SupervisionMode mode = SupervisionMode::kOracleDirect;
  double lr = 1e-3;
  int train_samples = 64;  // march samples per supervised ray
  NetShape shape;
  int log_every = 100;
  int heldout_rays = 256;
  int heldout_depths = 16;
  int density_warmup = 500;  // joint mode: density-only iterations first
};

struct TrainLogRow {
  int iteration = 0;
  double loss_total = 0;
  double loss_tau = 0;
  double loss_color = 0;
  double heldout_mae = 0;
};

struct TrainResult {
  TauNet net;
  AdamState adam;
  std::optional<DensityNet> density;
  std::vector<TrainLogRow> log;
};

inline void write_train_log_csv(std::ostream& out, const std::vector<TrainLogRow>& log) {
  out << "iteration,loss_total,loss_tau,loss_color,heldout_mae\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", r.iteration, r.loss_total, r.loss_tau, r.loss_color,
                  r.heldout_mae);
    out << buf;
  }
}

/// Random chords with random depths and their oracle transmittance.
struct HeldoutSet {
  std::vector<TwoSphereRay> rays;
  std::vector<std::vector<double>> depths;
  std::vector<std::vector<double>> tau;
};

inline HeldoutSet make_heldout(const Scene& scene, int n_rays, int n_depths, std::uint64_t seed,
                               const MarchConfig& march = {}) {
  HeldoutSet h;
  std::mt19937_64 rng(seed);
  h.rays = sample_aug_rays(rng, static_cast<std::size_t>(n_rays));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < h.rays.size(); ++i) {
    const double half = ray_frame(h.rays[i]).half_length;
    std::vector<double> d, t;
    for (int k = 0; k < n_depths; ++k) {
      const double tp = -half + 2.0 * half * unit(rng);
      d.push_back(tp);
      t.push_back(oracle_tau_on_two_sphere(scene, h.rays[i], tp, march, i));
    }
    h.depths.push_back(std::move(d));
    h.tau.push_back(std::move(t));
  }
  return h;
}

inline double heldout_mae(const TauNet& net, const HeldoutSet& h) {
  const auto params = predict_batch(net, h.rays);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < h.rays.size(); ++i)
    for (std::size_t k = 0; k < h.depths[i].size(); ++k) {
      sum += std::abs(eval_tau(params[i], h.depths[i][k]) - h.tau[i][k]);
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

using TrainCallback = std::function<void(int iteration, const TauNet&)>;

namespace detail {

inline std::vector<TwoSphereRay> camera_batch(const std::vector<Camera>& cams, int count, std::mt19937_64& rng) {
  std::vector<TwoSphereRay> rays;
  if (cams.empty() || count <= 0) return rays;
  std::uniform_int_distribution<std::size_t> pick(0, cams.size() - 1);
  const Camera& cam = cams[pick(rng)];
  std::uniform_int_distribution<int> px(0, cam.width - 1);
  std::uniform_int_distribution<int> py(0, cam.height - 1);
  for (int i = 0; i < count; ++i) {
    const int x = px(rng);
    const int y = py(rng);
    if (auto r = to_two_sphere(cam.position, cam.pixel_dir(x, y))) rays.push_back(*r);
  }
  return rays;
}

}  // namespace detail

/// Fits the transmittance network. Oracle-direct mode supervises with the
/// analytic scene's marched transmittance; joint mode first fits a density
/// network to collocated renders and supervises with its transmittance.
inline TrainResult train(const Scene& scene, const std::vector<Camera>& cameras, const TrainConfig& cfg,
                         const TrainCallback& on_iteration = {}) {
  if (cfg.iterations < 0 || cfg.n_aug_rays < 0 || cfg.batch_pixels < 0) throw ValidationError("negative counts");
  if (cfg.alpha1 < 0 || cfg.alpha2 < 0) throw ValidationError("loss weights must be >= 0");
  if (cfg.train_samples < 2) throw ValidationError("train_samples must be >= 2");

  TrainResult res;
  res.net = make_tau_net(mix_seed(cfg.seed, 0x7a0), cfg.shape);
  res.adam = AdamState(res.net.mlp, cfg.lr);
  const bool joint = cfg.mode == SupervisionMode::kJoint;
  AdamState density_adam;
  if (joint) {
    res.density = make_density_net(mix_seed(cfg.seed, 0xde5), cfg.shape);
    density_adam = AdamState(res.density->mlp, cfg.lr);
  }
  const HeldoutSet heldout = make_heldout(scene, cfg.heldout_rays, cfg.heldout_depths, mix_seed(cfg.seed, 0x4e1d));

  for (int it = 0; it < cfg.iterations; ++it) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(it)));
    const auto cam_rays = detail::camera_batch(cameras, cfg.batch_pixels, rng);
    const auto aug_rays = sample_aug_rays(rng, static_cast<std::size_t>(cfg.n_aug_rays));

    std::vector<ChordSamples> cam_samples, aug_samples;
    for (const auto& r : cam_rays) cam_samples.push_back(chord_samples(r, cfg.train_samples, rng));
    for (const auto& r : aug_rays) aug_samples.push_back(chord_samples(r, cfg.train_samples, rng));

    std::vector<SupervisedRay> batch;
    TrainLogRow row;
    row.iteration = it;

    if (!joint) {
      for (std::size_t i = 0; i < cam_rays.size(); ++i) {
        std::vector<double> sigma;
        for (const auto& x : cam_samples[i].points) sigma.push_back(scene.density(x));
        batch.push_back(supervise(scene, cam_rays[i], cam_samples[i], sigma));
      }
      for (std::size_t i = 0; i < aug_rays.size(); ++i) {
        std::vector<double> sigma;
        for (const auto& x : aug_samples[i].points) sigma.push_back(scene.density(x));
        batch.push_back(supervise(scene, aug_rays[i], aug_samples[i], sigma));
      }
    } else {
      auto& dnet = *res.density;
      // Density step on the camera rays against the true collocated colors.
      std::vector<Vec3> pts;
      for (const auto& cs : cam_samples) pts.insert(pts.end(), cs.points.begin(), cs.points.end());
      MlpCache cache;
      const Matrix y = forward(dnet.mlp, encode_points(pts, dnet.levels), &cache);
      Matrix dy = Matrix::Zero(1, y.cols());
      std::vector<double> sigma_all(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i)
        sigma_all[i] = pts[i].squaredNorm() > 1.0 ? 0.0 : softplus(y(0, static_cast<Eigen::Index>(i)));
      double nrf_loss = 0;
      std::size_t off = 0;
      for (std::size_t r = 0; r < cam_rays.size(); ++r) {
        const auto& cs = cam_samples[r];
        const std::size_t n = cs.points.size();
        std::vector<double> true_sigma;
        for (const auto& x : cs.points) true_sigma.push_back(scene.density(x));
        const SupervisedRay truth = supervise(scene, cam_rays[r], cs, true_sigma);
        std::vector<Rgb> rho(n);
        for (std::size_t j = 0; j < n; ++j) {
          const double cosine = std::max(0.0, scene.normal(cs.points[j]).dot(-cs.frame.direction));
          rho[j] = scene.albedo(cs.points[j]) * (cosine / std::numbers::pi);
        }
        std::vector<Eigen::Matrix<double, 3, 1>> dsig;
        const Rgb pred =
            collocated_color(std::span<const double>(sigma_all.data() + off, n), rho, cs.dt, &dsig);
        const Rgb err = pred - truth.color_ref;
        nrf_loss += err.square().sum();
        for (std::size_t j = 0; j < n; ++j) {
          const auto col = static_cast<Eigen::Index>(off + j);
          if (pts[off + j].squaredNorm() > 1.0) continue;
          const double dl_dsigma = 2.0 * err.matrix().dot(dsig[j]) / std::max<double>(1.0, cam_rays.size());
          dy(0, col) = cfg.alpha1 * dl_dsigma * sigmoid(y(0, col));
        }
        off += n;
      }
      nrf_loss /= std::max<double>(1.0, static_cast<double>(cam_rays.size()));
      if (!std::isfinite(nrf_loss)) throw DivergenceError("density loss became non-finite");
      adam_step(dnet.mlp, backward(dnet.mlp, cache, dy), density_adam);
      row.loss_total += cfg.alpha1 * nrf_loss;

      if (it >= cfg.density_warmup) {
        // Supervision from the density network, treated as constant.
        auto add = [&](const std::vector<TwoSphereRay>& rays, const std::vector<ChordSamples>& samples,
                       bool keep_true_color) {
          for (std::size_t i = 0; i < rays.size(); ++i) {
            const auto sigma = density_batch(dnet, samples[i].points);
            SupervisedRay s = supervise(scene, rays[i], samples[i], sigma);
            if (keep_true_color) {
              std::vector<double> true_sigma;
              for (const auto& x : samples[i].points) true_sigma.push_back(scene.density(x));
              s.color_ref = supervise(scene, rays[i], samples[i], true_sigma).color_ref;
            }
            batch.push_back(std::move(s));
          }
        };
        add(cam_rays, cam_samples, true);
        add(aug_rays, aug_samples, false);
      }
    }

    if (!batch.empty()) {
      LossTerms lt = loss_nt(res.net, batch, cfg.alpha2);
      if (!std::isfinite(lt.total)) throw DivergenceError("transmittance loss became non-finite");
      adam_step(res.net.mlp, lt.grad, res.adam);
      row.loss_total += lt.total;
      row.loss_tau = lt.tau;
      row.loss_color = lt.color;
    }
    if (!std::isfinite(row.loss_total)) throw DivergenceError("loss became non-finite");

    if (on_iteration) on_iteration(it, res.net);
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations)) {
      row.heldout_mae = heldout_mae(res.net, heldout);
      res.log.push_back(row);
    }
  }
  return res;
}

}  // namespace ntrans
