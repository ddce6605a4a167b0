// ntrans: train a transmittance network, precompute maps, render, benchmark
// and compare images.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error. Errors are one line
// on stderr:  error: kind=<usage|runtime> message="<text>"

#include "ntrans/ntrans.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace ntrans;
using json = nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kLightHelp =
    "Light spec: point:x,y,z:r,g,b (position, intensity) or dir:x,y,z:r,g,b (direction the light travels, radiance)";
constexpr const char* kCameraHelp = "Camera spec: ex,ey,ez:tx,ty,tz:fov_deg:WxH (eye, target, vertical fov, size)";

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) throw UsageError("bad number '" + s + "' in " + what);
  return v;
}

Vec3 parse_vec3(const std::string& s, const std::string& what) {
  const auto parts = split(s, ',');
  if (parts.size() != 3) throw UsageError("expected x,y,z in " + what + ", got '" + s + "'");
  return {to_double(parts[0], what), to_double(parts[1], what), to_double(parts[2], what)};
}

std::pair<int, int> parse_size(const std::string& s, const std::string& what) {
  const auto parts = split(s, 'x');
  if (parts.size() != 2) throw UsageError("expected WxH for " + what + ", got '" + s + "'");
  const double w = to_double(parts[0], what);
  const double h = to_double(parts[1], what);
  if (w < 1 || h < 1 || w != std::floor(w) || h != std::floor(h) || w > 1 << 15 || h > 1 << 15)
    throw UsageError("bad size '" + s + "' for " + what);
  return {static_cast<int>(w), static_cast<int>(h)};
}

LightDesc parse_light(const std::string& s) {
  const auto parts = split(s, ':');
  if (parts.size() != 3) throw UsageError("bad light spec '" + s + "'");
  const Vec3 v = parse_vec3(parts[1], "light '" + s + "'");
  const Vec3 c = parse_vec3(parts[2], "light '" + s + "'");
  LightDesc light;
  if (parts[0] == "point") {
    light = LightDesc::point(v, c.array());
  } else if (parts[0] == "dir") {
    if (v.norm() < 1e-12) throw UsageError("light direction must be nonzero in '" + s + "'");
    light = LightDesc::directional(v, c.array());
  } else {
    throw UsageError("light kind must be point or dir in '" + s + "'");
  }
  if (light.kind == LightKind::kPoint && light.position.norm() <= 1.0)
    throw UsageError("point light must lie outside the unit sphere in '" + s + "'");
  if ((light.radiance < 0).any()) throw UsageError("light color must be >= 0 in '" + s + "'");
  return light;
}

Camera parse_camera(const std::string& s) {
  const auto parts = split(s, ':');
  if (parts.size() != 4) throw UsageError("bad camera spec '" + s + "'");
  const Vec3 eye = parse_vec3(parts[0], "camera eye");
  const Vec3 target = parse_vec3(parts[1], "camera target");
  const double fov_deg = to_double(parts[2], "camera fov");
  const auto [w, h] = parse_size(parts[3], "camera");
  if (!(fov_deg > 0 && fov_deg < 180)) throw UsageError("camera fov must lie in (0, 180) degrees");
  if ((target - eye).norm() < 1e-9) throw UsageError("camera eye and target coincide");
  return look_at(eye, target, fov_deg * std::numbers::pi / 180.0, w, h);
}

// Scene names resolve to the built-in scenes; anything else must be a file.
Scene resolve_scene(const std::string& ref) {
  if (auto s = builtin_scene(ref)) return *s;
  if (!std::filesystem::is_regular_file(ref)) throw UsageError("scene '" + ref + "' is neither a built-in nor a file");
  return load_scene(ref);
}

void require_file(const std::string& path, const std::string& flag) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError(flag + ": no such file '" + path + "'");
}

TauNet load_net(const std::string& path) {
  require_file(path, "--checkpoint");
  const Checkpoint ck = load_checkpoint(path);
  TauNet net;
  net.levels = ck.levels;
  net.mlp = ck.params;
  if (ck.params.widths.front() != net.input_dim() || ck.params.widths.back() != 2)
    throw FormatError("checkpoint is not a transmittance network");
  return net;
}

json totals_json(const char* phase, const PhaseTotals& t) {
  return {{"phase", phase},
          {"density_queries", t.density_queries},
          {"tau_network_queries", t.tau_network_queries},
          {"tau_march_sample_queries", t.tau_march_sample_queries},
          {"provider_failures", t.provider_failures},
          {"wall_ms", t.wall_ms}};
}

template <typename Fn>
void write_file(const std::string& path, bool binary, Fn&& fn) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot write '" + path + "'");
  fn(out);
  out.flush();
  if (!out) throw Error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string scene, out, log;
  int iters = 20000, aug = 128, batch = 256, samples = 64, levels = 6, hidden = 64, depth = 4, log_every = 100;
  std::uint64_t seed = 0;
  std::string mode = "oracle";
  double lr = 1e-3, alpha1 = 1, alpha2 = 1;
};

int run_train(const TrainArgs& a) {
  const Scene scene = resolve_scene(a.scene);
  TrainConfig cfg;
  cfg.iterations = a.iters;
  cfg.n_aug_rays = a.aug;
  cfg.batch_pixels = a.batch;
  cfg.train_samples = a.samples;
  cfg.seed = a.seed;
  cfg.lr = a.lr;
  cfg.alpha1 = a.alpha1;
  cfg.alpha2 = a.alpha2;
  cfg.log_every = a.log_every;
  cfg.shape = NetShape{a.levels, a.hidden, a.depth};
  cfg.mode = a.mode == "joint" ? SupervisionMode::kJoint : SupervisionMode::kOracleDirect;

  const TrainResult res = train(scene, orbit_cameras(30, 3.0, 64, 64), cfg);
  Checkpoint ck{res.net.levels, res.net.mlp, res.adam};
  save_checkpoint(a.out, ck);
  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  write_file(log_path, false, [&](std::ostream& o) { write_train_log_csv(o, res.log); });
  json summary = {{"event", "train"}, {"iterations", a.iters}, {"checkpoint", a.out}, {"log", log_path}};
  if (!res.log.empty()) {
    summary["loss_total"] = res.log.back().loss_total;
    summary["heldout_mae"] = res.log.back().heldout_mae;
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

struct PrecomputeArgs {
  std::string checkpoint, scene, envmap, out, map_res = "64x64";
  std::vector<std::string> lights;
  int threads = 0;
};

int run_precompute(const PrecomputeArgs& a) {
  if (a.lights.empty() == a.envmap.empty()) throw UsageError("precompute needs either --light (repeatable) or --envmap");
  if (!a.scene.empty()) resolve_scene(a.scene);
  const auto [w, h] = parse_size(a.map_res, "--map-res");
  if (w < 2 || h < 2) throw UsageError("--map-res must be at least 2x2");
  std::vector<LightDesc> lights;
  for (const auto& s : a.lights) lights.push_back(parse_light(s));
  if (!a.envmap.empty()) {
    require_file(a.envmap, "--envmap");
    lights = envmap_lights(load_envmap(a.envmap));
  }
  const TauNet net = load_net(a.checkpoint);

  PhaseCounters counters;
  const auto start = std::chrono::steady_clock::now();
  std::vector<TransmittanceMap> maps;
  for (const auto& l : lights) maps.push_back(build_map(l, w, h, net, &counters, resolve_threads(a.threads)));
  counters.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  save_maps(a.out, maps);
  json line = totals_json("precompute", snapshot(counters));
  line["maps"] = maps.size();
  line["out"] = a.out;
  std::cout << line.dump() << '\n';
  return 0;
}

struct RenderArgs {
  std::string scene, camera = "0,0,3:0,0,0:45:64x64", provider = "oracle", checkpoint, maps, envmap, out, out_raw;
  std::vector<std::string> lights;
  int n = 192, light_n = 192, threads = 0;
  std::uint64_t seed = 0;
  bool jitter = false;
  double exposure = 0;
};

int run_render(const RenderArgs& a) {
  const ProviderKind kind = parse_provider(a.provider);
  if (kind == ProviderKind::kMap && a.maps.empty()) throw UsageError("--provider map requires --maps");
  if (kind == ProviderKind::kNeural && a.checkpoint.empty()) throw UsageError("--provider neural requires --checkpoint");
  if (!a.lights.empty() && !a.envmap.empty()) throw UsageError("use either --light or --envmap, not both");
  if (a.n < 2 || a.light_n < 2) throw UsageError("sample counts must be >= 2");
  const Scene scene = resolve_scene(a.scene);
  const Camera camera = parse_camera(a.camera);
  std::vector<LightDesc> lights;
  for (const auto& s : a.lights) lights.push_back(parse_light(s));
  if (!a.envmap.empty()) {
    require_file(a.envmap, "--envmap");
    lights = envmap_lights(load_envmap(a.envmap));
  }

  TauProvider provider;
  switch (kind) {
    case ProviderKind::kOracle: provider = OracleMarch{MarchConfig{a.light_n, Jitter::kOff, a.seed}}; break;
    case ProviderKind::kNeural: provider = NeuralPerPoint{std::make_shared<const TauNet>(load_net(a.checkpoint))}; break;
    case ProviderKind::kMap: {
      require_file(a.maps, "--maps");
      MapLookup ml;
      ml.maps = load_maps(a.maps);
      // Without explicit lights, render with the lights the maps were built for.
      if (lights.empty())
        for (const auto& m : ml.maps) lights.push_back(m.light);
      if (ml.maps.size() != lights.size())
        throw UsageError("--maps holds " + std::to_string(ml.maps.size()) + " maps for " +
                         std::to_string(lights.size()) + " lights");
      provider = std::move(ml);
      break;
    }
  }
  if (lights.empty()) throw UsageError("render needs --light, --envmap or --maps");

  RenderOptions opts;
  opts.n_samples = a.n;
  opts.seed = a.seed;
  opts.jitter = a.jitter ? Jitter::kStratified : Jitter::kOff;
  opts.threads = a.threads;
  const RenderResult r = render(scene, camera, lights, std::move(provider), opts);

  write_file(a.out, true, [&](std::ostream& o) { write_ppm(o, r.image, a.exposure); });
  if (!a.out_raw.empty()) write_file(a.out_raw, true, [&](std::ostream& o) { write_raw(o, r.image); });
  std::cout << totals_json("precompute", r.stats.precompute).dump() << '\n';
  std::cout << totals_json("render", r.stats.render).dump() << '\n';
  std::cout << json{{"event", "render"},
                    {"provider", a.provider},
                    {"width", camera.width},
                    {"height", camera.height},
                    {"lights", lights.size()},
                    {"n", a.n},
                    {"total_queries", r.stats.total_queries()},
                    {"out", a.out}}
                   .dump()
            << '\n';
  return 0;
}

struct BenchArgs {
  std::string scene, checkpoint, sweep, providers = "neural,map", out, res = "32x32", map_res;
  int n = 192, light_n = 192, reps = 1, threads = 0;
  std::uint64_t seed = 0;
};

int run_bench(const BenchArgs& a) {
  SweepSpec spec;
  spec.scene_id = a.scene;
  spec.scene = resolve_scene(a.scene);
  for (const auto& s : split(a.sweep, ',')) {
    const double l = to_double(s, "--sweep");
    if (l < 1 || l != std::floor(l) || l > 1e6) throw UsageError("--sweep values must be positive integers");
    spec.l_values.push_back(static_cast<int>(l));
  }
  spec.providers.clear();
  for (const auto& p : split(a.providers, ',')) {
    try {
      spec.providers.push_back(parse_provider(p));
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
  }
  if (a.n < 2 || a.light_n < 2) throw UsageError("sample counts must be >= 2");
  if (a.reps < 1) throw UsageError("--reps must be >= 1");
  const auto [w, h] = parse_size(a.res, "--res");
  spec.camera = look_at(Vec3(0, 0, 3), Vec3::Zero(), full_frame_fov(3.0, w, h), w, h);
  if (!a.map_res.empty()) {
    std::tie(spec.map_width, spec.map_height) = parse_size(a.map_res, "--map-res");
    if (spec.map_width < 2 || spec.map_height < 2) throw UsageError("--map-res must be at least 2x2");
  }
  spec.n_samples = a.n;
  spec.light_march = MarchConfig{a.light_n};
  spec.repetitions = a.reps;
  spec.seed = a.seed;
  spec.threads = a.threads;
  // Query counts do not depend on the weights, so an untrained network is
  // enough when only the complexity separation is of interest.
  spec.net = std::make_shared<const TauNet>(a.checkpoint.empty() ? make_tau_net(a.seed) : load_net(a.checkpoint));

  const auto rows = run_sweep(spec);
  write_file(a.out, false, [&](std::ostream& o) { write_sweep_csv(o, rows); });
  for (const auto& r : rows)
    std::printf("provider=%s l=%d n=%d c=%llu tau_net_q=%llu speedup=%.4f psi=%.4f\n", r.provider.c_str(), r.l, r.n,
                static_cast<unsigned long long>(r.c), static_cast<unsigned long long>(r.tau_net_q), r.speedup_measured,
                r.psi_predicted);
  return 0;
}

struct EvalArgs {
  std::string img, ref;
};

int run_eval(const EvalArgs& a) {
  require_file(a.img, "--img");
  require_file(a.ref, "--ref");
  const ImageMetrics m = metrics(load_image(a.img), load_image(a.ref));
  std::printf("rmse=%.6f ssim=%.6f\n", m.rmse, m.ssim);
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "error: kind=" << kind << " message=\"" << one_line(msg) << "\"\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural transmittance: training, transmittance maps and relighting"};
  app.require_subcommand(1);
  app.footer(std::string(kLightHelp) + "\n" + kCameraHelp +
             "\nScenes: a built-in name (empty, sphere, two-spheres, box-occluder) or a scene file."
             "\nThreads: --threads, else TRANSMIT_THREADS, else all cores.");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Fit the transmittance network to a scene");
  train_cmd->add_option("--scene", ta.scene, "Scene name or file")->required();
  train_cmd->add_option("--out-checkpoint", ta.out, "Checkpoint to write")->required();
  train_cmd->add_option("--log", ta.log, "Training log CSV (default: <checkpoint>.log.csv)");
  train_cmd->add_option("--iters", ta.iters, "Iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--seed", ta.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--aug", ta.aug, "Augmentation rays per iteration")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch", ta.batch, "Camera rays per iteration")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--samples", ta.samples, "March samples per supervised ray")->capture_default_str()->check(CLI::Range(2, 100000));
  train_cmd->add_option("--mode", ta.mode, "Supervision: oracle or joint")->capture_default_str()->check(CLI::IsMember({"oracle", "joint"}));
  train_cmd->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--alpha1", ta.alpha1, "Density loss weight (joint mode)")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--alpha2", ta.alpha2, "Transmittance loss weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--levels", ta.levels, "Positional-encoding levels")->capture_default_str()->check(CLI::Range(0, 16));
  train_cmd->add_option("--hidden", ta.hidden, "Hidden layer width")->capture_default_str()->check(CLI::Range(1, 4096));
  train_cmd->add_option("--depth", ta.depth, "Hidden layers")->capture_default_str()->check(CLI::Range(1, 64));
  train_cmd->add_option("--log-every", ta.log_every, "Log interval (0: off)")->capture_default_str()->check(CLI::NonNegativeNumber);

  PrecomputeArgs pa;
  auto* pre_cmd = app.add_subcommand("precompute", "Build transmittance maps for a set of lights");
  pre_cmd->add_option("--checkpoint", pa.checkpoint, "Trained checkpoint")->required();
  pre_cmd->add_option("--scene", pa.scene, "Scene name or file (validated only)");
  pre_cmd->add_option("--light", pa.lights, "Light spec, repeatable");
  pre_cmd->add_option("--envmap", pa.envmap, "Environment map text file (one map per texel)");
  pre_cmd->add_option("--map-res", pa.map_res, "Map resolution WxH")->capture_default_str();
  pre_cmd->add_option("--out-map", pa.out, "Map file to write")->required();
  pre_cmd->add_option("--threads", pa.threads, "Worker threads")->check(CLI::NonNegativeNumber);

  RenderArgs ra;
  auto* render_cmd = app.add_subcommand("render", "Render an image");
  render_cmd->add_option("--scene", ra.scene, "Scene name or file")->required();
  render_cmd->add_option("--camera", ra.camera, kCameraHelp)->capture_default_str();
  render_cmd->add_option("--provider", ra.provider, "Light-side transmittance: oracle, neural or map")
      ->capture_default_str()
      ->check(CLI::IsMember({"oracle", "neural", "map"}));
  render_cmd->add_option("--checkpoint", ra.checkpoint, "Trained checkpoint (neural provider)");
  render_cmd->add_option("--maps", ra.maps, "Map file (map provider)");
  render_cmd->add_option("--envmap", ra.envmap, "Environment map text file");
  render_cmd->add_option("--light", ra.lights, "Light spec, repeatable");
  render_cmd->add_option("--out", ra.out, "PPM image to write")->required();
  render_cmd->add_option("--out-raw", ra.out_raw, "Raw float dump to write");
  render_cmd->add_option("--n", ra.n, "Samples per camera ray")->capture_default_str();
  render_cmd->add_option("--light-n", ra.light_n, "Samples per light ray (oracle provider)")->capture_default_str();
  render_cmd->add_option("--seed", ra.seed, "Sampling seed")->capture_default_str();
  render_cmd->add_flag("--jitter", ra.jitter, "Stratified jitter along camera rays");
  render_cmd->add_option("--exposure", ra.exposure, "Exposure in stops for the PPM")->capture_default_str();
  render_cmd->add_option("--threads", ra.threads, "Worker threads")->check(CLI::NonNegativeNumber);

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Query-count and timing sweep over environment-map size");
  bench_cmd->add_option("--scene", ba.scene, "Scene name or file")->required();
  bench_cmd->add_option("--sweep", ba.sweep, "Comma-separated environment-map sizes l")->required();
  bench_cmd->add_option("--providers", ba.providers, "Comma-separated providers")->capture_default_str();
  bench_cmd->add_option("--out", ba.out, "CSV report to write")->required();
  bench_cmd->add_option("--checkpoint", ba.checkpoint, "Trained checkpoint (default: untrained network)");
  bench_cmd->add_option("--res", ba.res, "Camera resolution WxH")->capture_default_str();
  bench_cmd->add_option("--map-res", ba.map_res, "Map resolution WxH (default: camera resolution)");
  bench_cmd->add_option("--n", ba.n, "Samples per camera ray")->capture_default_str();
  bench_cmd->add_option("--light-n", ba.light_n, "Samples per light ray (oracle provider)")->capture_default_str();
  bench_cmd->add_option("--reps", ba.reps, "Timing repetitions")->capture_default_str();
  bench_cmd->add_option("--seed", ba.seed, "Seed")->capture_default_str();
  bench_cmd->add_option("--threads", ba.threads, "Worker threads")->check(CLI::NonNegativeNumber);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Compare an image against a reference");
  eval_cmd->add_option("--img", ea.img, "Image (PPM or raw)")->required();
  eval_cmd->add_option("--ref", ea.ref, "Reference image (PPM or raw)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*pre_cmd) return run_precompute(pa);
    if (*render_cmd) return run_render(ra);
    if (*bench_cmd) return run_bench(ba);
    if (*eval_cmd) return run_eval(ea);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return fail("usage", "no subcommand", 2);
}
