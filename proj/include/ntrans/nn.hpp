#pragma once

// Small fully connected network with hand-written backprop and Adam.
// All parameters live in one contiguous vector so optimizer state, gradient
// checks and checkpointing work on flat arrays. Batches are column-major:
// one sample per column.

#include "ntrans/common.hpp"

#include <Eigen/Dense>

#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace ntrans {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Appends sin(2^k pi v_i), cos(2^k pi v_i) for k < levels to v. Higher
/// octaves come from the double-angle recurrence.
inline void pos_encode_into(std::span<const double> v, int levels, double* out) {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = v[i];
  double* enc = out + n;
  for (std::size_t i = 0; i < n; ++i) {
    if (levels <= 0) break;
    double s = std::sin(std::numbers::pi * v[i]);
    double c = std::cos(std::numbers::pi * v[i]);
    for (int k = 0; k < levels; ++k) {
      enc[(2 * k) * n + i] = s;
      enc[(2 * k + 1) * n + i] = c;
      const double s2 = 2.0 * s * c;
      const double c2 = c * c - s * s;
      s = s2;
      c = c2;
    }
  }
}

inline std::size_t encoded_size(std::size_t n, int levels) { return n * (2 * static_cast<std::size_t>(levels) + 1); }

inline Vector pos_encode(std::span<const double> v, int levels) {
  if (levels < 0) throw Error("encoding levels must be >= 0");
  Vector out(static_cast<Eigen::Index>(encoded_size(v.size(), levels)));
  pos_encode_into(v, levels, out.data());
  return out;
}

struct MlpParams {
  std::vector<int> widths;  // input, hidden..., output
  Vector theta;             // per layer: W (out x in, column-major) then b

  MlpParams() = default;
  explicit MlpParams(std::vector<int> w) : widths(std::move(w)) {
    if (widths.size() < 2) throw ShapeMismatch("network needs at least input and output widths");
    for (int x : widths)
      if (x <= 0) throw ShapeMismatch("layer widths must be positive");
    theta = Vector::Zero(static_cast<Eigen::Index>(param_count(widths)));
  }

  static std::size_t param_count(const std::vector<int>& widths) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      n += static_cast<std::size_t>(widths[l + 1]) * (widths[l] + 1);
    return n;
  }

  int layers() const { return static_cast<int>(widths.size()) - 1; }
  int in_dim() const { return widths.front(); }
  int out_dim() const { return widths.back(); }

  std::size_t offset(int layer) const {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l) off += static_cast<std::size_t>(widths[l + 1]) * (widths[l] + 1);
    return off;
  }

  Eigen::Map<Matrix> weight(int l) { return {theta.data() + offset(l), widths[l + 1], widths[l]}; }
  Eigen::Map<const Matrix> weight(int l) const { return {theta.data() + offset(l), widths[l + 1], widths[l]}; }
  Eigen::Map<Vector> bias(int l) {
    return {theta.data() + offset(l) + static_cast<std::size_t>(widths[l + 1]) * widths[l], widths[l + 1]};
  }
  Eigen::Map<const Vector> bias(int l) const {
    return {theta.data() + offset(l) + static_cast<std::size_t>(widths[l + 1]) * widths[l], widths[l + 1]};
  }
};

/// Glorot-uniform weights, zero biases.
inline MlpParams init_mlp(std::vector<int> widths, std::uint64_t seed) {
  MlpParams p(std::move(widths));
  std::mt19937_64 rng(seed);
  for (int l = 0; l < p.layers(); ++l) {
    const double limit = std::sqrt(6.0 / (p.widths[l] + p.widths[l + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = p.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
  }
  return p;
}

struct MlpCache {
  // activations[0] is the input; activations[l] the post-ReLU output of
  // hidden layer l. The final pre-activation is the network output.
  std::vector<Matrix> activations;
};

inline Matrix forward(const MlpParams& p, const Matrix& x, MlpCache* cache = nullptr) {
  if (x.rows() != p.in_dim())
    throw ShapeMismatch("input has " + std::to_string(x.rows()) + " rows, network expects " +
                        std::to_string(p.in_dim()));
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(x);
  }
  Matrix h = x;
  for (int l = 0; l < p.layers(); ++l) {
    Matrix z = p.weight(l) * h;
    z.colwise() += p.bias(l);
    if (l + 1 < p.layers()) {
      z = z.cwiseMax(0.0);
      if (cache) cache->activations.push_back(z);
    }
    h = std::move(z);
  }
  return h;
}

/// Gradient of sum(dy .* y) with respect to theta.
inline Vector backward(const MlpParams& p, const MlpCache& cache, const Matrix& dy) {
  if (static_cast<int>(cache.activations.size()) != p.layers())
    throw ShapeMismatch("cache does not match network depth");
  const Eigen::Index batch = cache.activations.front().cols();
  if (dy.rows() != p.out_dim() || dy.cols() != batch) throw ShapeMismatch("upstream gradient has wrong shape");
  Vector grad = Vector::Zero(p.theta.size());
  Matrix delta = dy;
  for (int l = p.layers() - 1; l >= 0; --l) {
    const Matrix& a = cache.activations[static_cast<std::size_t>(l)];
    const std::size_t off = p.offset(l);
    Eigen::Map<Matrix> gw(grad.data() + off, p.widths[l + 1], p.widths[l]);
    Eigen::Map<Vector> gb(grad.data() + off + static_cast<std::size_t>(p.widths[l + 1]) * p.widths[l],
                          p.widths[l + 1]);
    gw.noalias() = delta * a.transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Matrix prev = p.weight(l).transpose() * delta;
      delta = prev.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    }
  }
  return grad;
}

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(const MlpParams& p, double learning_rate)
      : m(Vector::Zero(p.theta.size())), v(Vector::Zero(p.theta.size())), lr(learning_rate) {}
};

inline void adam_step(MlpParams& p, const Vector& grad, AdamState& s) {
  if (grad.size() != p.theta.size() || s.m.size() != p.theta.size() || s.v.size() != p.theta.size())
    throw ShapeMismatch("adam: gradient/moment shape does not match parameters");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  p.theta.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
  if (!p.theta.allFinite()) throw DivergenceError("non-finite parameter after optimizer step");
}

// ---------------------------------------------------------------------------
// Checkpoint file (little-endian):
//   char[4]  "NTCK"
//   u32      version (1)
//   i32      encoder levels
//   u32      layer width count K, then K x i32 widths
//   u64      parameter count P, then P x f64 theta
//   u64      adam step; f64 lr, beta1, beta2, eps
//   P x f64  first moment, P x f64 second moment
// ---------------------------------------------------------------------------

namespace io {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("unexpected end of file");
  return v;
}

inline void put_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void get_doubles(std::istream& in, double* p, std::size_t n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw FormatError("unexpected end of file");
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
}

}  // namespace io

struct Checkpoint {
  int levels = 0;
  MlpParams params;
  AdamState adam;
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const auto& p = ck.params;
  out.write("NTCK", 4);
  io::put<std::uint32_t>(out, 1);
  io::put<std::int32_t>(out, ck.levels);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.widths.size()));
  for (int w : p.widths) io::put<std::int32_t>(out, w);
  const auto n = static_cast<std::size_t>(p.theta.size());
  io::put<std::uint64_t>(out, n);
  io::put_doubles(out, p.theta.data(), n);
  io::put<std::uint64_t>(out, ck.adam.step);
  io::put(out, ck.adam.lr);
  io::put(out, ck.adam.beta1);
  io::put(out, ck.adam.beta2);
  io::put(out, ck.adam.eps);
  Vector m = ck.adam.m.size() == p.theta.size() ? ck.adam.m : Vector::Zero(p.theta.size());
  Vector v = ck.adam.v.size() == p.theta.size() ? ck.adam.v : Vector::Zero(p.theta.size());
  io::put_doubles(out, m.data(), n);
  io::put_doubles(out, v.data(), n);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, "NTCK");
  if (const auto version = io::get<std::uint32_t>(in); version != 1)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.levels = io::get<std::int32_t>(in);
  const auto k = io::get<std::uint32_t>(in);
  if (k < 2 || k > 64) throw FormatError("implausible layer count");
  std::vector<int> widths(k);
  for (auto& w : widths) w = io::get<std::int32_t>(in);
  ck.params = MlpParams(widths);
  const auto n = io::get<std::uint64_t>(in);
  if (n != static_cast<std::uint64_t>(ck.params.theta.size())) throw FormatError("parameter count mismatch");
  io::get_doubles(in, ck.params.theta.data(), n);
  ck.adam = AdamState(ck.params, 0.0);
  ck.adam.step = io::get<std::uint64_t>(in);
  ck.adam.lr = io::get<double>(in);
  ck.adam.beta1 = io::get<double>(in);
  ck.adam.beta2 = io::get<double>(in);
  ck.adam.eps = io::get<double>(in);
  io::get_doubles(in, ck.adam.m.data(), n);
  io::get_doubles(in, ck.adam.v.data(), n);
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace ntrans
