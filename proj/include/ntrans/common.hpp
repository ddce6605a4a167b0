#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ntrans {

using Vec3 = Eigen::Vector3d;
using Rgb = Eigen::Array3d;

// Error hierarchy. Every failure the library reports is one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateRay : Error {
  using Error::Error;
};
struct OutOfChord : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct LightInsideSphere : Error {
  using Error::Error;
};
struct OutsideMap : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) {
  return z > 30 ? z : std::log1p(std::exp(z));
}

// Worker count: explicit value if > 0, else TRANSMIT_THREADS, else hardware.
inline unsigned resolve_threads(int requested = 0) {
  if (requested > 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv("TRANSMIT_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(chunk) for chunk in [0, n_chunks). Chunks are the unit of work and
// their boundaries never depend on the thread count, so any computation that
// writes only to per-chunk outputs is bit-identical for every thread count.
template <typename Fn>
void parallel_chunks(std::size_t n_chunks, unsigned threads, Fn&& fn) {
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n_chunks, 1)));
  if (threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t c = next++; c < n_chunks; c = next++) fn(c);
        } catch (...) {
          errors[w] = std::current_exception();
          next = n_chunks;
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Deterministic 64-bit mixer used to derive per-item seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Right-handed orthonormal basis (u, v) perpendicular to unit n.
inline void orthonormal_basis(const Vec3& n, Vec3& u, Vec3& v) {
  const double sign = std::copysign(1.0, n.z());
  const double a = -1.0 / (sign + n.z());
  const double b = n.x() * n.y() * a;
  u = Vec3(1.0 + sign * n.x() * n.x() * a, sign * b, -sign * n.x());
  v = Vec3(b, sign + n.y() * n.y() * a, -n.y());
}

}  // namespace ntrans
