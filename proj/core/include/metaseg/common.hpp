#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaseg {

// ---------------------------------------------------------------------------
// Errors. Exit-code mapping lives in the CLI: ValueError -> 1, the rest -> 2.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user input: bad shapes requested, bad config, bad coordinates.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Internal contract violation between tensors/modules (shape mismatch etc).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or other numeric failure at runtime.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Scalar precision. One global mode: f64 for correctness/test work, f32 for
// training speed. New tensors pick up the current default.
// ---------------------------------------------------------------------------

enum class Dtype { f32, f64 };

Dtype default_dtype();
void set_default_dtype(Dtype d);

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 output is pinned by the standard; the
// distributions are not, so uniform/normal are implemented here.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    // Rejection-free modulo bias is negligible for our n, but stay exact.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  // Standard normal via Box-Muller (both values used, order fixed).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Normal truncated to [-2s, 2s], the usual transformer init.
  double trunc_normal(double stddev) {
    double v = normal();
    while (v < -2.0 || v > 2.0) v = normal();
    return v * stddev;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace metaseg
