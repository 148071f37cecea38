#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mixacm {

/// Deterministic random source. All distributions are implemented on top of
/// the (standard-pinned) mt19937_64 stream so that results are bit-identical
/// across platforms and standard library versions; std::*_distribution is
/// deliberately not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal via Box-Muller (one spare cached).
  double normal();
  double normal(double mean, double stddev);
  /// Gamma(shape, 1) via Marsaglia-Tsang, any shape > 0.
  double gamma(double shape);
  /// Beta(a, b) via two gamma draws.
  double beta(double a, double b);
  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  /// Serialized engine state (textual, format pinned by the standard).
  std::string state() const;
  void set_state(const std::string& s);

  /// Derives an independent stream for a named purpose.
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mixacm
