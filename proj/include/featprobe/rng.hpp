#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace featprobe {

// Deterministic random stream. All randomness in the toolkit flows through
// this class so that a seed pins every draw bit-for-bit on any platform.
// Normals use an explicit Box-Muller transform; std::normal_distribution is
// deliberately avoided because its output differs between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform();
  // Uniform in (0, 1]; used where a log of the draw is taken.
  double uniform_pos();
  // Standard normal. Box-Muller produces pairs; the spare is cached.
  double normal();
  // Normal(0, stddev^2) truncated to |z| <= cut by resampling, as used for
  // weight init. The untruncated draw stream is consumed until one fits.
  double truncated_normal(double stddev, double cut = 2.0);
  // Integer in [0, n). Multiply-shift mapping of one 64-bit draw.
  std::int64_t below(std::int64_t n);
  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::int64_t> permutation(std::int64_t n);
  void fill_normal(double* out, std::int64_t n);

  // Derive the seed of an independent stream from a base seed and a tag
  // string ("batch", "split", ...). splitmix64 finalizer over an FNV-1a hash
  // of the tag; stable, documented, and order-independent between streams.
  static std::uint64_t derive(std::uint64_t seed, std::string_view tag);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit hash, also used for config fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace featprobe
