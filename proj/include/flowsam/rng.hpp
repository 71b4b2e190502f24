#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace flowsam {

// Deterministic random stream. Uniform/normal draws are generated from the
// raw engine bits directly (instead of std:: distributions) so that a fixed
// seed yields the same sequence on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // standard normal
  double normal(double mean, double sigma);
  int uniform_int(int n);                 // {0, ..., n-1}

  // Child stream decorrelated from this one by a salt; does not consume
  // state from the parent.
  RngStream child(std::uint64_t salt) const;

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// splitmix64 finalizer; used for seed derivation and content hashing.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v);
std::uint64_t hash_combine(std::uint64_t h, const std::string& s);

}  // namespace flowsam
