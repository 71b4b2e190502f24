#include "flowsam/rng.hpp"

#include <cmath>

namespace flowsam {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

RngStream::RngStream(std::uint64_t seed) : engine_(mix64(seed)), seed_(seed) {}

double RngStream::uniform() {
  // 53 random mantissa bits -> double in [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller on (0,1] x [0,1)
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_normal_ = true;
  return r * std::cos(a);
}

double RngStream::normal(double mean, double sigma) {
  return mean + sigma * normal();
}

int RngStream::uniform_int(int n) {
  // Rejection-free for our purposes: n is tiny relative to 2^64.
  return static_cast<int>(engine_() % static_cast<std::uint64_t>(n));
}

RngStream RngStream::child(std::uint64_t salt) const {
  return RngStream(hash_combine(seed_, salt));
}

std::uint64_t hash_combine(std::uint64_t h, const std::string& s) {
  for (char ch : s) h = hash_combine(h, static_cast<std::uint64_t>(ch));
  return hash_combine(h, s.size());
}

}  // namespace flowsam
