#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace iwprm {

// xoshiro256** with a splitmix64 seeder. Standard-library distributions are
// implementation-defined, so every sampling helper here is hand-rolled; that
// keeps generated datasets and training runs byte-identical across
// toolchains. State is four words, trivially serialized into checkpoints.
class Rng {
 public:
  using State = std::array<uint64_t, 4>;

  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  static Rng from_state(const State& s) {
    Rng r(0);
    r.s_ = s;
    return r;
  }

  State state() const { return s_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const auto span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(bounded(span));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller, no cached spare so draws per call are fixed.
  double normal(double mu = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // rejection-free enough for data generation; bias below 2^-32 for our spans
  uint64_t bounded(uint64_t span) {
    return static_cast<uint64_t>(uniform01() * static_cast<double>(span)) % span;
  }

  State s_;
};

// Derives an independent stream for (seed, tag, index); used so per-instance
// generation is identical no matter how work is split across workers.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag, uint64_t index) {
  uint64_t x = seed ^ (0x9e3779b97f4a7c15ull * (tag + 1));
  x ^= index + 0x632be59bd9b4e019ull + (x << 6) + (x >> 2);
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace iwprm
