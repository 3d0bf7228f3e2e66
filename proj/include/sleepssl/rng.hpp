#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace sleepssl {

// Every stochastic component owns its own stream derived from (seed, tag) so
// results do not depend on call order elsewhere in the program.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(mix(seed, 0x9e3779b97f4a7c15ull)) {}
  Rng(uint64_t seed, uint64_t stream) : eng_(mix(seed, mix(stream, 0xbf58476d1ce4e5b9ull))) {}
  Rng(uint64_t seed, const std::string& tag) : Rng(seed, hash_tag(tag)) {}

  std::mt19937_64& engine() { return eng_; }

  float normal(float mean = 0.0f, float stddev = 1.0f) {
    std::normal_distribution<float> d(mean, stddev);
    return d(eng_);
  }
  float uniform(float lo = 0.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(eng_);
  }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    std::uniform_int_distribution<int64_t> d(lo, hi);
    return d(eng_);
  }

  static uint64_t hash_tag(const std::string& tag) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : tag) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  static uint64_t mix(uint64_t a, uint64_t b) {  // splitmix64 over a ^ rot(b)
    uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace sleepssl
