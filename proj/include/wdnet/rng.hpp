#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace wdnet {

// splitmix64-based generator. std::mt19937_64 would work, but the
// distributions on top of it are implementation-defined; this keeps dataset
// synthesis and weight init bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in the open interval (0,1)
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // uniform in the open interval (lo,hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0,n)
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Box-Muller; draws pairs so the stream stays deterministic.
  double normal(double mean, double stddev) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // Derives an independent stream, e.g. per dataset sample.
  static uint64_t derive(uint64_t seed, std::string_view tag, uint64_t index) {
    uint64_t h = 0xcbf29ce484222325ull ^ seed;
    for (char ch : tag) {
      h ^= static_cast<uint8_t>(ch);
      h *= 0x100000001b3ull;
    }
    for (int i = 0; i < 8; ++i) {
      h ^= (index >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wdnet
