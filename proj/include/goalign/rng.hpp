#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

// Self-contained RNG. std:: distributions are implementation-defined, which
// would break bit-identical runs across toolchains, so everything below is
// spelled out.
namespace goalign::rng {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Counter-based fan-out: one master seed -> independent per-item seeds.
inline uint64_t mix_seed(uint64_t master, uint64_t counter) {
  uint64_t s = master ^ (0x9E3779B97F4A7C15ull * (counter + 0x632BE59BD9B4E019ull));
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() { return splitmix64(state_); }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive range
  int uniform_int(int lo, int hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(
        static_cast<uint64_t>((static_cast<unsigned __int128>(next()) * range) >> 64));
  }

  // Box-Muller, two fresh draws per sample
  double normal() {
    double u1;
    do { u1 = uniform(); } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace goalign::rng
