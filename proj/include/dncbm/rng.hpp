#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace dncbm {

struct RngSeed {
  std::uint64_t value = 0;
  friend bool operator==(RngSeed, RngSeed) = default;
};

// Child seed for a named consumer, e.g. derive_seed(run, "sae").
RngSeed derive_seed(RngSeed parent, std::string_view label);

// mt19937_64 with portable sampling helpers. The distribution adaptors of
// <random> are implementation-defined, so values are built from raw draws.
class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                            // [0, 1)
  double uniform(double lo, double hi);        // [lo, hi)
  std::size_t below(std::size_t n);            // [0, n), unbiased
  double normal();                             // Box-Muller
  std::size_t weighted(std::span<const double> weights);  // P(i) ∝ weights[i]

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dncbm
