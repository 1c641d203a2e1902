#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace protoseg {

/// SplitMix64 stream (Steele, Lea & Flood 2014). The state advances by the
/// golden-ratio increment and each output is a fixed mix of the state, so a
/// seed fully determines the stream on every platform. All derived draws use
/// only integer arithmetic and IEEE double operations defined here; nothing
/// is delegated to <random> distributions, whose outputs vary by vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; the second variate is discarded.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

  /// Independent child stream keyed on `stream`.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t state_;
};

std::uint64_t mix64(std::uint64_t z);

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace protoseg
