#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace posenc {

// Counter-based generator: draw n of stream s under seed k is
// mix64(key(k, s) + n * golden), where mix64 is the SplitMix64 finalizer.
// Output depends only on (seed, stream, counter), so any number of
// independent streams can be derived from one seed and every platform
// produces the same sequence. Distributions are implemented here rather
// than through <random> whose distributions are implementation-defined.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-counter";

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal (Box-Muller).
  double normal();

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace posenc
