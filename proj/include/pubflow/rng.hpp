#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace pubflow {

/// Deterministic pseudo-random generator (xoshiro256** seeded via splitmix64).
///
/// Every random choice in the library flows through this class so that a run
/// is reproducible bit-for-bit from its seeds, independent of the standard
/// library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  /// Unbiased integer in [0, n). Requires n > 0.
  uint64_t below(uint64_t n);

  /// Double in [0, 1) with 53 random bits.
  double unit();

  double uniform(double lo, double hi);

  /// Standard normal deviate (Box-Muller).
  double normal();

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stable 64-bit hash of a byte string (FNV-1a with a final mixing round).
uint64_t stable_hash(std::string_view bytes);

/// Derives an independent stream seed from a base seed and a textual tag,
/// e.g. derive_seed(master, "exp-a|train|aef|oos-f1|seed2"). Adding new tags
/// never perturbs the streams of existing ones.
uint64_t derive_seed(uint64_t base, std::string_view tag);

}  // namespace pubflow
