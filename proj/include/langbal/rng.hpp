#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace langbal {

// All randomness uses mt19937_64 with the draw helpers below. The standard
// distributions are implementation-defined, so they are avoided to keep
// outputs identical across standard libraries.
using Rng = std::mt19937_64;

// Derives a child seed from a parent seed and a name, e.g.
// derive_seed(root, "train/arm=cw").
std::uint64_t derive_seed(std::uint64_t parent, std::string_view name);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

// Uniform in [0, 1) with 53 bits of precision.
double uniform01(Rng& rng);

// Uniform in [lo, hi).
double uniform(Rng& rng, double lo, double hi);

// Uniform integer in [0, bound). bound must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);

// Fisher-Yates shuffle driven by uniform_index.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace langbal
