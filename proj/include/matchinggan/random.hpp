#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "matchinggan/errors.hpp"
#include "matchinggan/tensor.hpp"

namespace mgan {

// All randomness in the library flows through explicitly passed engines of
// this type. Draw helpers below carry no hidden state, so the engine state
// alone is enough to resume a stream.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  // 53 random mantissa bits, in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in (0, 1), never exactly zero.
inline double uniform_open(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double standard_normal(Rng& rng) {
  const double u1 = uniform_open(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Uniform integer in [0, n) by rejection, independent of the stdlib's
// distribution implementation.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw UsageError("uniform_index: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

// First k entries of a partial Fisher-Yates shuffle of [0, n).
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  if (k > n) throw UsageError("sample_without_replacement: k exceeds population");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

template <class T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(stddev * standard_normal(rng));
  return t;
}

// Independent child stream; used to give sub-tasks their own generator.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6d67616eU};
  return Rng(seq);
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("corrupt rng state");
}

}  // namespace mgan
