// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_COMMON_HPP_
#define SHALLOW_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace shallow {

// Error categories; the CLI maps these onto its exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : Error {
  using Error::Error;
};
struct MissingInputError : Error {
  using Error::Error;
};
struct IntegrityError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};

using Rng = std::mt19937_64;

// Deterministic draws, independent of libstdc++ distribution internals.
inline double Uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// U(-0.5, 0.5), the quantization noise of the relaxed objective.
inline double UniformNoise(Rng& rng) { return Uniform01(rng) - 0.5; }

inline double GumbelSample(Rng& rng) {
  double u = Uniform01(rng);
  if (u < 1e-300) u = 1e-300;
  return -std::log(-std::log(u));
}

// Box-Muller; consumes two words per pair, caller keeps no state.
inline double NormalSample(Rng& rng) {
  double u1 = Uniform01(rng);
  double u2 = Uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline uint64_t Fnv1a64(const uint8_t* data, size_t len,
                        uint64_t seed = 0xcbf29ce484222325ull) {
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace shallow

#endif  // SHALLOW_COMMON_HPP_
