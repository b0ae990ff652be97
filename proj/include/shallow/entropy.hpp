// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_ENTROPY_HPP_
#define SHALLOW_ENTROPY_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

constexpr double kSigmaFloor = 0.01;
constexpr double kSigmaCeil = 256.0;
constexpr double kPmfFloor = 0x1.0p-16;  // 2^-16, one coder frequency slot
constexpr double kLn2 = 0.6931471805599453;

// 64 log-spaced coding scales from 0.01 to 256 inclusive.
inline const std::array<double, 64>& ScaleTable() {
  static const std::array<double, 64> table = [] {
    std::array<double, 64> t{};
    const double lo = std::log(kSigmaFloor), hi = std::log(kSigmaCeil);
    for (int i = 0; i < 64; ++i)
      t[i] = std::exp(lo + (hi - lo) * i / 63.0);
    t[0] = kSigmaFloor;
    t[63] = kSigmaCeil;
    return t;
  }();
  return table;
}

// Smallest table index whose scale >= sigma (never underestimates the
// uncertainty); above-range sigmas clamp to the top entry.
inline int QuantizeScale(double sigma) {
  const auto& t = ScaleTable();
  if (sigma >= kSigmaCeil) return 63;
  for (int i = 0; i < 64; ++i)
    if (t[i] >= sigma * (1.0 - 1e-12)) return i;
  return 63;
}

inline double StdNormalCdf(double x) {
  return 0.5 * std::erfc(-x * 0.7071067811865476);
}
inline double StdNormalPdf(double x) {
  return 0.3989422804014327 * std::exp(-0.5 * x * x);
}

// P(round(v) = n) for v ~ N(mu, sigma^2), the bin [n-0.5, n+0.5).
// Written as an erfc difference so pmf(n, mu) == pmf(-n, -mu) exactly.
inline double DiscretizedGaussianPmfUnfloored(double n, double mu,
                                              double sigma) {
  if (sigma < kSigmaFloor * (1.0 - 1e-12))
    throw NumericError("DiscretizedGaussianPmf: sigma below floor");
  const double c = 1.0 / (sigma * 1.4142135623730951);
  return 0.5 * (std::erfc((mu - n - 0.5) * c) - std::erfc((mu - n + 0.5) * c));
}

inline double DiscretizedGaussianPmf(double n, double mu, double sigma) {
  double p = DiscretizedGaussianPmfUnfloored(n, mu, sigma);
  return p < kPmfFloor ? kPmfFloor : p;
}

// Per-element coding distributions over a latent grid.
struct ElementDists {
  Tensor mu;     // latent shape
  Tensor sigma;  // latent shape, each >= kSigmaFloor
};

// Sum of -log2 pmf over a quantized grid.
inline double RateBits(const std::vector<int32_t>& zhat,
                       const ElementDists& dists) {
  if (zhat.size() != dists.mu.size() || zhat.size() != dists.sigma.size())
    throw ShapeError("RateBits: shape mismatch");
  double bits = 0.0;
  for (size_t i = 0; i < zhat.size(); ++i)
    bits -= std::log2(DiscretizedGaussianPmf(zhat[i], dists.mu[i],
                                             dists.sigma[i]));
  return bits;
}

struct NoisyRateGrads {
  Tensor z;
  Tensor mu;
  Tensor sigma;
};

// Continuous relaxed rate: sum over elements of
//   -log2 [ Phi((v+0.5-mu)/sigma) - Phi((v-0.5-mu)/sigma) ],  v = z + u.
// The caller supplies the (seeded) noise tensor u; pass zeros for the
// noise-free variant used by SGA and by the zero-noise reduction tests.
// If grads != nullptr also accumulates d(bits)/d{z, mu, sigma}.
inline double NoisyRate(const Tensor& z, const Tensor& u,
                        const ElementDists& dists,
                        NoisyRateGrads* grads = nullptr) {
  z.check_same_shape(u, "NoisyRate noise");
  z.check_same_shape(dists.mu, "NoisyRate mu");
  z.check_same_shape(dists.sigma, "NoisyRate sigma");
  if (grads != nullptr) {
    grads->z = Tensor(z.shape());
    grads->mu = Tensor(z.shape());
    grads->sigma = Tensor(z.shape());
  }
  double bits = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    const double sigma = dists.sigma[i];
    if (sigma < kSigmaFloor * (1.0 - 1e-12))
      throw NumericError("NoisyRate: sigma below floor");
    const double v = z[i] + u[i];
    const double a = (v - 0.5 - dists.mu[i]) / sigma;
    const double b = (v + 0.5 - dists.mu[i]) / sigma;
    double p = StdNormalCdf(b) - StdNormalCdf(a);
    const bool clamped = p < 1e-12;
    if (clamped) p = 1e-12;
    bits -= std::log2(p);
    if (grads != nullptr && !clamped) {
      const double pa = StdNormalPdf(a), pb = StdNormalPdf(b);
      const double inv = -1.0 / (p * kLn2 * sigma);
      grads->z[i] = inv * (pb - pa);
      grads->mu[i] = -inv * (pb - pa);
      grads->sigma[i] = inv * (-(b * pb - a * pa));
    }
  }
  return bits;
}

}  // namespace shallow

#endif  // SHALLOW_ENTROPY_HPP_
