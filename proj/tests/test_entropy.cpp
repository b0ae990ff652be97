// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "shallow/entropy.hpp"
#include "shallow/tensor.hpp"
#include "test_util.hpp"

using namespace shallow;
using shallow_test::RelErr;

namespace {

// Independent oracle: integrate the N(mu, sigma^2) density over
// [n-0.5, n+0.5] by composite Simpson's rule.
double PmfByIntegration(double n, double mu, double sigma) {
  const int steps = 2000;  // even
  const double lo = n - 0.5, hi = n + 0.5;
  const double h = (hi - lo) / steps;
  auto pdf = [&](double x) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
  };
  double s = pdf(lo) + pdf(hi);
  for (int i = 1; i < steps; ++i)
    s += pdf(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("scale table spans 0.01..256, strictly increasing") {
  const auto& t = ScaleTable();
  CHECK(t[0] == 0.01);
  CHECK(t[63] == 256.0);
  for (int i = 1; i < 64; ++i) CHECK(t[i] > t[i - 1]);
}

TEST_CASE("quantize_scale ceiling-match semantics") {
  CHECK(QuantizeScale(0.005) == 0);
  CHECK(QuantizeScale(256.0) == 63);
  CHECK(QuantizeScale(1000.0) == 63);
  for (int i : {3, 17, 40, 63}) CHECK(QuantizeScale(ScaleTable()[i]) == i);
  // never underestimates
  for (double s = 0.01; s < 256.0; s *= 1.7)
    CHECK(ScaleTable()[QuantizeScale(s)] >= s * (1.0 - 1e-12));
}

TEST_CASE("discretized gaussian pmf matches numeric integration") {
  CHECK(DiscretizedGaussianPmf(0, 0.0, 1.0) ==
        doctest::Approx(0.382925).epsilon(1e-5));
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    const double mu = 4.0 * (Uniform01(rng) - 0.5);
    const double sigma = 0.05 + 3.0 * Uniform01(rng);
    const double n = std::floor(6.0 * (Uniform01(rng) - 0.5));
    const double want = PmfByIntegration(n, mu, sigma);
    if (want < 2 * kPmfFloor) continue;
    CHECK(RelErr(DiscretizedGaussianPmf(n, mu, sigma), want) < 1e-8);
  }
}

TEST_CASE("pmf symmetry and monotonicity in |n - mu|") {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const double mu = 3.0 * (Uniform01(rng) - 0.5);
    const double sigma = 0.02 + 2.0 * Uniform01(rng);
    for (int n = -4; n <= 4; ++n) {
      const double a = DiscretizedGaussianPmfUnfloored(n, mu, sigma);
      const double b = DiscretizedGaussianPmfUnfloored(-n, -mu, sigma);
      CHECK(std::fabs(a - b) < 1e-12);
    }
    // nonincreasing away from mu on each side
    const int c = static_cast<int>(std::lround(mu));
    for (int n = c; n < c + 6; ++n)
      CHECK(DiscretizedGaussianPmfUnfloored(n + 1, mu, sigma) <=
            DiscretizedGaussianPmfUnfloored(n, mu, sigma) + 1e-15);
    for (int n = c; n > c - 6; --n)
      CHECK(DiscretizedGaussianPmfUnfloored(n - 1, mu, sigma) <=
            DiscretizedGaussianPmfUnfloored(n, mu, sigma) + 1e-15);
  }
}

TEST_CASE("pmf sums to one over a wide support before flooring") {
  for (double sigma : {0.05, 0.3, 1.0, 7.5}) {
    const double mu = 0.37;
    double total = 0.0;
    const int r = static_cast<int>(std::ceil(40.0 * sigma)) + 1;
    for (int n = -r; n <= r; ++n)
      total += DiscretizedGaussianPmfUnfloored(n + std::round(mu), mu, sigma);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pmf floor bounds codelength at 16 bits") {
  // far tail: unfloored pmf is tiny, floored is exactly 2^-16
  CHECK(DiscretizedGaussianPmf(100, 0.0, 0.5) == kPmfFloor);
  CHECK(-std::log2(DiscretizedGaussianPmf(100, 0.0, 0.5)) ==
        doctest::Approx(16.0));
  CHECK_THROWS_AS((void)DiscretizedGaussianPmf(0, 0.0, 0.001), NumericError);
}

TEST_CASE("rate_bits single element with pmf one half is one bit") {
  // bisect sigma so that pmf(0; 0, sigma) == 0.5
  double lo = 0.3, hi = 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (DiscretizedGaussianPmfUnfloored(0, 0.0, mid) > 0.5 ? lo : hi) = mid;
  }
  ElementDists d;
  d.mu = Tensor({1, 1, 1});
  d.sigma = Tensor::Full({1, 1, 1}, 0.5 * (lo + hi));
  CHECK(RateBits({0}, d) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS((void)RateBits({0, 1}, d), ShapeError);
}

TEST_CASE("noisy_rate with zero noise on integers equals rate_bits") {
  Rng rng(3);
  Tensor z({2, 3, 4});
  std::vector<int32_t> zi(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    zi[i] = static_cast<int32_t>(rng() % 7) - 3;
    z[i] = zi[i];
  }
  ElementDists d;
  d.mu = RandomTensor(z.shape(), rng, 0.5);
  d.sigma = Tensor(z.shape());
  for (size_t i = 0; i < z.size(); ++i) d.sigma[i] = 0.5 + 2.0 * Uniform01(rng);
  Tensor u(z.shape());
  CHECK(NoisyRate(z, u, d) == doctest::Approx(RateBits(zi, d)).epsilon(1e-12));
}

TEST_CASE("noisy_rate gradients match finite differences") {
  Rng rng(4);
  Tensor z = RandomTensor({2, 2, 3}, rng, 1.5);
  Tensor u(z.shape());
  for (size_t i = 0; i < u.size(); ++i) u[i] = UniformNoise(rng);
  ElementDists d;
  d.mu = RandomTensor(z.shape(), rng, 0.5);
  d.sigma = Tensor(z.shape());
  for (size_t i = 0; i < z.size(); ++i) d.sigma[i] = 0.3 + 2.0 * Uniform01(rng);
  NoisyRateGrads g;
  (void)NoisyRate(z, u, d, &g);
  const double step = 1e-5;
  for (size_t i = 0; i < z.size(); ++i) {
    auto fd = [&](Tensor* t, size_t j) {
      const double orig = (*t)[j];
      (*t)[j] = orig + step;
      const double up = NoisyRate(z, u, d);
      (*t)[j] = orig - step;
      const double down = NoisyRate(z, u, d);
      (*t)[j] = orig;
      return (up - down) / (2.0 * step);
    };
    CHECK(RelErr(fd(&z, i), g.z[i]) < 1e-4);
    CHECK(RelErr(fd(&d.mu, i), g.mu[i]) < 1e-4);
    CHECK(RelErr(fd(&d.sigma, i), g.sigma[i]) < 1e-4);
  }
}

TEST_CASE("noisy rate upper-bounds the discrete rate in expectation") {
  Rng rng(5);
  Tensor z({4, 4, 2});
  std::vector<int32_t> zi(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    zi[i] = static_cast<int32_t>(rng() % 5) - 2;
    z[i] = zi[i];
  }
  ElementDists d;
  d.mu = RandomTensor(z.shape(), rng, 0.3);
  d.sigma = Tensor(z.shape());
  for (size_t i = 0; i < z.size(); ++i) d.sigma[i] = 0.4 + Uniform01(rng);
  const double discrete = RateBits(zi, d);
  double acc = 0.0;
  const int trials = 10000;
  Tensor u(z.shape());
  for (int t = 0; t < trials; ++t) {
    for (size_t i = 0; i < u.size(); ++i) u[i] = UniformNoise(rng);
    acc += NoisyRate(z, u, d);
  }
  const double per_element_slack = 0.05 * static_cast<double>(z.size());
  CHECK(acc / trials >= discrete - per_element_slack);
}
