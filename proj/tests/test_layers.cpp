// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "shallow/layers.hpp"
#include "shallow/tensor.hpp"
#include "test_util.hpp"

using namespace shallow;
using shallow_test::RelErr;

namespace {

double Dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central-difference check of an analytic gradient of the scalar
// loss(x) = <upstream, f(x)> at `probes` random elements of `wrt`.
void FdCheck(const std::function<double()>& loss, Tensor* wrt,
             const Tensor& analytic, int probes, Rng& rng,
             double step = 1e-5, double tol = 1e-4) {
  for (int p = 0; p < probes; ++p) {
    const size_t i = rng() % wrt->size();
    const double orig = (*wrt)[i];
    (*wrt)[i] = orig + step;
    const double up = loss();
    (*wrt)[i] = orig - step;
    const double down = loss();
    (*wrt)[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    INFO("probe ", p, " index ", i, " fd ", fd, " analytic ", analytic[i]);
    CHECK(RelErr(fd, analytic[i]) < tol);
  }
}

}  // namespace

TEST_CASE("transposed conv single block by hand") {
  ConvSpec spec(1, 1, 2, 2, true);
  spec.weights(0, 0, 0, 0) = 1.0;
  spec.weights(1, 1, 0, 0) = 1.0;
  Tensor z({1, 1, 1});
  z[0] = 2.0;
  Tensor y = ConvTransposeForward(z, spec);
  REQUIRE(y.shape() == std::vector<size_t>{2, 2, 1});
  CHECK(y(0, 0, 0) == 2.0);
  CHECK(y(0, 1, 0) == 0.0);
  CHECK(y(1, 0, 0) == 0.0);
  CHECK(y(1, 1, 0) == 2.0);
}

TEST_CASE("transposed conv zero kernel gives constant bias output") {
  ConvSpec spec(2, 3, 4, 2, true);
  spec.bias(0) = 1.5;
  spec.bias(2) = -2.5;
  Rng rng(1);
  Tensor z = RandomTensor({3, 3, 2}, rng);
  Tensor y = ConvTransposeForward(z, spec);
  for (size_t p = 0; p < y.dim(0) * y.dim(1); ++p) {
    CHECK(y[p * 3 + 0] == 1.5);
    CHECK(y[p * 3 + 1] == 0.0);
    CHECK(y[p * 3 + 2] == -2.5);
  }
}

TEST_CASE("transposed conv overlapping pixels sum block contributions") {
  // h=w=2, s=2, k=3: overlap of one pixel between neighboring blocks.
  ConvSpec spec(1, 1, 3, 2, true);
  Rng rng(2);
  for (size_t i = 0; i < spec.weights.size(); ++i)
    spec.weights[i] = NormalSample(rng);
  Tensor z = RandomTensor({2, 2, 1}, rng);
  Tensor y = ConvTransposeForward(z, spec);
  REQUIRE(y.dim(0) == 4);
  // Independent direct-summation oracle over all block placements.
  Tensor ref({4, 4, 1});
  for (size_t i = 0; i < 2; ++i)
    for (size_t j = 0; j < 2; ++j)
      for (size_t a = 0; a < 3; ++a)
        for (size_t b = 0; b < 3; ++b) {
          const size_t oy = 2 * i + a, ox = 2 * j + b;
          if (oy < 4 && ox < 4)
            ref(oy, ox, 0) += z(i, j, 0) * spec.weights(a, b, 0, 0);
        }
  for (size_t i = 0; i < y.size(); ++i)
    CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("transposed conv with k=s is an independent per-block matrix map") {
  ConvSpec spec(4, 3, 2, 2, true);
  Rng rng(3);
  for (size_t i = 0; i < spec.weights.size(); ++i)
    spec.weights[i] = NormalSample(rng);
  Tensor z = RandomTensor({3, 2, 4}, rng);
  Tensor y = ConvTransposeForward(z, spec);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 2; ++j)
      for (size_t a = 0; a < 2; ++a)
        for (size_t b = 0; b < 2; ++b)
          for (size_t co = 0; co < 3; ++co) {
            double want = 0.0;
            for (size_t ci = 0; ci < 4; ++ci)
              want += z(i, j, ci) * spec.weights(a, b, ci, co);
            CHECK(y(2 * i + a, 2 * j + b, co) ==
                  doctest::Approx(want).epsilon(1e-12));
          }
}

TEST_CASE("transposed conv vjp matches finite differences") {
  ConvSpec spec(2, 3, 3, 2, true);
  Rng rng(4);
  for (size_t i = 0; i < spec.weights.size(); ++i)
    spec.weights[i] = NormalSample(rng);
  for (size_t i = 0; i < spec.bias.size(); ++i)
    spec.bias[i] = NormalSample(rng);
  Tensor x = RandomTensor({4, 4, 2}, rng);
  Tensor upstream = RandomTensor({8, 8, 3}, rng);
  ConvGrads g = ConvTransposeVjp(x, spec, upstream);
  auto loss = [&] { return Dot(upstream, ConvTransposeForward(x, spec)); };
  FdCheck(loss, &x, g.input, 40, rng);
  FdCheck(loss, &spec.weights, g.weights, 40, rng);
  FdCheck(loss, &spec.bias, g.bias, 3, rng);
}

TEST_CASE("transposed conv vjp zero upstream and linearity") {
  ConvSpec spec(2, 2, 2, 2, true);
  Rng rng(5);
  for (size_t i = 0; i < spec.weights.size(); ++i)
    spec.weights[i] = NormalSample(rng);
  Tensor x = RandomTensor({3, 3, 2}, rng);
  Tensor zero({6, 6, 2});
  ConvGrads g0 = ConvTransposeVjp(x, spec, zero);
  CHECK(SquaredNorm(g0.input) == 0.0);
  CHECK(SquaredNorm(g0.weights) == 0.0);
  CHECK(SquaredNorm(g0.bias) == 0.0);
  Tensor u1 = RandomTensor({6, 6, 2}, rng);
  Tensor u2 = RandomTensor({6, 6, 2}, rng);
  ConvGrads ga = ConvTransposeVjp(x, spec, u1);
  ConvGrads gb = ConvTransposeVjp(x, spec, u2);
  ConvGrads gs = ConvTransposeVjp(x, spec, u1 + u2);
  for (size_t i = 0; i < gs.input.size(); ++i)
    CHECK(gs.input[i] == doctest::Approx(ga.input[i] + gb.input[i]));
  for (size_t i = 0; i < gs.weights.size(); ++i)
    CHECK(gs.weights[i] == doctest::Approx(ga.weights[i] + gb.weights[i]));
}

TEST_CASE("strided conv 1x1 kernel stride 1 is a per-pixel linear map") {
  ConvSpec spec(2, 2, 1, 1, false);
  spec.weights(0, 0, 0, 0) = 2.0;
  spec.weights(0, 0, 1, 1) = -1.0;
  spec.bias(0) = 0.5;
  Rng rng(6);
  Tensor x = RandomTensor({3, 3, 2}, rng);
  Tensor y = ConvForward(x, spec);
  for (size_t p = 0; p < 9; ++p) {
    CHECK(y[p * 2 + 0] == doctest::Approx(2.0 * x[p * 2 + 0] + 0.5));
    CHECK(y[p * 2 + 1] == doctest::Approx(-1.0 * x[p * 2 + 1]));
  }
}

TEST_CASE("conv then transposed conv on a delta matches direct summation") {
  // Mirror-padded strided conv composed with a transposed conv; oracle is a
  // from-scratch double loop over all contributing index pairs.
  ConvSpec conv(1, 1, 3, 1, false);
  ConvSpec tconv(1, 1, 3, 1, true);
  Rng rng(7);
  for (size_t i = 0; i < 9; ++i) {
    conv.weights[i] = NormalSample(rng);
    tconv.weights[i] = conv.weights[i];
  }
  Tensor x({7, 7, 1});
  x(3, 3, 0) = 1.0;
  Tensor y = ConvTransposeForward(ConvForward(x, conv), tconv);
  Tensor mid({7, 7, 1});
  for (ptrdiff_t oy = 0; oy < 7; ++oy)
    for (ptrdiff_t ox = 0; ox < 7; ++ox)
      for (ptrdiff_t a = 0; a < 3; ++a)
        for (ptrdiff_t b = 0; b < 3; ++b) {
          const ptrdiff_t iy = detail::MirrorIndex(oy + a - 1, 7);
          const ptrdiff_t ix = detail::MirrorIndex(ox + b - 1, 7);
          mid(static_cast<size_t>(oy), static_cast<size_t>(ox), 0) +=
              conv.weights(static_cast<size_t>(a), static_cast<size_t>(b), 0,
                           0) *
              x(static_cast<size_t>(iy), static_cast<size_t>(ix), 0);
        }
  Tensor ref({7, 7, 1});
  for (size_t i = 0; i < 7; ++i)
    for (size_t j = 0; j < 7; ++j)
      for (size_t a = 0; a < 3; ++a)
        for (size_t b = 0; b < 3; ++b)
          if (i + a < 7 && j + b < 7)
            ref(i + a, j + b, 0) += mid(i, j, 0) * tconv.weights(a, b, 0, 0);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("strided conv vjp matches finite differences") {
  ConvSpec spec(2, 3, 4, 2, false);
  Rng rng(8);
  for (size_t i = 0; i < spec.weights.size(); ++i)
    spec.weights[i] = NormalSample(rng);
  for (size_t i = 0; i < spec.bias.size(); ++i)
    spec.bias[i] = NormalSample(rng);
  Tensor x = RandomTensor({6, 6, 2}, rng);
  Tensor upstream = RandomTensor({3, 3, 3}, rng);
  ConvGrads g = ConvVjp(x, spec, upstream);
  auto loss = [&] { return Dot(upstream, ConvForward(x, spec)); };
  FdCheck(loss, &x, g.input, 40, rng);
  FdCheck(loss, &spec.weights, g.weights, 40, rng);
  FdCheck(loss, &spec.bias, g.bias, 3, rng);
}

TEST_CASE("igdn identity and scalar hand evaluation") {
  IGDNSpec id(3);  // beta = 1, gamma = 0
  Rng rng(9);
  Tensor x = RandomTensor({2, 2, 3}, rng);
  Tensor y = IgdnForward(x, id);
  for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

  IGDNSpec s(1);
  s.gamma(0, 0) = 1.0;
  Tensor v({1, 1, 1});
  v[0] = 2.0;
  CHECK(IgdnForward(v, s)[0] == doctest::Approx(6.0));
  v[0] = -2.0;
  CHECK(IgdnForward(v, s)[0] == doctest::Approx(-6.0));  // odd symmetry
}

TEST_CASE("igdn vjp matches finite differences away from the kink") {
  const size_t C = 4;
  IGDNSpec spec(C);
  Rng rng(10);
  for (size_t c = 0; c < C; ++c) spec.beta(c) = 0.5 + Uniform01(rng);
  for (size_t i = 0; i < spec.gamma.size(); ++i)
    spec.gamma[i] = 0.2 * Uniform01(rng);
  Tensor x({3, 3, C});
  for (size_t i = 0; i < x.size(); ++i) {
    double v = NormalSample(rng);
    if (std::fabs(v) < 1e-2) v = v < 0 ? v - 1e-2 : v + 1e-2;
    x[i] = v;
  }
  Tensor upstream = RandomTensor(x.shape(), rng);
  IGDNGrads g = IgdnVjp(x, spec, upstream);
  auto loss = [&] { return Dot(upstream, IgdnForward(x, spec)); };
  FdCheck(loss, &x, g.input, 60, rng);
  FdCheck(loss, &spec.beta, g.beta, 4, rng);
  FdCheck(loss, &spec.gamma, g.gamma, 30, rng);
}

TEST_CASE("igdn vjp zero upstream and linearity") {
  IGDNSpec spec(2);
  spec.gamma(0, 1) = 0.3;
  Rng rng(11);
  Tensor x = RandomTensor({2, 2, 2}, rng);
  Tensor zero(x.shape());
  IGDNGrads g0 = IgdnVjp(x, spec, zero);
  CHECK(SquaredNorm(g0.input) == 0.0);
  CHECK(SquaredNorm(g0.beta) == 0.0);
  CHECK(SquaredNorm(g0.gamma) == 0.0);
  Tensor u1 = RandomTensor(x.shape(), rng);
  Tensor u2 = RandomTensor(x.shape(), rng);
  IGDNGrads ga = IgdnVjp(x, spec, u1);
  IGDNGrads gb = IgdnVjp(x, spec, u2);
  IGDNGrads gs = IgdnVjp(x, spec, u1 + u2);
  for (size_t i = 0; i < gs.input.size(); ++i)
    CHECK(gs.input[i] == doctest::Approx(ga.input[i] + gb.input[i]));
}

TEST_CASE("layer preconditions throw") {
  ConvSpec t(2, 2, 2, 2, true);
  ConvSpec c(2, 2, 2, 2, false);
  Rng rng(12);
  Tensor x = RandomTensor({4, 4, 3}, rng);  // wrong channels
  CHECK_THROWS_AS((void)ConvTransposeForward(x, t), ShapeError);
  CHECK_THROWS_AS((void)ConvForward(x, c), ShapeError);
  Tensor odd = RandomTensor({5, 5, 2}, rng);  // not divisible by stride
  CHECK_THROWS_AS((void)ConvForward(odd, c), ShapeError);
  IGDNSpec ig(4);
  CHECK_THROWS_AS((void)IgdnForward(x, ig), ShapeError);
}
