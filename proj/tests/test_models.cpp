// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <set>
#include <string>

#include "shallow/checkpoint.hpp"
#include "shallow/dct.hpp"
#include "shallow/models.hpp"
#include "shallow/tensor.hpp"
#include "test_util.hpp"

using namespace shallow;
using shallow_test::RelErr;

namespace {

ModelConfig SmallTwoLayerConfig() {
  ModelConfig cfg;
  cfg.arch = ArchTag::kTwoLayer;
  cfg.hp.C = 6;
  cfg.hp.s = 16;
  cfg.hp.N = 4;
  cfg.hp.k1 = 9;
  cfg.hp.s1 = 8;
  cfg.hp.k2 = 3;
  cfg.hp.s2 = 2;
  cfg.with_analysis = true;
  cfg.analysis_filters = 4;
  cfg.analysis_kernel = 3;
  cfg.seed = 42;
  return cfg;
}

double Dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("mac accounting reproduces the reference complexity figures") {
  // single transposed conv, C=320, k=18, s=16 -> 1.215 KMAC/px
  MacReport jl = MacCountJpegLike(320, 18, 16, 512, 768);
  CHECK(jl.per_pixel == doctest::Approx(1215.0));
  CHECK(RelErr(jl.kmac_per_pixel, 1.22) < 0.02);
  // two-layer: 320*169*24/256 + 12*25*3/4 = 5295 MAC/px
  MacReport tl = MacCountTwoLayer(320, 13, 8, 12, 5, 2, 512, 768);
  CHECK(tl.per_pixel == doctest::Approx(5295.0));
  CHECK(RelErr(tl.kmac_per_pixel, 5.34) < 0.02);
  REQUIRE(tl.layers.size() == 3);
  CHECK(tl.layers[0].macs == tl.layers[1].macs);  // conv_res doubles conv_1
}

TEST_CASE("mac count is exact integer arithmetic and monotone in k") {
  CHECK(TransposedConvMacs(320, 32, 48, 18, 3) ==
        320ull * 32 * 48 * 18 * 18 * 3);
  uint64_t prev = 0;
  for (uint64_t k = 16; k <= 24; ++k) {
    const uint64_t macs = MacCountJpegLike(320, k, 16, 256, 256).total;
    CHECK(macs >= prev);  // k = s is the minimum over k >= s
    prev = macs;
  }
  CHECK(MacCountJpegLike(320, 16, 16, 256, 256).per_pixel ==
        doctest::Approx(960.0));
}

TEST_CASE("jpeg-like synthesis with zero latents and bias is zero") {
  ModelConfig cfg;
  cfg.hp.C = 8;
  cfg.hp.k = 4;
  cfg.hp.s = 4;
  cfg.with_analysis = false;
  CodecModel m = BuildModel(cfg);
  Tensor z({2, 2, 8});
  Tensor y = Synthesize(m, z);
  REQUIRE(y.shape() == std::vector<size_t>{8, 8, 3});
  CHECK(SquaredNorm(y) == 0.0);
}

TEST_CASE("jpeg-like synthesis is affine") {
  ModelConfig cfg;
  cfg.hp.C = 8;
  cfg.hp.k = 6;
  cfg.hp.s = 4;
  cfg.with_analysis = false;
  cfg.seed = 7;
  CodecModel m = BuildModel(cfg);
  for (size_t i = 0; i < m.jpeg->layer.bias.size(); ++i)
    m.jpeg->layer.bias[i] = 0.2 * (i + 1.0);
  Rng rng(1);
  Tensor z1 = RandomTensor({3, 3, 8}, rng);
  Tensor z2 = RandomTensor({3, 3, 8}, rng);
  const double alpha = 0.3;
  Tensor mix = Lerp(z2, z1, alpha);  // alpha*z1 + (1-alpha)*z2
  Tensor lhs = Synthesize(m, mix);
  Tensor rhs = Lerp(Synthesize(m, z2), Synthesize(m, z1), alpha);
  for (size_t i = 0; i < lhs.size(); ++i)
    CHECK(std::fabs(lhs[i] - rhs[i]) < 1e-10);
}

TEST_CASE("two-layer reduces to a linear map when gamma=0, beta=1, res=0") {
  ModelConfig cfg = SmallTwoLayerConfig();
  cfg.with_analysis = false;
  CodecModel m = BuildModel(cfg);
  m.two_layer->beta_raw = Tensor::Full({4}, 1.0);
  m.two_layer->gamma_raw = Tensor({4, 4});
  m.two_layer->conv_res.weights = Tensor(m.two_layer->conv_res.weights.shape());
  m.two_layer->conv_res.bias = Tensor({4});
  m.two_layer->conv1.bias = Tensor({4});
  m.two_layer->conv2.bias = Tensor({3});
  Rng rng(2);
  Tensor z1 = RandomTensor({2, 2, 6}, rng);
  Tensor z2 = RandomTensor({2, 2, 6}, rng);
  Tensor sum = Synthesize(m, z1 + z2);
  Tensor parts = Synthesize(m, z1) + Synthesize(m, z2);
  for (size_t i = 0; i < sum.size(); ++i)
    CHECK(sum[i] == doctest::Approx(parts[i]).epsilon(1e-10));
}

TEST_CASE("two-layer output is 16x the latent grid") {
  CodecModel m = BuildModel(SmallTwoLayerConfig());
  Tensor z({3, 2, 6});
  Tensor y = Synthesize(m, z);
  CHECK(y.shape() == std::vector<size_t>{48, 32, 3});
}

TEST_CASE("analysis maps (H,W,3) to (H/16,W/16,C)") {
  CodecModel m = BuildModel(SmallTwoLayerConfig());
  Rng rng(3);
  Tensor x = RandomTensor({32, 48, 3}, rng, 0.2);
  Tensor z = Analyze(m, x);
  CHECK(z.shape() == std::vector<size_t>{2, 3, 6});
  Tensor bad = RandomTensor({30, 48, 3}, rng);
  CHECK_THROWS_AS((void)Analyze(m, bad), ShapeError);
}

TEST_CASE("synthesis backward matches finite differences") {
  CodecModel m = BuildModel(SmallTwoLayerConfig());
  Rng rng(4);
  Tensor z = RandomTensor({2, 2, 6}, rng);
  Tensor upstream = RandomTensor({32, 32, 3}, rng);
  SynthCache cache;
  (void)Synthesize(m, z, &cache);
  GradMap grads;
  Tensor gz = SynthesizeBackward(m, cache, upstream, &grads);
  auto loss = [&] { return Dot(upstream, Synthesize(m, z)); };
  const double step = 1e-5;
  // latent gradient
  for (int p = 0; p < 20; ++p) {
    const size_t i = rng() % z.size();
    const double orig = z[i];
    z[i] = orig + step;
    const double up = loss();
    z[i] = orig - step;
    const double down = loss();
    z[i] = orig;
    CHECK(RelErr((up - down) / (2 * step), gz[i]) < 1e-4);
  }
  // a parameter gradient from each tensor
  ForEachParam(m, [&](const std::string& name, Tensor& t) {
    if (grads.count(name) == 0) return;
    for (int p = 0; p < 5; ++p) {
      const size_t i = rng() % t.size();
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss();
      t[i] = orig - step;
      const double down = loss();
      t[i] = orig;
      INFO("param ", name, " index ", i);
      CHECK(RelErr((up - down) / (2 * step), grads.at(name)[i]) < 1e-4);
    }
  });
}

TEST_CASE("analysis backward matches finite differences") {
  CodecModel m = BuildModel(SmallTwoLayerConfig());
  Rng rng(5);
  Tensor x = RandomTensor({16, 16, 3}, rng, 0.3);
  Tensor upstream = RandomTensor({1, 1, 6}, rng);
  AnalysisCache cache;
  (void)Analyze(m, x, &cache);
  GradMap grads;
  Tensor gx = AnalyzeBackward(m, cache, upstream, &grads);
  auto loss = [&] { return Dot(upstream, Analyze(m, x)); };
  const double step = 1e-5;
  for (int p = 0; p < 20; ++p) {
    const size_t i = rng() % x.size();
    const double orig = x[i];
    x[i] = orig + step;
    const double up = loss();
    x[i] = orig - step;
    const double down = loss();
    x[i] = orig;
    CHECK(RelErr((up - down) / (2 * step), gx[i]) < 1e-4);
  }
  ForEachParam(m, [&](const std::string& name, Tensor& t) {
    if (grads.count(name) == 0) return;
    for (int p = 0; p < 5; ++p) {
      const size_t i = rng() % t.size();
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss();
      t[i] = orig - step;
      const double down = loss();
      t[i] = orig;
      INFO("param ", name, " index ", i);
      CHECK(RelErr((up - down) / (2 * step), grads.at(name)[i]) < 1e-4);
    }
  });
}

TEST_CASE("hyper roundtrip with zero weights gives constant mu and sigma") {
  ModelConfig cfg;
  cfg.hp.C = 4;
  cfg.hp.k = 4;
  cfg.hp.s = 4;
  cfg.with_analysis = false;
  cfg.with_hyper = true;
  cfg.hyper_channels = 3;
  CodecModel m = BuildModel(cfg);
  m.hyper->hyper_analysis.weights =
      Tensor(m.hyper->hyper_analysis.weights.shape());
  m.hyper->hyper_synthesis.weights =
      Tensor(m.hyper->hyper_synthesis.weights.shape());
  for (size_t c = 0; c < 4; ++c) {
    m.hyper->hyper_synthesis.bias(c) = 0.7;        // mu half
    m.hyper->hyper_synthesis.bias(4 + c) = -0.3;   // sigma_raw half
  }
  Rng rng(6);
  Tensor zhat({8, 8, 4});
  for (size_t i = 0; i < zhat.size(); ++i)
    zhat[i] = std::floor(3.0 * Uniform01(rng)) - 1.0;
  ElementDists d = HyperRoundtrip(m, zhat);
  CHECK(d.mu.shape() == zhat.shape());
  const double want_sigma = kSigmaFloor + Softplus(-0.3);
  for (size_t i = 0; i < d.mu.size(); ++i) {
    CHECK(d.mu[i] == doctest::Approx(0.7));
    CHECK(d.sigma[i] == doctest::Approx(want_sigma));
  }
}

TEST_CASE("checkpoint save/load is byte-identical and hash-stable") {
  ModelConfig cfg = SmallTwoLayerConfig();
  cfg.with_hyper = true;
  cfg.hyper_channels = 3;
  CodecModel m = BuildModel(cfg);
  const std::string path = "models_test.ckpt";
  SaveModel(m, path);
  LoadedModel lm = LoadModel(path);
  CHECK(ModelParamHash(lm.model) == ModelParamHash(m));
  CHECK(SerializeModel(lm.model) == SerializeModel(m));
  CHECK(lm.model.hp.k1 == m.hp.k1);
  CHECK(lm.model.has_hyper());
  REQUIRE(lm.model.analysis.has_value());
  CHECK(lm.model.analysis->layers.size() == 4);
  // hash is sensitive to any parameter change
  lm.model.two_layer->conv1.weights[0] += 1e-9;
  CHECK(ModelParamHash(lm.model) != ModelParamHash(m));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects corruption") {
  CodecModel m = BuildModel(SmallTwoLayerConfig());
  auto bytes = SerializeModel(m);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS((void)DeserializeModel(bad_magic), IntegrityError);
  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS((void)DeserializeModel(truncated), IntegrityError);
  CHECK_THROWS_AS((void)LoadModel("no_such_file.ckpt"), MissingInputError);
}

TEST_CASE("dct basis images are orthonormal") {
  const size_t n = 8;
  auto order = ZigzagOrder(n);
  REQUIRE(order.size() == n * n);
  CHECK(order[0] == std::pair<size_t, size_t>{0, 0});
  // Gram matrix of all 64 basis images is the identity
  for (size_t a = 0; a < n * n; ++a) {
    Tensor ba = DctBasisImage(n, order[a].first, order[a].second);
    for (size_t b = a; b < n * n; ++b) {
      Tensor bb = DctBasisImage(n, order[b].first, order[b].second);
      const double want = a == b ? 1.0 : 0.0;
      CHECK(std::fabs(Dot(ba, bb) - want) < 1e-10);
    }
  }
}

TEST_CASE("dct synthesis kernels tile the color planes") {
  Tensor w = DctSynthesisKernels(4, 48, 6);
  CHECK(w.shape() == std::vector<size_t>{6, 6, 48, 3});
  // channel 0 -> DC basis in the red plane, channel 1 -> green, etc.
  CHECK(w(0, 0, 0, 0) == doctest::Approx(0.25));
  CHECK(w(0, 0, 1, 1) == doctest::Approx(0.25));
  CHECK(w(0, 0, 1, 0) == 0.0);
  // embedded top-left: taps beyond the block are zero
  for (size_t c = 0; c < 48; ++c)
    for (size_t col = 0; col < 3; ++col) {
      CHECK(w(5, 5, c, col) == 0.0);
      CHECK(w(0, 4, c, col) == 0.0);
    }
}

TEST_CASE("parameter enumeration order is stable") {
  CodecModel m = BuildModel(SmallTwoLayerConfig());
  std::vector<std::string> names;
  ForEachParam(m, [&](const std::string& n, const Tensor&) {
    names.push_back(n);
  });
  REQUIRE(names.size() > 4);
  CHECK(names[0] == "syn1.w");
  CHECK(names.back() == "prior.sigma_raw");
  std::set<std::string> unique(names.begin(), names.end());
  CHECK(unique.size() == names.size());
}
