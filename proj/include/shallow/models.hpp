// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_MODELS_HPP_
#define SHALLOW_MODELS_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/dct.hpp"
#include "shallow/entropy.hpp"
#include "shallow/layers.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

enum class ArchTag : uint8_t { kJpegLike = 0, kTwoLayer = 1 };

// Architecture hyperparameters as stored in the checkpoint header.
struct HyperParams {
  uint16_t C = 192;   // latent channels
  uint16_t s = 16;    // total up/downsampling factor
  uint16_t k = 18;    // jpeg-like kernel size (k >= s)
  uint16_t N = 12;    // two-layer hidden channels
  uint16_t k1 = 13, s1 = 8;
  uint16_t k2 = 5, s2 = 2;
};

inline double Softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}
inline double SoftplusPrime(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double SoftplusInverse(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

// Nonnegativity of iGDN parameters is kept by storing unconstrained values
// and squaring at read time, with beta floored.
inline IGDNSpec MaterializeIgdn(const Tensor& beta_raw,
                                const Tensor& gamma_raw) {
  const size_t C = beta_raw.dim(0);
  IGDNSpec spec(C);
  for (size_t c = 0; c < C; ++c)
    spec.beta(c) = beta_raw(c) * beta_raw(c) + IGDNSpec::kBetaFloor;
  for (size_t i = 0; i < gamma_raw.size(); ++i)
    spec.gamma[i] = gamma_raw[i] * gamma_raw[i];
  return spec;
}

// Single transposed conv, C -> 3 (Eq.-1 style basis-image synthesis).
struct JpegLikeSynthesis {
  ConvSpec layer;
};

// conv_2( igdn(conv_1(z)) + conv_res(z) )
struct TwoLayerSynthesis {
  ConvSpec conv1;     // transposed, C -> N
  ConvSpec conv_res;  // transposed, C -> N, same geometry as conv1
  Tensor beta_raw;    // (N)
  Tensor gamma_raw;   // (N, N)
  ConvSpec conv2;     // transposed, N -> 3
};

// 4 strided convolutions with iGDN-style activations between them.
struct AnalysisTransform {
  std::vector<ConvSpec> layers;
  std::vector<Tensor> act_beta_raw;   // one per non-final layer
  std::vector<Tensor> act_gamma_raw;
};

// Per-channel (mu, sigma) shared across spatial positions.
struct FactorizedPrior {
  Tensor mu;         // (C)
  Tensor sigma_raw;  // (C); sigma = kSigmaFloor + softplus(sigma_raw)

  double sigma(size_t c) const { return kSigmaFloor + Softplus(sigma_raw(c)); }
};

// One-layer hyperprior: strided hyper-analysis C -> Ch and a transposed
// hyper-synthesis Ch -> 2C producing per-element (mu, sigma_raw).
struct HyperpriorModel {
  ConvSpec hyper_analysis;   // conv, C -> Ch, k=6, s=4
  ConvSpec hyper_synthesis;  // transposed, Ch -> 2C, k=6, s=4
  FactorizedPrior hyper_prior;  // over quantized hyper-latents (Ch)
};

struct CodecModel {
  ArchTag arch = ArchTag::kJpegLike;
  HyperParams hp;
  std::optional<JpegLikeSynthesis> jpeg;
  std::optional<TwoLayerSynthesis> two_layer;
  std::optional<AnalysisTransform> analysis;
  FactorizedPrior prior;
  std::optional<HyperpriorModel> hyper;

  bool has_hyper() const { return hyper.has_value(); }
  size_t latent_channels() const { return hp.C; }
  size_t total_stride() const { return hp.s; }
};

// ---------------------------------------------------------------------------
// Parameter enumeration (fixed order; checkpoint and optimizer rely on it).

inline void ForEachParam(CodecModel& m,
                         const std::function<void(const std::string&, Tensor&)>& fn) {
  if (m.jpeg) {
    fn("syn.w", m.jpeg->layer.weights);
    fn("syn.b", m.jpeg->layer.bias);
  }
  if (m.two_layer) {
    fn("syn1.w", m.two_layer->conv1.weights);
    fn("syn1.b", m.two_layer->conv1.bias);
    fn("synres.w", m.two_layer->conv_res.weights);
    fn("synres.b", m.two_layer->conv_res.bias);
    fn("igdn.beta_raw", m.two_layer->beta_raw);
    fn("igdn.gamma_raw", m.two_layer->gamma_raw);
    fn("syn2.w", m.two_layer->conv2.weights);
    fn("syn2.b", m.two_layer->conv2.bias);
  }
  if (m.analysis) {
    for (size_t i = 0; i < m.analysis->layers.size(); ++i) {
      const std::string p = "ana" + std::to_string(i);
      fn(p + ".w", m.analysis->layers[i].weights);
      fn(p + ".b", m.analysis->layers[i].bias);
      if (i < m.analysis->act_beta_raw.size()) {
        fn(p + ".act_beta_raw", m.analysis->act_beta_raw[i]);
        fn(p + ".act_gamma_raw", m.analysis->act_gamma_raw[i]);
      }
    }
  }
  fn("prior.mu", m.prior.mu);
  fn("prior.sigma_raw", m.prior.sigma_raw);
  if (m.hyper) {
    fn("hyper_ana.w", m.hyper->hyper_analysis.weights);
    fn("hyper_ana.b", m.hyper->hyper_analysis.bias);
    fn("hyper_syn.w", m.hyper->hyper_synthesis.weights);
    fn("hyper_syn.b", m.hyper->hyper_synthesis.bias);
    fn("hyper_prior.mu", m.hyper->hyper_prior.mu);
    fn("hyper_prior.sigma_raw", m.hyper->hyper_prior.sigma_raw);
  }
}

inline void ForEachParam(
    const CodecModel& m,
    const std::function<void(const std::string&, const Tensor&)>& fn) {
  ForEachParam(const_cast<CodecModel&>(m),
               [&](const std::string& n, Tensor& t) { fn(n, t); });
}

inline uint64_t ModelParamHash(const CodecModel& m) {
  uint64_t h = 0xcbf29ce484222325ull;
  ForEachParam(m, [&](const std::string& name, const Tensor& t) {
    h = Fnv1a64(reinterpret_cast<const uint8_t*>(name.data()), name.size(), h);
    h = Fnv1a64(reinterpret_cast<const uint8_t*>(t.data()),
                t.size() * sizeof(double), h);
  });
  return h;
}

using GradMap = std::map<std::string, Tensor>;

inline void AccumGrad(GradMap* g, const std::string& name, const Tensor& t) {
  if (g == nullptr) return;
  auto it = g->find(name);
  if (it == g->end()) g->emplace(name, t);
  else it->second += t;
}

// ---------------------------------------------------------------------------
// Synthesis g(z)

struct SynthCache {
  Tensor z;
  // two-layer intermediates
  Tensor a;   // conv1(z)
  Tensor r;   // conv_res(z)
  Tensor m;   // igdn(a)
  Tensor h;   // m + r
  IGDNSpec igdn;
};

inline Tensor Synthesize(const CodecModel& model, const Tensor& z,
                         SynthCache* cache = nullptr) {
  if (z.rank() != 3 || z.dim(2) != model.hp.C)
    throw ShapeError("Synthesize: latent channel mismatch");
  if (cache != nullptr) cache->z = z;
  if (model.arch == ArchTag::kJpegLike) {
    return ConvTransposeForward(z, model.jpeg->layer);
  }
  const TwoLayerSynthesis& tl = *model.two_layer;
  Tensor a = ConvTransposeForward(z, tl.conv1);
  Tensor r = ConvTransposeForward(z, tl.conv_res);
  IGDNSpec igdn = MaterializeIgdn(tl.beta_raw, tl.gamma_raw);
  Tensor m = IgdnForward(a, igdn);
  Tensor h = m + r;
  Tensor y = ConvTransposeForward(h, tl.conv2);
  if (cache != nullptr) {
    cache->a = std::move(a);
    cache->r = std::move(r);
    cache->m = std::move(m);
    cache->h = std::move(h);
    cache->igdn = std::move(igdn);
  }
  return y;
}

// Returns grad w.r.t. z; parameter grads (if pg) use ForEachParam names.
inline Tensor SynthesizeBackward(const CodecModel& model,
                                 const SynthCache& cache,
                                 const Tensor& upstream, GradMap* pg) {
  if (model.arch == ArchTag::kJpegLike) {
    ConvGrads g = ConvTransposeVjp(cache.z, model.jpeg->layer, upstream);
    AccumGrad(pg, "syn.w", g.weights);
    AccumGrad(pg, "syn.b", g.bias);
    return g.input;
  }
  const TwoLayerSynthesis& tl = *model.two_layer;
  ConvGrads g2 = ConvTransposeVjp(cache.h, tl.conv2, upstream);
  AccumGrad(pg, "syn2.w", g2.weights);
  AccumGrad(pg, "syn2.b", g2.bias);
  // h = m + r, so g2.input flows to both branches
  IGDNGrads gi = IgdnVjp(cache.a, cache.igdn, g2.input);
  if (pg != nullptr) {
    const size_t N = tl.beta_raw.dim(0);
    Tensor gb({N});
    for (size_t c = 0; c < N; ++c) gb(c) = gi.beta(c) * 2.0 * tl.beta_raw(c);
    Tensor gg({N, N});
    for (size_t i = 0; i < gg.size(); ++i)
      gg[i] = gi.gamma[i] * 2.0 * tl.gamma_raw[i];
    AccumGrad(pg, "igdn.beta_raw", gb);
    AccumGrad(pg, "igdn.gamma_raw", gg);
  }
  ConvGrads g1 = ConvTransposeVjp(cache.z, tl.conv1, gi.input);
  AccumGrad(pg, "syn1.w", g1.weights);
  AccumGrad(pg, "syn1.b", g1.bias);
  ConvGrads gr = ConvTransposeVjp(cache.z, tl.conv_res, g2.input);
  AccumGrad(pg, "synres.w", gr.weights);
  AccumGrad(pg, "synres.b", gr.bias);
  return g1.input + gr.input;
}

// ---------------------------------------------------------------------------
// Analysis z = f(x)

struct AnalysisCache {
  std::vector<Tensor> inputs;  // input to each conv layer
  std::vector<Tensor> pre;     // conv outputs (activation inputs)
  std::vector<IGDNSpec> acts;
};

// x is a real-convention image tensor (H, W, 3). Models without a CNN
// analysis (e.g. the DCT baseline) fall back to the adjoint of the
// jpeg-like synthesis kernel, which is exact when k == s.
inline Tensor Analyze(const CodecModel& model, const Tensor& x,
                      AnalysisCache* cache = nullptr) {
  if (x.rank() != 3 || x.dim(2) != 3) throw ShapeError("Analyze: bad input");
  if (x.dim(0) % model.hp.s != 0 || x.dim(1) % model.hp.s != 0)
    throw ShapeError("Analyze: dimensions not divisible by total stride");
  if (!model.analysis.has_value()) {
    if (!model.jpeg)
      throw Error("Analyze: model has no analysis transform");
    const ConvSpec& syn = model.jpeg->layer;
    ConvSpec adj(3, syn.in_channels, syn.kernel, syn.stride, false);
    for (size_t a = 0; a < syn.kernel; ++a)
      for (size_t b = 0; b < syn.kernel; ++b)
        for (size_t ci = 0; ci < syn.in_channels; ++ci)
          for (size_t co = 0; co < 3; ++co)
            adj.weights(a, b, co, ci) = syn.weights(a, b, ci, co);
    return ConvForward(x, adj);
  }
  const AnalysisTransform& ana = *model.analysis;
  Tensor cur = x;
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->acts.clear();
  }
  for (size_t i = 0; i < ana.layers.size(); ++i) {
    if (cache != nullptr) cache->inputs.push_back(cur);
    Tensor pre = ConvForward(cur, ana.layers[i]);
    if (i + 1 < ana.layers.size()) {
      IGDNSpec act = MaterializeIgdn(ana.act_beta_raw[i], ana.act_gamma_raw[i]);
      cur = IgdnForward(pre, act);
      if (cache != nullptr) {
        cache->pre.push_back(std::move(pre));
        cache->acts.push_back(std::move(act));
      }
    } else {
      cur = std::move(pre);
      if (cache != nullptr) cache->pre.push_back(cur);
    }
  }
  return cur;
}

inline Tensor AnalyzeBackward(const CodecModel& model,
                              const AnalysisCache& cache,
                              const Tensor& upstream, GradMap* pg) {
  if (!model.analysis.has_value())
    throw Error("AnalyzeBackward: no CNN analysis transform");
  const AnalysisTransform& ana = *model.analysis;
  Tensor up = upstream;
  for (size_t ii = ana.layers.size(); ii-- > 0;) {
    const std::string p = "ana" + std::to_string(ii);
    if (ii + 1 < ana.layers.size()) {
      IGDNGrads gi = IgdnVjp(cache.pre[ii], cache.acts[ii], up);
      if (pg != nullptr) {
        const size_t C = ana.act_beta_raw[ii].dim(0);
        Tensor gb({C});
        for (size_t c = 0; c < C; ++c)
          gb(c) = gi.beta(c) * 2.0 * ana.act_beta_raw[ii](c);
        Tensor gg({C, C});
        for (size_t i = 0; i < gg.size(); ++i)
          gg[i] = gi.gamma[i] * 2.0 * ana.act_gamma_raw[ii][i];
        AccumGrad(pg, p + ".act_beta_raw", gb);
        AccumGrad(pg, p + ".act_gamma_raw", gg);
      }
      up = std::move(gi.input);
    }
    ConvGrads g = ConvVjp(cache.inputs[ii], ana.layers[ii], up);
    AccumGrad(pg, p + ".w", g.weights);
    AccumGrad(pg, p + ".b", g.bias);
    up = std::move(g.input);
  }
  return up;
}

// ---------------------------------------------------------------------------
// Entropy model plumbing

inline void RoundTensor(const Tensor& z, Tensor* zhat) {
  *zhat = Tensor(z.shape());
  for (size_t i = 0; i < z.size(); ++i)
    (*zhat)[i] = static_cast<double>(std::llround(z[i]));
}

// Broadcast the factorized per-channel prior over a latent grid.
inline ElementDists FactorizedDists(const CodecModel& model,
                                    const std::vector<size_t>& latent_shape) {
  const size_t C = model.hp.C;
  if (latent_shape.size() != 3 || latent_shape[2] != C)
    throw ShapeError("FactorizedDists: latent shape mismatch");
  ElementDists d;
  d.mu = Tensor(latent_shape);
  d.sigma = Tensor(latent_shape);
  const size_t np = latent_shape[0] * latent_shape[1];
  for (size_t p = 0; p < np; ++p)
    for (size_t c = 0; c < C; ++c) {
      d.mu[p * C + c] = model.prior.mu(c);
      d.sigma[p * C + c] = model.prior.sigma(c);
    }
  return d;
}

struct HyperCache {
  Tensor zin;     // hyper-analysis input
  Tensor h;       // continuous hyper-latents
  Tensor hs_in;   // hyper-synthesis input (quantized or noisy h)
  Tensor raw;     // hyper-synthesis output (h, w, 2C)
};

// hhat = round(f_h(zhat)); (mu, sigma) = split(g_h(hhat)), sigma floored.
inline ElementDists HyperRoundtrip(const CodecModel& model, const Tensor& zhat,
                                   Tensor* hhat_out = nullptr) {
  if (!model.hyper) throw Error("HyperRoundtrip: model has no hyperprior");
  const HyperpriorModel& hy = *model.hyper;
  Tensor h = ConvForward(zhat, hy.hyper_analysis);
  Tensor hhat;
  RoundTensor(h, &hhat);
  Tensor raw = ConvTransposeForward(hhat, hy.hyper_synthesis);
  const size_t C = model.hp.C;
  if (raw.dim(0) != zhat.dim(0) || raw.dim(1) != zhat.dim(1) ||
      raw.dim(2) != 2 * C)
    throw ShapeError("HyperRoundtrip: hyper synthesis output mismatch");
  ElementDists d;
  d.mu = Tensor(zhat.shape());
  d.sigma = Tensor(zhat.shape());
  const size_t np = zhat.dim(0) * zhat.dim(1);
  for (size_t p = 0; p < np; ++p)
    for (size_t c = 0; c < C; ++c) {
      d.mu[p * C + c] = raw[p * 2 * C + c];
      d.sigma[p * C + c] = kSigmaFloor + Softplus(raw[p * 2 * C + C + c]);
    }
  if (hhat_out != nullptr) *hhat_out = std::move(hhat);
  return d;
}

// ---------------------------------------------------------------------------
// MAC accounting (integer arithmetic; biases/activations excluded)

struct LayerMacs {
  std::string name;
  uint64_t macs = 0;
};

struct MacReport {
  std::vector<LayerMacs> layers;
  uint64_t total = 0;
  double per_pixel = 0.0;
  double kmac_per_pixel = 0.0;
};

namespace detail {
inline void FinishMacReport(MacReport* r, uint64_t pixels) {
  r->total = 0;
  for (const auto& l : r->layers) r->total += l.macs;
  r->per_pixel = static_cast<double>(r->total) / static_cast<double>(pixels);
  r->kmac_per_pixel = r->per_pixel / 1000.0;
}
}  // namespace detail

// Transposed conv MACs: C_in * h * w * k^2 * C_out (Eq.-2 form with s^2
// generalized to k^2 for overlapping kernels).
inline uint64_t TransposedConvMacs(uint64_t cin, uint64_t h, uint64_t w,
                                   uint64_t k, uint64_t cout) {
  return cin * h * w * k * k * cout;
}

inline MacReport MacCountJpegLike(uint64_t C, uint64_t k, uint64_t s,
                                  uint64_t H, uint64_t W) {
  MacReport r;
  r.layers.push_back({"syn", TransposedConvMacs(C, H / s, W / s, k, 3)});
  detail::FinishMacReport(&r, H * W);
  return r;
}

inline MacReport MacCountTwoLayer(uint64_t C, uint64_t k1, uint64_t s1,
                                  uint64_t N, uint64_t k2, uint64_t s2,
                                  uint64_t H, uint64_t W) {
  const uint64_t st = s1 * s2;
  MacReport r;
  r.layers.push_back({"syn1", TransposedConvMacs(C, H / st, W / st, k1, N)});
  r.layers.push_back({"synres", TransposedConvMacs(C, H / st, W / st, k1, N)});
  r.layers.push_back(
      {"syn2", TransposedConvMacs(N, H / s2, W / s2, k2, 3)});
  detail::FinishMacReport(&r, H * W);
  return r;
}

// Appendix-style one-layer JPEG-like hyper synthesis (stride 4, 6x6).
inline MacReport MacCountHyperSynthesis(uint64_t Ch, uint64_t C, uint64_t s,
                                        uint64_t H, uint64_t W) {
  MacReport r;
  const uint64_t hs = s * 4;  // hyper-latent grid stride
  r.layers.push_back(
      {"hyper_syn", TransposedConvMacs(Ch, H / hs, W / hs, 6, 2 * C)});
  detail::FinishMacReport(&r, H * W);
  return r;
}

// ---------------------------------------------------------------------------
// Model construction

struct ModelConfig {
  ArchTag arch = ArchTag::kJpegLike;
  HyperParams hp;
  bool with_analysis = true;
  size_t analysis_filters = 64;  // F
  size_t analysis_kernel = 5;
  bool with_hyper = false;
  size_t hyper_channels = 64;  // Ch
  bool dct_init = false;       // seed jpeg-like kernels from the DCT basis
  double prior_sigma_init = 3.0;
  uint64_t seed = 1;
};

namespace detail {

inline void RandomConvInit(ConvSpec* spec, Rng& rng) {
  const double scale =
      1.0 / std::sqrt(static_cast<double>(spec->kernel * spec->kernel *
                                          spec->in_channels));
  for (size_t i = 0; i < spec->weights.size(); ++i)
    spec->weights[i] = NormalSample(rng) * scale;
}

}  // namespace detail

inline CodecModel BuildModel(const ModelConfig& cfg) {
  CodecModel m;
  m.arch = cfg.arch;
  m.hp = cfg.hp;
  Rng rng(cfg.seed);
  const size_t C = cfg.hp.C;
  if (cfg.arch == ArchTag::kJpegLike) {
    JpegLikeSynthesis syn;
    syn.layer = ConvSpec(C, 3, cfg.hp.k, cfg.hp.s, true);
    if (cfg.dct_init)
      syn.layer.weights = DctSynthesisKernels(cfg.hp.s, C, cfg.hp.k);
    else
      detail::RandomConvInit(&syn.layer, rng);
    m.jpeg = std::move(syn);
  } else {
    if (static_cast<size_t>(cfg.hp.s1) * cfg.hp.s2 != cfg.hp.s)
      throw UsageError("BuildModel: s1*s2 must equal total stride");
    TwoLayerSynthesis tl;
    tl.conv1 = ConvSpec(C, cfg.hp.N, cfg.hp.k1, cfg.hp.s1, true);
    tl.conv_res = ConvSpec(C, cfg.hp.N, cfg.hp.k1, cfg.hp.s1, true);
    tl.conv2 = ConvSpec(cfg.hp.N, 3, cfg.hp.k2, cfg.hp.s2, true);
    detail::RandomConvInit(&tl.conv1, rng);
    detail::RandomConvInit(&tl.conv_res, rng);
    detail::RandomConvInit(&tl.conv2, rng);
    tl.beta_raw = Tensor::Full({cfg.hp.N}, 1.0);
    tl.gamma_raw = Tensor::Full({static_cast<size_t>(cfg.hp.N), cfg.hp.N}, 0.05);
    m.two_layer = std::move(tl);
  }
  if (cfg.with_analysis) {
    AnalysisTransform ana;
    const size_t F = cfg.analysis_filters, ka = cfg.analysis_kernel;
    size_t chain[5] = {3, F, F, F, C};
    for (int i = 0; i < 4; ++i) {
      ConvSpec l(chain[i], chain[i + 1], ka, 2, false);
      detail::RandomConvInit(&l, rng);
      ana.layers.push_back(std::move(l));
      if (i < 3) {
        ana.act_beta_raw.push_back(Tensor::Full({chain[i + 1]}, 1.0));
        ana.act_gamma_raw.push_back(
            Tensor::Full({chain[i + 1], chain[i + 1]}, 0.05));
      }
    }
    m.analysis = std::move(ana);
  }
  m.prior.mu = Tensor({C});
  m.prior.sigma_raw = Tensor::Full(
      {C}, SoftplusInverse(cfg.prior_sigma_init - kSigmaFloor));
  if (cfg.with_hyper) {
    HyperpriorModel hy;
    hy.hyper_analysis = ConvSpec(C, cfg.hyper_channels, 6, 4, false);
    hy.hyper_synthesis = ConvSpec(cfg.hyper_channels, 2 * C, 6, 4, true);
    detail::RandomConvInit(&hy.hyper_analysis, rng);
    detail::RandomConvInit(&hy.hyper_synthesis, rng);
    hy.hyper_prior.mu = Tensor({cfg.hyper_channels});
    hy.hyper_prior.sigma_raw = Tensor::Full(
        {cfg.hyper_channels}, SoftplusInverse(cfg.prior_sigma_init - kSigmaFloor));
    m.hyper = std::move(hy);
  }
  return m;
}

// Frozen orthonormal per-color block-DCT codec (analysis is the adjoint).
inline CodecModel BuildDctBaseline(size_t block = 16,
                                   double prior_sigma_init = 3.0) {
  ModelConfig cfg;
  cfg.arch = ArchTag::kJpegLike;
  cfg.hp.C = static_cast<uint16_t>(3 * block * block);
  cfg.hp.s = static_cast<uint16_t>(block);
  cfg.hp.k = static_cast<uint16_t>(block);
  cfg.with_analysis = false;
  cfg.dct_init = true;
  cfg.prior_sigma_init = prior_sigma_init;
  return BuildModel(cfg);
}

}  // namespace shallow

#endif  // SHALLOW_MODELS_HPP_
