// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_TRAINER_HPP_
#define SHALLOW_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/entropy.hpp"
#include "shallow/image.hpp"
#include "shallow/models.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

struct TrainConfig {
  double lambda = 0.01;
  size_t batch_size = 8;
  size_t patch_size = 64;
  int max_steps = 2000;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;   // switch at 90% of max_steps
  uint64_t seed = 1;
  int log_every = 10;
};

inline double LearningRate(const TrainConfig& cfg, int step) {
  return step < cfg.max_steps * 9 / 10 ? cfg.lr_initial : cfg.lr_final;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // (m, v)
  int64_t step = 0;
};

// Standard Adam with bias correction; parameters without a gradient entry
// are left untouched (their moments do not decay either).
inline void AdamStep(CodecModel* model, const GradMap& grads, AdamState* state,
                     double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++state->step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state->step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state->step));
  ForEachParam(*model, [&](const std::string& name, Tensor& param) {
    auto git = grads.find(name);
    if (git == grads.end()) return;
    const Tensor& g = git->second;
    param.check_same_shape(g, "AdamStep");
    auto mit = state->moments.find(name);
    if (mit == state->moments.end())
      mit = state->moments
                .emplace(name, std::make_pair(Tensor(param.shape()),
                                              Tensor(param.shape())))
                .first;
    Tensor& m = mit->second.first;
    Tensor& v = mit->second.second;
    for (size_t i = 0; i < param.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  });
}

// ---------------------------------------------------------------------------
// Relaxed R-D loss with full parameter gradients

struct LossResult {
  double loss = 0.0;  // lambda * 255^2 * mse + bpp, batch mean
  double bpp = 0.0;
  double mse = 0.0;
  GradMap grads;
};

namespace detail {

// Accumulates factorized-prior gradients: sigma = floor + softplus(raw).
inline void PriorGrads(const FactorizedPrior& prior, const NoisyRateGrads& rg,
                       size_t channels, const std::string& prefix, double scale,
                       GradMap* g) {
  Tensor gmu({channels}), graw({channels});
  const size_t np = rg.mu.size() / channels;
  for (size_t p = 0; p < np; ++p)
    for (size_t c = 0; c < channels; ++c) {
      gmu(c) += rg.mu[p * channels + c] * scale;
      graw(c) += rg.sigma[p * channels + c] *
                 SoftplusPrime(prior.sigma_raw(c)) * scale;
    }
  AccumGrad(g, prefix + ".mu", gmu);
  AccumGrad(g, prefix + ".sigma_raw", graw);
}

}  // namespace detail

// One relaxed forward/backward pass on a single real-convention patch:
//   z = f(x); v = z + u;  [optional hyper: h = f_h(v), vh = h + u_h]
//   loss = lambda * 255^2 * MSE(x, g(v)) + (bits(v) + bits(vh)) / pixels
// Fresh noise comes from the caller's generator. Gradients are accumulated
// into *grads when non-null (pass nullptr for evaluation only).
inline LossResult PatchLoss(const CodecModel& model, const Tensor& x, double lambda,
                            Rng& rng, GradMap* grads) {
  const double pixels = static_cast<double>(x.dim(0) * x.dim(1));
  const size_t C = model.hp.C;
  LossResult res;

  AnalysisCache acache;
  const bool backprop_analysis = model.analysis.has_value() && grads != nullptr;
  Tensor z = Analyze(model, x, backprop_analysis ? &acache : nullptr);
  Tensor u(z.shape());
  for (size_t i = 0; i < u.size(); ++i) u[i] = UniformNoise(rng);
  Tensor v = z + u;

  // Entropy model: factorized prior or hyperprior side channel.
  ElementDists dists;
  Tensor vh, raw;
  double hyper_bits = 0.0;
  NoisyRateGrads hrg;
  if (model.has_hyper()) {
    const HyperpriorModel& hy = *model.hyper;
    const size_t Ch = hy.hyper_analysis.out_channels;
    Tensor h = ConvForward(v, hy.hyper_analysis);
    Tensor uh(h.shape());
    for (size_t i = 0; i < uh.size(); ++i) uh[i] = UniformNoise(rng);
    vh = h + uh;
    ElementDists hdists;
    hdists.mu = Tensor(vh.shape());
    hdists.sigma = Tensor(vh.shape());
    const size_t np = vh.dim(0) * vh.dim(1);
    for (size_t p = 0; p < np; ++p)
      for (size_t c = 0; c < Ch; ++c) {
        hdists.mu[p * Ch + c] = hy.hyper_prior.mu(c);
        hdists.sigma[p * Ch + c] = hy.hyper_prior.sigma(c);
      }
    Tensor zeros(vh.shape());
    hyper_bits = NoisyRate(vh, zeros, hdists, grads ? &hrg : nullptr);
    if (grads != nullptr)
      detail::PriorGrads(hy.hyper_prior, hrg, Ch, "hyper_prior", 1.0 / pixels,
                         grads);
    raw = ConvTransposeForward(vh, hy.hyper_synthesis);
    dists.mu = Tensor(v.shape());
    dists.sigma = Tensor(v.shape());
    const size_t nz = v.dim(0) * v.dim(1);
    for (size_t p = 0; p < nz; ++p)
      for (size_t c = 0; c < C; ++c) {
        dists.mu[p * C + c] = raw[p * 2 * C + c];
        dists.sigma[p * C + c] =
            kSigmaFloor + Softplus(raw[p * 2 * C + C + c]);
      }
  } else {
    dists = FactorizedDists(model, v.shape());
  }

  SynthCache scache;
  Tensor recon = Synthesize(model, v, grads ? &scache : nullptr);
  recon.check_same_shape(x, "PatchLoss reconstruction");
  const double mse = MseBetween(recon, x);
  NoisyRateGrads rg;
  Tensor zeros(v.shape());
  const double bits = NoisyRate(v, zeros, dists, grads ? &rg : nullptr);

  res.mse = mse;
  res.bpp = (bits + hyper_bits) / pixels;
  res.loss = lambda * 65025.0 * mse + res.bpp;
  if (!std::isfinite(res.loss)) throw NumericError("PatchLoss: non-finite loss");
  if (grads == nullptr) return res;

  // Backward. Distortion branch into the synthesis:
  Tensor up = recon;
  up -= x;
  up *= lambda * 65025.0 * 2.0 / static_cast<double>(recon.size());
  Tensor gv = SynthesizeBackward(model, scache, up, grads);
  // rate branch w.r.t. v
  rg.z *= 1.0 / pixels;
  gv += rg.z;
  if (model.has_hyper()) {
    const HyperpriorModel& hy = *model.hyper;
    // (mu, sigma_raw) halves of the hyper synthesis output
    Tensor gup(raw.shape());
    const size_t nz = v.dim(0) * v.dim(1);
    for (size_t p = 0; p < nz; ++p)
      for (size_t c = 0; c < C; ++c) {
        gup[p * 2 * C + c] = rg.mu[p * C + c] / pixels;
        gup[p * 2 * C + C + c] = rg.sigma[p * C + c] / pixels *
                                 SoftplusPrime(raw[p * 2 * C + C + c]);
      }
    ConvGrads ghs = ConvTransposeVjp(vh, hy.hyper_synthesis, gup);
    AccumGrad(grads, "hyper_syn.w", ghs.weights);
    AccumGrad(grads, "hyper_syn.b", ghs.bias);
    Tensor gvh = ghs.input;
    hrg.z *= 1.0 / pixels;
    gvh += hrg.z;
    ConvGrads gha = ConvVjp(v, hy.hyper_analysis, gvh);
    AccumGrad(grads, "hyper_ana.w", gha.weights);
    AccumGrad(grads, "hyper_ana.b", gha.bias);
    gv += gha.input;
  } else {
    detail::PriorGrads(model.prior, rg, C, "prior", 1.0 / pixels, grads);
  }
  if (backprop_analysis) AnalyzeBackward(model, acache, gv, grads);
  return res;
}

// Batch mean of PatchLoss over real-convention patch tensors.
inline LossResult BatchLoss(const CodecModel& model,
                            const std::vector<Tensor>& batch, double lambda,
                            Rng& rng, bool want_grads) {
  if (batch.empty()) throw UsageError("BatchLoss: empty batch");
  LossResult total;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const Tensor& x : batch) {
    GradMap g;
    LossResult r = PatchLoss(model, x, lambda, rng, want_grads ? &g : nullptr);
    total.loss += r.loss * inv;
    total.bpp += r.bpp * inv;
    total.mse += r.mse * inv;
    if (want_grads)
      for (auto& [name, t] : g) {
        t *= inv;
        AccumGrad(&total.grads, name, t);
      }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  double first_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

// Trains *model in place on real-convention images. Dataset order is an
// epoch-shuffled seeded permutation; each sample is a random crop. When
// `trainable` is non-null, gradients for parameters outside the set are
// dropped (frozen kernels, e.g. the block-DCT baseline). The CSV log
// (header: step,loss,bpp,mse) goes to *log when non-null.
inline TrainResult Train(CodecModel* model, const std::vector<Image>& dataset,
                         const TrainConfig& cfg,
                         const std::set<std::string>* trainable = nullptr,
                         std::ostream* log = nullptr) {
  if (dataset.empty()) throw UsageError("Train: empty dataset");
  for (const Image& img : dataset) {
    if (!img.real_convention) throw UsageError("Train: expects real convention");
    if (img.height < cfg.patch_size || img.width < cfg.patch_size)
      throw UsageError("Train: image smaller than patch size");
  }
  Rng rng(cfg.seed);
  AdamState state;
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // force shuffle at step 0
  TrainResult result;
  if (log != nullptr) *log << "step,loss,bpp,mse\n";
  for (int step = 0; step < cfg.max_steps; ++step) {
    std::vector<Tensor> batch;
    batch.reserve(cfg.batch_size);
    for (size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[rng() % i]);
        cursor = 0;
      }
      const Image& img = dataset[order[cursor++]];
      const size_t ymax = img.height - cfg.patch_size;
      const size_t xmax = img.width - cfg.patch_size;
      const size_t y = ymax == 0 ? 0 : rng() % (ymax + 1);
      const size_t x = xmax == 0 ? 0 : rng() % (xmax + 1);
      Tensor patch({cfg.patch_size, cfg.patch_size, 3});
      for (size_t yy = 0; yy < cfg.patch_size; ++yy)
        for (size_t xx = 0; xx < cfg.patch_size; ++xx)
          for (size_t c = 0; c < 3; ++c)
            patch(yy, xx, c) = img.at(y + yy, x + xx, c);
      batch.push_back(std::move(patch));
    }
    LossResult r;
    try {
      r = BatchLoss(*model, batch, cfg.lambda, rng, true);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " +
                         std::to_string(step));
    }
    if (trainable != nullptr) {
      for (auto it = r.grads.begin(); it != r.grads.end();) {
        if (trainable->count(it->first) == 0) it = r.grads.erase(it);
        else ++it;
      }
    }
    AdamStep(model, r.grads, &state, LearningRate(cfg, step));
    if (step == 0) result.first_loss = r.loss;
    result.final_loss = r.loss;
    if (log != nullptr && (step % cfg.log_every == 0 || step + 1 == cfg.max_steps))
      *log << step << "," << r.loss << "," << r.bpp << "," << r.mse << "\n";
  }
  result.steps = cfg.max_steps;
  return result;
}

}  // namespace shallow

#endif  // SHALLOW_TRAINER_HPP_
