// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_ENCODER_HPP_
#define SHALLOW_ENCODER_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shallow/bitstream.hpp"
#include "shallow/common.hpp"
#include "shallow/entropy.hpp"
#include "shallow/image.hpp"
#include "shallow/models.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

enum class EncodeMode { kOneshot, kIterative, kSga };

struct EncodeConfig {
  EncodeMode mode = EncodeMode::kOneshot;
  double lambda = 0.01;
  int steps = 3000;
  double lr = 5e-3;
  // temperature schedule tau(t) = tau_max * exp(-decay * max(0, t - t0))
  double t0 = 200.0;
  double decay = 5e-4;
  double tau_max = 0.5;
  uint64_t seed = 1;
};

inline double TauSchedule(const EncodeConfig& cfg, double t) {
  const double dt = t - cfg.t0;
  return cfg.tau_max * std::exp(-cfg.decay * (dt > 0.0 ? dt : 0.0));
}

struct LatentGrid {
  Tensor z;     // continuous
  Tensor zhat;  // round(z), half away from zero
};

inline std::vector<int32_t> ToSymbols(const Tensor& zhat) {
  std::vector<int32_t> s(zhat.size());
  for (size_t i = 0; i < zhat.size(); ++i)
    s[i] = static_cast<int32_t>(std::llround(zhat[i]));
  return s;
}

struct RdReport {
  double cost_pp = 0.0;  // lambda * 255^2 * mse + bpp
  double mse = 0.0;      // mean squared error, [-0.5, 0.5] convention
  double rate_bits = 0.0;
  double bpp = 0.0;
};

// Reporting-side R-D cost of a quantized grid: distortion from the actual
// synthesis, rate from the same quantized (mu, sigma) the coder uses.
inline RdReport RdCost(const CodecModel& model, const Tensor& x_real,
                       const Tensor& zhat, const ElementDists& dists,
                       double lambda) {
  RdReport r;
  Tensor recon = Synthesize(model, zhat);
  r.mse = MseBetween(recon, x_real);
  const ElementDists q = QuantizeDists(dists);
  r.rate_bits = RateBits(ToSymbols(zhat), q);
  const double pixels = static_cast<double>(x_real.dim(0) * x_real.dim(1));
  r.bpp = r.rate_bits / pixels;
  r.cost_pp = lambda * 65025.0 * r.mse + r.bpp;
  return r;
}

// zhat = round(f(x)), half away from zero.
inline LatentGrid EncodeOneshot(const CodecModel& model, const Tensor& x_real) {
  LatentGrid g;
  g.z = Analyze(model, x_real);
  RoundTensor(g.z, &g.zhat);
  return g;
}

// Iterative / SGA refinement of a latent grid against the relaxed R-D cost
// cost_pp = lambda * 255^2 * MSE(x, g(v)) + bits(v) / pixels, where v is
// z + u (iterative, u fresh uniform noise per step) or the Gumbel-softmax
// relaxation z-tilde (SGA). Model parameters are never modified (checked by
// hash). The entropy model (mu, sigma) is held fixed by the caller.
inline LatentGrid OptimizeLatents(const CodecModel& model, const Tensor& x_real,
                                  const Tensor& z0, const ElementDists& dists,
                                  const EncodeConfig& cfg) {
  if (cfg.mode == EncodeMode::kOneshot || cfg.steps <= 0) {
    LatentGrid g;
    g.z = z0;
    RoundTensor(g.z, &g.zhat);
    return g;
  }
  const uint64_t params_before = ModelParamHash(model);
  const double pixels = static_cast<double>(x_real.dim(0) * x_real.dim(1));
  const size_t n = z0.size();
  Tensor z = z0;
  Tensor m1(z.shape()), m2(z.shape());  // Adam moments
  Rng rng(cfg.seed);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  constexpr double kAtanhClamp = 1e-6;
  double initial_cost = 0.0;
  int bad_streak = 0;

  Tensor u(z.shape());       // uniform noise (iterative)
  Tensor v(z.shape());       // relaxed latents fed to the cost
  Tensor dv_dz(z.shape());   // elementwise chain factor
  for (int t = 0; t < cfg.steps; ++t) {
    if (cfg.mode == EncodeMode::kIterative) {
      for (size_t i = 0; i < n; ++i) {
        u[i] = UniformNoise(rng);
        v[i] = z[i] + u[i];
        dv_dz[i] = 1.0;
      }
    } else {  // SGA: noise first would go here; SGA consumes Gumbel only
      const double tau = TauSchedule(cfg, t);
      for (size_t i = 0; i < n; ++i) {
        const double f = std::floor(z[i]);
        const double c = std::ceil(z[i]);
        const double g_f = GumbelSample(rng);
        const double g_c = GumbelSample(rng);
        double rf = z[i] - f, rc = c - z[i];
        const bool clamp_f = rf < kAtanhClamp || rf > 1.0 - kAtanhClamp;
        const bool clamp_c = rc < kAtanhClamp || rc > 1.0 - kAtanhClamp;
        if (rf < kAtanhClamp) rf = kAtanhClamp;
        if (rf > 1.0 - kAtanhClamp) rf = 1.0 - kAtanhClamp;
        if (rc < kAtanhClamp) rc = kAtanhClamp;
        if (rc > 1.0 - kAtanhClamp) rc = 1.0 - kAtanhClamp;
        const double logit_f = -std::atanh(rf) / tau;
        const double logit_c = -std::atanh(rc) / tau;
        // Gumbel-softmax over the two candidates at temperature tau
        const double af = (logit_f + g_f) / tau;
        const double ac = (logit_c + g_c) / tau;
        const double mx = af > ac ? af : ac;
        const double ef = std::exp(af - mx), ec = std::exp(ac - mx);
        const double yc = ec / (ef + ec);
        const double yf = 1.0 - yc;
        v[i] = f + yc * (c - f);
        // d(logit)/dz through atanh (zero where clamped), then softmax
        const double daf = clamp_f ? 0.0 : -1.0 / (tau * (1.0 - rf * rf)) / tau;
        const double dac = clamp_c ? 0.0 : 1.0 / (tau * (1.0 - rc * rc)) / tau;
        dv_dz[i] = (c - f) * yc * yf * (dac - daf);
      }
    }

    SynthCache scache;
    Tensor recon = Synthesize(model, v, &scache);
    const double mse = MseBetween(recon, x_real);
    NoisyRateGrads rg;
    Tensor zero_noise(z.shape());
    const double bits = cfg.mode == EncodeMode::kIterative
                            ? NoisyRate(z, u, dists, &rg)
                            : NoisyRate(v, zero_noise, dists, &rg);
    const double cost = cfg.lambda * 65025.0 * mse + bits / pixels;
    if (!std::isfinite(cost))
      throw NumericError("OptimizeLatents: non-finite cost at step " +
                         std::to_string(t));
    if (t == 0) initial_cost = cost;
    bad_streak = cost > 10.0 * initial_cost ? bad_streak + 1 : 0;
    if (bad_streak >= 50)
      throw NumericError("OptimizeLatents: diverged (cost > 10x initial for "
                         "50 consecutive steps)");

    // upstream of MSE: d(cost)/d(recon) = lambda*255^2 * 2*(recon - x)/size
    Tensor up = recon;
    up -= x_real;
    up *= cfg.lambda * 65025.0 * 2.0 / static_cast<double>(recon.size());
    Tensor gv = SynthesizeBackward(model, scache, up, nullptr);
    const double inv_px = 1.0 / pixels;
    for (size_t i = 0; i < n; ++i) {
      // iterative: rate grad is w.r.t. z directly (v = z + u);
      // SGA: rate was evaluated at v, chain through dv/dz like the MSE term
      const double gz = cfg.mode == EncodeMode::kIterative
                            ? gv[i] * dv_dz[i] + rg.z[i] * inv_px
                            : (gv[i] + rg.z[i] * inv_px) * dv_dz[i];
      m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * gz;
      m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * gz * gz;
      const double mhat = m1[i] / (1.0 - std::pow(kBeta1, t + 1));
      const double vhat = m2[i] / (1.0 - std::pow(kBeta2, t + 1));
      z[i] -= cfg.lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
  if (ModelParamHash(model) != params_before)
    throw IntegrityError("OptimizeLatents: model parameters changed");
  LatentGrid g;
  g.z = std::move(z);
  RoundTensor(g.z, &g.zhat);
  return g;
}

// ---------------------------------------------------------------------------
// End-to-end pipeline

struct TransmitStats {
  double bpp = 0.0;      // actual payload bits / (true H * W)
  double psnr = 0.0;     // of the decoded image vs the input
  double cost_pp = 0.0;  // lambda * 255^2 * decoded MSE + bpp
  double mse = 0.0;
  double rate_bits = 0.0;  // ideal bits under the coding distributions
};

struct TransmitResult {
  Bitstream bitstream;
  std::vector<uint8_t> bytes;
  TransmitStats stats;
  LatentGrid grid;
};

// Images are replicate-padded to a multiple of the total stride (times the
// extra hyper downsampling when a hyperprior is present); the header keeps
// the true dimensions and the decoder crops.
inline size_t PadMultiple(const CodecModel& model) {
  return static_cast<size_t>(model.hp.s) * (model.has_hyper() ? 4 : 1);
}

inline Image DecodeBitstream(const Bitstream& b, const CodecModel& model,
                             uint64_t model_file_hash) {
  if (b.header.model_hash != model_file_hash)
    throw IntegrityError("decode: bitstream was encoded with a different "
                         "checkpoint (model hash mismatch)");
  if (b.header.arch != static_cast<uint8_t>(model.arch) ||
      b.header.channels != model.hp.C ||
      b.header.hyper != (model.has_hyper() ? 1 : 0))
    throw IntegrityError("decode: header disagrees with checkpoint");
  const size_t mult = PadMultiple(model);
  const size_t H = b.header.height, W = b.header.width;
  if (H == 0 || W == 0) throw IntegrityError("decode: empty image");
  const size_t Hp = (H + mult - 1) / mult * mult;
  const size_t Wp = (W + mult - 1) / mult * mult;
  const size_t h = Hp / model.hp.s, w = Wp / model.hp.s;
  const std::vector<size_t> zshape = {h, w, model.hp.C};
  CdfCache cache;
  ElementDists dists;
  if (model.has_hyper()) {
    const size_t Ch = model.hyper->hyper_analysis.out_channels;
    const std::vector<size_t> hshape = {h / 4, w / 4, Ch};
    ElementDists hdists;
    hdists.mu = Tensor(hshape);
    hdists.sigma = Tensor(hshape);
    const size_t hp = hshape[0] * hshape[1];
    for (size_t p = 0; p < hp; ++p)
      for (size_t c = 0; c < Ch; ++c) {
        hdists.mu[p * Ch + c] = model.hyper->hyper_prior.mu(c);
        hdists.sigma[p * Ch + c] = model.hyper->hyper_prior.sigma(c);
      }
    std::vector<int32_t> hsym = DecodeLatents(b.payload_hyper, hdists, &cache);
    Tensor hhat(hshape);
    for (size_t i = 0; i < hsym.size(); ++i) hhat[i] = hsym[i];
    Tensor raw = ConvTransposeForward(hhat, model.hyper->hyper_synthesis);
    const size_t C = model.hp.C;
    dists.mu = Tensor(zshape);
    dists.sigma = Tensor(zshape);
    for (size_t p = 0; p < h * w; ++p)
      for (size_t c = 0; c < C; ++c) {
        dists.mu[p * C + c] = raw[p * 2 * C + c];
        dists.sigma[p * C + c] = kSigmaFloor + Softplus(raw[p * 2 * C + C + c]);
      }
  } else {
    dists = FactorizedDists(model, zshape);
  }
  std::vector<int32_t> sym = DecodeLatents(b.payload_main, dists, &cache);
  Tensor zhat(zshape);
  for (size_t i = 0; i < sym.size(); ++i) zhat[i] = sym[i];
  Tensor recon = Synthesize(model, zhat);
  Image full(Hp, Wp, true);
  full.values = std::move(recon);
  return ToInt(Crop(full, H, W));
}

inline TransmitResult Transmit(const Image& input, const CodecModel& model,
                               uint64_t model_file_hash,
                               const EncodeConfig& cfg) {
  const Image real = input.real_convention ? input : ToReal(input);
  Image padded = PadToMultiple(real, PadMultiple(model));
  const Tensor& x = padded.values;

  // Initial latents: amortized analysis when available (the jpeg-like
  // fallback is the synthesis adjoint), zeros otherwise.
  Tensor z0;
  if (model.analysis.has_value() || model.jpeg.has_value()) {
    z0 = Analyze(model, x);
  } else {
    z0 = Tensor({x.dim(0) / model.hp.s, x.dim(1) / model.hp.s,
                 static_cast<size_t>(model.hp.C)});
  }

  // Hyper side information is derived once from the one-shot latents and
  // held fixed through latent optimization (decode order: hyper first).
  Tensor hhat;
  ElementDists dists;
  if (model.has_hyper()) {
    Tensor z0hat;
    RoundTensor(z0, &z0hat);
    dists = HyperRoundtrip(model, z0hat, &hhat);
  } else {
    dists = FactorizedDists(
        model, {z0.dim(0), z0.dim(1), static_cast<size_t>(model.hp.C)});
  }

  LatentGrid grid = OptimizeLatents(model, x, z0, dists, cfg);

  TransmitResult res;
  res.bitstream.header.height = static_cast<uint32_t>(input.height);
  res.bitstream.header.width = static_cast<uint32_t>(input.width);
  res.bitstream.header.arch = static_cast<uint8_t>(model.arch);
  res.bitstream.header.hyper = model.has_hyper() ? 1 : 0;
  res.bitstream.header.channels = model.hp.C;
  res.bitstream.header.model_hash = model_file_hash;

  CdfCache cache;
  double ideal_bits = 0.0;
  if (model.has_hyper()) {
    const size_t Ch = model.hyper->hyper_analysis.out_channels;
    ElementDists hdists;
    hdists.mu = Tensor(hhat.shape());
    hdists.sigma = Tensor(hhat.shape());
    const size_t hp = hhat.dim(0) * hhat.dim(1);
    for (size_t p = 0; p < hp; ++p)
      for (size_t c = 0; c < Ch; ++c) {
        hdists.mu[p * Ch + c] = model.hyper->hyper_prior.mu(c);
        hdists.sigma[p * Ch + c] = model.hyper->hyper_prior.sigma(c);
      }
    std::vector<int32_t> hsym(hhat.size());
    for (size_t i = 0; i < hhat.size(); ++i)
      hsym[i] = static_cast<int32_t>(std::llround(hhat[i]));
    res.bitstream.payload_hyper = EncodeLatents(hsym, hdists, &cache);
    ideal_bits += RateBits(hsym, QuantizeDists(hdists));
  }
  std::vector<int32_t> sym = ToSymbols(grid.zhat);
  res.bitstream.payload_main = EncodeLatents(sym, dists, &cache);
  ideal_bits += RateBits(sym, QuantizeDists(dists));
  res.bytes = PackBitstream(res.bitstream);

  Image decoded = DecodeBitstream(res.bitstream, model, model_file_hash);
  const double pixels =
      static_cast<double>(input.height) * static_cast<double>(input.width);
  res.stats.bpp =
      8.0 * static_cast<double>(res.bitstream.payload_hyper.size() +
                                res.bitstream.payload_main.size()) /
      pixels;
  const Image input_int = input.real_convention ? ToInt(input) : input;
  res.stats.psnr = Psnr(input_int, decoded);
  res.stats.mse = MseBetween(ToReal(decoded).values, ToReal(input_int).values);
  res.stats.rate_bits = ideal_bits;
  res.stats.cost_pp = cfg.lambda * 65025.0 * res.stats.mse + res.stats.bpp;
  res.grid = std::move(grid);
  return res;
}

}  // namespace shallow

#endif  // SHALLOW_ENCODER_HPP_
