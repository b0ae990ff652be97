// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_ANALYSIS_HPP_
#define SHALLOW_ANALYSIS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/encoder.hpp"
#include "shallow/image.hpp"
#include "shallow/models.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

// ---------------------------------------------------------------------------
// Manifold geometry of the decoder

// Directional derivative of the synthesis at z along v by central
// differences; the affine (jpeg-like) decoder also has the exact form
// J v = conv_transpose(v) with zero bias.
inline Tensor JvpDirectional(const CodecModel& model, const Tensor& z,
                             const Tensor& v, double eps = 1e-4) {
  Tensor plus = Synthesize(model, z + v * eps);
  Tensor minus = Synthesize(model, z - v * eps);
  Tensor out = plus - minus;
  out *= 1.0 / (2.0 * eps);
  return out;
}

inline Tensor JvpAffine(const CodecModel& model, const Tensor& v) {
  if (model.arch != ArchTag::kJpegLike)
    throw UsageError("JvpAffine: only the jpeg-like decoder is affine");
  ConvSpec nobias = model.jpeg->layer;
  nobias.bias = Tensor({nobias.out_channels});
  return ConvTransposeForward(v, nobias);
}

struct CurveLengthReport {
  double length = 0.0;    // L, Riemann sum of ||J_t v|| over the path
  double straight = 0.0;  // D = ||g(z1) - g(z0)||
  double eta = 1.0;       // L / D, 1 when D == 0 by convention
};

// L = (1/T) sum_i ||J_{t_i} v||, t_i midpoints, v = z1 - z0. The JVP step
// is half a grid cell in curve parameter, which makes the sum exactly the
// length of the polyline through g(gamma(i/T)), so L >= D holds by the
// triangle inequality (up to roundoff) rather than only in the limit.
inline CurveLengthReport CurveLength(const CodecModel& model, const Tensor& z0,
                                     const Tensor& z1, int T = 100) {
  z0.check_same_shape(z1, "CurveLength");
  if (T <= 0) throw UsageError("CurveLength: T must be positive");
  CurveLengthReport r;
  r.straight = Norm(Synthesize(model, z1) - Synthesize(model, z0));
  Tensor v = z1 - z0;
  const double eps = 1.0 / (2.0 * T);
  double L = 0.0;
  for (int i = 0; i < T; ++i) {
    const double t = (i + 0.5) / T;
    Tensor gamma = Lerp(z0, z1, t);
    L += Norm(JvpDirectional(model, gamma, v, eps));
  }
  r.length = L / T;
  r.eta = r.straight == 0.0 ? 1.0 : r.length / r.straight;
  return r;
}

struct TraversalReport {
  int T = 100;
  std::vector<double> mse_recon;  // MSE(gamma_hat(t), xhat(t)), straight recon path
  std::vector<double> mse_gt;     // MSE(gamma_hat(t), x(t)), straight pixel path
  CurveLengthReport lengths;
};

// Interpolate in latent space between two images (continuous latents,
// quantization ignored) and compare the decoded path against the straight
// image-space paths.
inline TraversalReport Traverse(const CodecModel& model, const Image& x0,
                                const Image& x1, int T = 100) {
  if (x0.height != x1.height || x0.width != x1.width)
    throw ShapeError("Traverse: image shape mismatch");
  const Tensor p0t = x0.real_convention ? x0.values : ToReal(x0).values;
  const Tensor p1t = x1.real_convention ? x1.values : ToReal(x1).values;
  Tensor z0 = Analyze(model, p0t);
  Tensor z1 = Analyze(model, p1t);
  Tensor r0 = Synthesize(model, z0);
  Tensor r1 = Synthesize(model, z1);
  TraversalReport rep;
  rep.T = T;
  rep.mse_recon.reserve(T + 1);
  rep.mse_gt.reserve(T + 1);
  for (int i = 0; i <= T; ++i) {
    const double t = static_cast<double>(i) / T;
    Tensor ghat = Synthesize(model, Lerp(z0, z1, t));
    rep.mse_recon.push_back(MseBetween(ghat, Lerp(r0, r1, t)));
    rep.mse_gt.push_back(MseBetween(ghat, Lerp(p0t, p1t, t)));
  }
  rep.lengths = CurveLength(model, z0, z1, T);
  return rep;
}

// g(delta * e_i) - g(0) on a single latent position; an (s, s, 3) patch.
inline Tensor ImpulseResponse(const CodecModel& model, size_t channel,
                              double delta) {
  if (channel >= model.hp.C) throw UsageError("ImpulseResponse: bad channel");
  Tensor z({1, 1, static_cast<size_t>(model.hp.C)});
  Tensor base = Synthesize(model, z);
  z[channel] = delta;
  return Synthesize(model, z) - base;
}

// ---------------------------------------------------------------------------
// Bjontegaard-delta rate

struct RDPoint {
  double bpp = 0.0;
  double psnr = 0.0;
};

struct RDCurve {
  std::string label;
  std::vector<RDPoint> points;  // sorted by bpp
};

namespace detail {

// Least-squares cubic coefficients of y(x); 4x4 normal equations solved by
// Gaussian elimination with partial pivoting.
inline std::array<double, 4> CubicFit(const std::vector<double>& x,
                                      const std::vector<double>& y) {
  double a[4][5] = {};
  for (size_t i = 0; i < x.size(); ++i) {
    double px[7] = {1, 0, 0, 0, 0, 0, 0};
    for (int p = 1; p < 7; ++p) px[p] = px[p - 1] * x[i];
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) a[r][c] += px[r + c];
      a[r][4] += px[r] * y[i];
    }
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    for (int c = 0; c < 5; ++c) std::swap(a[col][c], a[piv][c]);
    if (std::fabs(a[col][col]) < 1e-12)
      throw NumericError("CubicFit: singular normal equations");
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 5; ++c) a[r][c] -= f * a[col][c];
    }
  }
  return {a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2],
          a[3][4] / a[3][3]};
}

inline double CubicIntegral(const std::array<double, 4>& c, double lo,
                            double hi) {
  auto F = [&](double x) {
    return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 +
           c[3] * x * x * x * x / 4;
  };
  return F(hi) - F(lo);
}

}  // namespace detail

// Classical Bjontegaard delta-rate: fit log10(bpp) as a cubic in PSNR per
// curve, integrate the gap over the common PSNR range, convert the average
// log-rate difference to percent. Negative means curve_a saves rate.
inline double BdRate(const RDCurve& curve_a, const RDCurve& anchor) {
  if (curve_a.points.size() < 4 || anchor.points.size() < 4)
    throw UsageError("BdRate: need at least 4 points per curve");
  auto fit = [](const RDCurve& c, double* lo, double* hi) {
    std::vector<double> psnr, logr;
    *lo = 1e300;
    *hi = -1e300;
    for (const RDPoint& p : c.points) {
      if (p.bpp <= 0.0) throw UsageError("BdRate: nonpositive bpp");
      psnr.push_back(p.psnr);
      logr.push_back(std::log10(p.bpp));
      *lo = std::min(*lo, p.psnr);
      *hi = std::max(*hi, p.psnr);
    }
    return detail::CubicFit(psnr, logr);
  };
  double lo_a, hi_a, lo_b, hi_b;
  const auto ca = fit(curve_a, &lo_a, &hi_a);
  const auto cb = fit(anchor, &lo_b, &hi_b);
  const double lo = std::max(lo_a, lo_b), hi = std::min(hi_a, hi_b);
  if (hi <= lo) throw UsageError("BdRate: PSNR ranges do not overlap");
  const double avg = (detail::CubicIntegral(ca, lo, hi) -
                      detail::CubicIntegral(cb, lo, hi)) /
                     (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

// ---------------------------------------------------------------------------
// Encoder-to-encoder inference-gap probe

struct ProbeRow {
  std::string name;
  double cost_oneshot = 0.0;
  double cost_iterative = 0.0;
  double cost_sga = 0.0;
};

struct ProbeReport {
  std::vector<ProbeRow> rows;
  double median_delta_iterative = 0.0;  // oneshot - iterative
  double median_delta_sga = 0.0;        // oneshot - sga
  double frac_sga_improves = 0.0;       // share of images with sga < oneshot
};

namespace detail {
inline double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

// Per-image end-to-end R-D cost under the three encoders sharing one
// checkpoint. The oneshot-minus-sga delta is a lower-bound witness of the
// inference gap; the gap itself (a KL against an intractable channel) has
// no estimator at this scale.
inline ProbeReport InferenceGapProbe(const std::vector<Image>& images,
                                     const CodecModel& model,
                                     uint64_t model_hash,
                                     const EncodeConfig& base_cfg) {
  if (images.empty()) throw UsageError("InferenceGapProbe: no images");
  ProbeReport rep;
  std::vector<double> d_iter, d_sga;
  size_t improves = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    ProbeRow row;
    row.name = "image" + std::to_string(i);
    EncodeConfig cfg = base_cfg;
    cfg.mode = EncodeMode::kOneshot;
    row.cost_oneshot = Transmit(images[i], model, model_hash, cfg).stats.cost_pp;
    cfg.mode = EncodeMode::kIterative;
    row.cost_iterative =
        Transmit(images[i], model, model_hash, cfg).stats.cost_pp;
    cfg.mode = EncodeMode::kSga;
    row.cost_sga = Transmit(images[i], model, model_hash, cfg).stats.cost_pp;
    d_iter.push_back(row.cost_oneshot - row.cost_iterative);
    d_sga.push_back(row.cost_oneshot - row.cost_sga);
    if (row.cost_sga < row.cost_oneshot) ++improves;
    rep.rows.push_back(std::move(row));
  }
  rep.median_delta_iterative = detail::Median(d_iter);
  rep.median_delta_sga = detail::Median(d_sga);
  rep.frac_sga_improves =
      static_cast<double>(improves) / static_cast<double>(images.size());
  return rep;
}

}  // namespace shallow

#endif  // SHALLOW_ANALYSIS_HPP_
