// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_LAYERS_HPP_
#define SHALLOW_LAYERS_HPP_

#include <cmath>
#include <cstddef>

#include "shallow/common.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

// A single (transposed) convolution layer. Weights are (k, k, C_in, C_out),
// bias is (C_out). Transposed layers place each k x k weighted block at
// output offset (i*s, j*s) and sum overlaps; output is cropped to
// (h*s, w*s). Strided layers use symmetric (mirror) input extension so the
// output is exactly (h/s, w/s).
struct ConvSpec {
  size_t in_channels = 0;
  size_t out_channels = 0;
  size_t kernel = 0;
  size_t stride = 1;
  bool transposed = false;
  Tensor weights;  // (k, k, C_in, C_out)
  Tensor bias;     // (C_out)

  ConvSpec() = default;
  ConvSpec(size_t cin, size_t cout, size_t k, size_t s, bool tr)
      : in_channels(cin), out_channels(cout), kernel(k), stride(s),
        transposed(tr), weights(Tensor({k, k, cin, cout})),
        bias(Tensor({cout})) {}
};

struct ConvGrads {
  Tensor input;    // same shape as x
  Tensor weights;  // same shape as spec.weights
  Tensor bias;     // (C_out)
};

inline Tensor ConvTransposeForward(const Tensor& x, const ConvSpec& spec) {
  if (!spec.transposed) throw Error("ConvTransposeForward: spec not transposed");
  if (x.rank() != 3 || x.dim(2) != spec.in_channels)
    throw ShapeError("ConvTransposeForward: channel mismatch");
  const size_t h = x.dim(0), w = x.dim(1), cin = spec.in_channels;
  const size_t cout = spec.out_channels, k = spec.kernel, s = spec.stride;
  const size_t H = h * s, W = w * s;
  Tensor y({H, W, cout});
  for (size_t oy = 0; oy < H; ++oy)
    for (size_t ox = 0; ox < W; ++ox)
      for (size_t co = 0; co < cout; ++co) y(oy, ox, co) = spec.bias(co);
  for (size_t i = 0; i < h; ++i) {
    for (size_t j = 0; j < w; ++j) {
      const double* xv = &x(i, j, 0);
      for (size_t a = 0; a < k; ++a) {
        const size_t oy = i * s + a;
        if (oy >= H) break;
        for (size_t b = 0; b < k; ++b) {
          const size_t ox = j * s + b;
          if (ox >= W) break;
          double* yv = &y(oy, ox, 0);
          const double* wv = &spec.weights(a, b, 0, 0);
          for (size_t ci = 0; ci < cin; ++ci) {
            const double xc = xv[ci];
            const double* wrow = wv + ci * cout;
            for (size_t co = 0; co < cout; ++co) yv[co] += xc * wrow[co];
          }
        }
      }
    }
  }
  return y;
}

inline ConvGrads ConvTransposeVjp(const Tensor& x, const ConvSpec& spec,
                                  const Tensor& upstream) {
  const size_t h = x.dim(0), w = x.dim(1), cin = spec.in_channels;
  const size_t cout = spec.out_channels, k = spec.kernel, s = spec.stride;
  const size_t H = h * s, W = w * s;
  if (upstream.rank() != 3 || upstream.dim(0) != H || upstream.dim(1) != W ||
      upstream.dim(2) != cout)
    throw ShapeError("ConvTransposeVjp: upstream shape mismatch");
  ConvGrads g;
  g.input = Tensor(x.shape());
  g.weights = Tensor(spec.weights.shape());
  g.bias = Tensor({cout});
  for (size_t i = 0; i < upstream.size(); ++i)
    g.bias(i % cout) += upstream[i];
  for (size_t i = 0; i < h; ++i) {
    for (size_t j = 0; j < w; ++j) {
      const double* xv = &x(i, j, 0);
      double* gx = &g.input(i, j, 0);
      for (size_t a = 0; a < k; ++a) {
        const size_t oy = i * s + a;
        if (oy >= H) break;
        for (size_t b = 0; b < k; ++b) {
          const size_t ox = j * s + b;
          if (ox >= W) break;
          const double* uv = &upstream(oy, ox, 0);
          const double* wv = &spec.weights(a, b, 0, 0);
          double* gw = &g.weights(a, b, 0, 0);
          for (size_t ci = 0; ci < cin; ++ci) {
            const double xc = xv[ci];
            const double* wrow = wv + ci * cout;
            double* gwrow = gw + ci * cout;
            double acc = 0.0;
            for (size_t co = 0; co < cout; ++co) {
              acc += uv[co] * wrow[co];
              gwrow[co] += xc * uv[co];
            }
            gx[ci] += acc;
          }
        }
      }
    }
  }
  return g;
}

namespace detail {

// Symmetric (mirror) boundary extension index.
inline ptrdiff_t MirrorIndex(ptrdiff_t i, ptrdiff_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace detail

inline Tensor ConvForward(const Tensor& x, const ConvSpec& spec) {
  if (spec.transposed) throw Error("ConvForward: spec is transposed");
  if (x.rank() != 3 || x.dim(2) != spec.in_channels)
    throw ShapeError("ConvForward: channel mismatch");
  const size_t h = x.dim(0), w = x.dim(1), cin = spec.in_channels;
  const size_t cout = spec.out_channels, k = spec.kernel, s = spec.stride;
  if (h % s != 0 || w % s != 0)
    throw ShapeError("ConvForward: dimensions not divisible by stride");
  if (k < s) throw Error("ConvForward: kernel smaller than stride");
  const size_t ho = h / s, wo = w / s;
  const ptrdiff_t pad = static_cast<ptrdiff_t>(k - s) / 2;
  Tensor y({ho, wo, cout});
  for (size_t oy = 0; oy < ho; ++oy) {
    for (size_t ox = 0; ox < wo; ++ox) {
      double* yv = &y(oy, ox, 0);
      for (size_t co = 0; co < cout; ++co) yv[co] = spec.bias(co);
      for (size_t a = 0; a < k; ++a) {
        const ptrdiff_t iy = detail::MirrorIndex(
            static_cast<ptrdiff_t>(oy * s + a) - pad, static_cast<ptrdiff_t>(h));
        for (size_t b = 0; b < k; ++b) {
          const ptrdiff_t ix = detail::MirrorIndex(
              static_cast<ptrdiff_t>(ox * s + b) - pad,
              static_cast<ptrdiff_t>(w));
          const double* xv = &x(static_cast<size_t>(iy), static_cast<size_t>(ix), 0);
          const double* wv = &spec.weights(a, b, 0, 0);
          for (size_t ci = 0; ci < cin; ++ci) {
            const double xc = xv[ci];
            const double* wrow = wv + ci * cout;
            for (size_t co = 0; co < cout; ++co) yv[co] += xc * wrow[co];
          }
        }
      }
    }
  }
  return y;
}

inline ConvGrads ConvVjp(const Tensor& x, const ConvSpec& spec,
                         const Tensor& upstream) {
  const size_t h = x.dim(0), w = x.dim(1), cin = spec.in_channels;
  const size_t cout = spec.out_channels, k = spec.kernel, s = spec.stride;
  const size_t ho = h / s, wo = w / s;
  if (upstream.rank() != 3 || upstream.dim(0) != ho || upstream.dim(1) != wo ||
      upstream.dim(2) != cout)
    throw ShapeError("ConvVjp: upstream shape mismatch");
  const ptrdiff_t pad = static_cast<ptrdiff_t>(k - s) / 2;
  ConvGrads g;
  g.input = Tensor(x.shape());
  g.weights = Tensor(spec.weights.shape());
  g.bias = Tensor({cout});
  for (size_t i = 0; i < upstream.size(); ++i)
    g.bias(i % cout) += upstream[i];
  for (size_t oy = 0; oy < ho; ++oy) {
    for (size_t ox = 0; ox < wo; ++ox) {
      const double* uv = &upstream(oy, ox, 0);
      for (size_t a = 0; a < k; ++a) {
        const ptrdiff_t iy = detail::MirrorIndex(
            static_cast<ptrdiff_t>(oy * s + a) - pad, static_cast<ptrdiff_t>(h));
        for (size_t b = 0; b < k; ++b) {
          const ptrdiff_t ix = detail::MirrorIndex(
              static_cast<ptrdiff_t>(ox * s + b) - pad,
              static_cast<ptrdiff_t>(w));
          const double* xv = &x(static_cast<size_t>(iy), static_cast<size_t>(ix), 0);
          double* gx = &g.input(static_cast<size_t>(iy), static_cast<size_t>(ix), 0);
          const double* wv = &spec.weights(a, b, 0, 0);
          double* gw = &g.weights(a, b, 0, 0);
          for (size_t ci = 0; ci < cin; ++ci) {
            const double xc = xv[ci];
            const double* wrow = wv + ci * cout;
            double* gwrow = gw + ci * cout;
            double acc = 0.0;
            for (size_t co = 0; co < cout; ++co) {
              acc += uv[co] * wrow[co];
              gwrow[co] += xc * uv[co];
            }
            gx[ci] += acc;
          }
        }
      }
    }
  }
  return g;
}

// Simplified inverse GDN (no exponents):
//   y_c = x_c * (beta_c + sum_c' gamma_{c,c'} * |x_c'|)
// beta and gamma hold the effective (already nonnegative) values.
struct IGDNSpec {
  size_t channels = 0;
  Tensor beta;   // (C), each >= kBetaFloor
  Tensor gamma;  // (C, C), each >= 0

  static constexpr double kBetaFloor = 1e-6;

  IGDNSpec() = default;
  explicit IGDNSpec(size_t c)
      : channels(c), beta(Tensor::Full({c}, 1.0)), gamma(Tensor({c, c})) {}
};

struct IGDNGrads {
  Tensor input;
  Tensor beta;
  Tensor gamma;
};

namespace detail {
// sign(0) = 0 subgradient convention
inline double Sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
}  // namespace detail

inline Tensor IgdnForward(const Tensor& x, const IGDNSpec& spec) {
  if (x.rank() != 3 || x.dim(2) != spec.channels)
    throw ShapeError("IgdnForward: channel mismatch");
  const size_t C = spec.channels, np = x.dim(0) * x.dim(1);
  Tensor y(x.shape());
  for (size_t p = 0; p < np; ++p) {
    const double* xv = x.data() + p * C;
    double* yv = y.data() + p * C;
    for (size_t c = 0; c < C; ++c) {
      double scale = spec.beta(c);
      const double* grow = &spec.gamma(c, 0);
      for (size_t c2 = 0; c2 < C; ++c2) scale += grow[c2] * std::fabs(xv[c2]);
      yv[c] = xv[c] * scale;
    }
  }
  return y;
}

inline IGDNGrads IgdnVjp(const Tensor& x, const IGDNSpec& spec,
                         const Tensor& upstream) {
  x.check_same_shape(upstream, "IgdnVjp");
  const size_t C = spec.channels, np = x.dim(0) * x.dim(1);
  IGDNGrads g;
  g.input = Tensor(x.shape());
  g.beta = Tensor({C});
  g.gamma = Tensor({C, C});
  for (size_t p = 0; p < np; ++p) {
    const double* xv = x.data() + p * C;
    const double* uv = upstream.data() + p * C;
    double* gx = g.input.data() + p * C;
    for (size_t c = 0; c < C; ++c) {
      double scale = spec.beta(c);
      const double* grow = &spec.gamma(c, 0);
      for (size_t c2 = 0; c2 < C; ++c2) scale += grow[c2] * std::fabs(xv[c2]);
      const double ux = uv[c] * xv[c];
      g.beta(c) += ux;
      gx[c] += uv[c] * scale;
      double* ggrow = &g.gamma(c, 0);
      for (size_t c2 = 0; c2 < C; ++c2) {
        const double ax2 = std::fabs(xv[c2]);
        ggrow[c2] += ux * ax2;
        gx[c2] += ux * grow[c2] * detail::Sgn(xv[c2]);
      }
    }
  }
  return g;
}

}  // namespace shallow

#endif  // SHALLOW_LAYERS_HPP_
