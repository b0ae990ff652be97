// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_DCT_HPP_
#define SHALLOW_DCT_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

// Orthonormal 2-D DCT-II basis image (u, v) of size n x n.
inline Tensor DctBasisImage(size_t n, size_t u, size_t v) {
  Tensor b({n, n});
  const double au = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  const double av = v == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  for (size_t y = 0; y < n; ++y)
    for (size_t x = 0; x < n; ++x)
      b(y, x) = au * av *
                std::cos(M_PI * (2.0 * y + 1.0) * u / (2.0 * n)) *
                std::cos(M_PI * (2.0 * x + 1.0) * v / (2.0 * n));
  return b;
}

// (u, v) frequency pairs of an n x n block in zigzag (low-to-high) order.
inline std::vector<std::pair<size_t, size_t>> ZigzagOrder(size_t n) {
  std::vector<std::pair<size_t, size_t>> order;
  order.reserve(n * n);
  for (size_t s = 0; s + 1 < 2 * n; ++s) {
    std::vector<std::pair<size_t, size_t>> diag;
    for (size_t u = 0; u <= s && u < n; ++u) {
      size_t v = s - u;
      if (v < n) diag.emplace_back(u, v);
    }
    if (s % 2 == 0) std::reverse(diag.begin(), diag.end());
    order.insert(order.end(), diag.begin(), diag.end());
  }
  return order;
}

// Transposed-conv kernel (k, k, C, 3) whose channel c is the zigzag-ordered
// DCT basis image floor(c/3) placed in color plane c%3, embedded at the
// top-left of the k x k kernel. With C = 3*n*n and k = n this is the full
// orthonormal per-color block DCT.
inline Tensor DctSynthesisKernels(size_t n, size_t channels, size_t k) {
  if (k < n) throw UsageError("DctSynthesisKernels: k < block size");
  if (channels > 3 * n * n)
    throw UsageError("DctSynthesisKernels: more channels than basis images");
  auto order = ZigzagOrder(n);
  Tensor w({k, k, channels, 3});
  for (size_t c = 0; c < channels; ++c) {
    const size_t color = c % 3;
    const auto [u, v] = order[c / 3];
    Tensor b = DctBasisImage(n, u, v);
    for (size_t y = 0; y < n; ++y)
      for (size_t x = 0; x < n; ++x) w(y, x, c, color) = b(y, x);
  }
  return w;
}

}  // namespace shallow

#endif  // SHALLOW_DCT_HPP_
