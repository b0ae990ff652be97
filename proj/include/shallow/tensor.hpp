// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_TENSOR_HPP_
#define SHALLOW_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "shallow/common.hpp"

namespace shallow {

// Dense row-major tensor of doubles, last axis fastest. No broadcasting,
// no views; shape mismatches throw instead of coercing.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
    size_t n = 1;
    for (size_t d : shape_) {
      if (d == 0) throw ShapeError("Tensor: zero dimension");
      n *= d;
    }
    data_.assign(n, 0.0);
  }
  static Tensor Full(std::vector<size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_[i]; }
  const std::vector<size_t>& shape() const { return shape_; }
  size_t size() const { return data_.size(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  const double& operator[](size_t i) const { return data_[i]; }

  double& operator()(size_t i) { return data_[i]; }
  const double& operator()(size_t i) const { return data_[i]; }
  double& operator()(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
  const double& operator()(size_t i, size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(size_t i, size_t j, size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const double& operator()(size_t i, size_t j, size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(size_t i, size_t j, size_t k, size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const double& operator()(size_t i, size_t j, size_t k, size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void check_same_shape(const Tensor& o, const char* what) const {
    if (!same_shape(o)) throw ShapeError(std::string("shape mismatch in ") + what);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same_shape(o, "operator+=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same_shape(o, "operator-=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

 private:
  std::vector<size_t> shape_;
  std::vector<double> data_;
};

inline Tensor Lerp(const Tensor& a, const Tensor& b, double t) {
  a.check_same_shape(b, "Lerp");
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - t) * a[i] + t * b[i];
  return out;
}

inline double SquaredNorm(const Tensor& a) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return s;
}

inline double Norm(const Tensor& a) { return std::sqrt(SquaredNorm(a)); }

// Mean of squared elementwise differences.
inline double MseBetween(const Tensor& a, const Tensor& b) {
  a.check_same_shape(b, "MseBetween");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline Tensor RandomTensor(std::vector<size_t> shape, Rng& rng,
                           double scale = 1.0) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = NormalSample(rng) * scale;
  return t;
}

}  // namespace shallow

#endif  // SHALLOW_TENSOR_HPP_
