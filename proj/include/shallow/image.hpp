// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_IMAGE_HPP_
#define SHALLOW_IMAGE_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

// RGB image, channel-last (H, W, 3). Two value conventions:
//   integer: values in [0, 255], as stored in PPM files
//   real:    values in [-0.5, 0.5], v_real = v_int / 255 - 0.5
struct Image {
  size_t height = 0;
  size_t width = 0;
  bool real_convention = false;
  Tensor values;  // (H, W, 3)

  Image() = default;
  Image(size_t h, size_t w, bool real = false)
      : height(h), width(w), real_convention(real),
        values(Tensor({h, w, 3})) {}

  double& at(size_t y, size_t x, size_t c) { return values(y, x, c); }
  double at(size_t y, size_t x, size_t c) const { return values(y, x, c); }
};

inline Image ToReal(const Image& img) {
  if (img.real_convention) return img;
  Image out(img.height, img.width, true);
  for (size_t i = 0; i < img.values.size(); ++i)
    out.values[i] = img.values[i] / 255.0 - 0.5;
  return out;
}

// Clamp-and-round back to the [0,255] integer convention.
inline Image ToInt(const Image& img) {
  if (!img.real_convention) return img;
  Image out(img.height, img.width, false);
  for (size_t i = 0; i < img.values.size(); ++i) {
    double v = (img.values[i] + 0.5) * 255.0;
    v = std::clamp(v, 0.0, 255.0);
    out.values[i] = std::floor(v + 0.5);
  }
  return out;
}

namespace detail {

inline int PpmReadToken(std::istream& in, std::string* tok) {
  tok->clear();
  int c = in.get();
  // skip whitespace and '#' comments
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok->push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok->empty() ? -1 : 0;
}

}  // namespace detail

// Binary PPM (P6, maxval 255) loader. Returns the integer convention.
inline Image LoadImage(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open image file: " + path);
  std::string tok;
  if (detail::PpmReadToken(in, &tok) != 0 || tok != "P6")
    throw IntegrityError("not a binary PPM (P6): " + path);
  size_t dims[3];
  for (int i = 0; i < 3; ++i) {
    if (detail::PpmReadToken(in, &tok) != 0)
      throw IntegrityError("malformed PPM header: " + path);
    try {
      dims[i] = std::stoull(tok);
    } catch (...) {
      throw IntegrityError("malformed PPM header: " + path);
    }
  }
  if (dims[2] != 255)
    throw IntegrityError("PPM maxval must be 255: " + path);
  size_t w = dims[0], h = dims[1];
  if (w == 0 || h == 0) throw IntegrityError("empty PPM: " + path);
  // header ends with exactly one whitespace byte, already consumed by token read
  std::vector<char> buf(h * w * 3);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<size_t>(in.gcount()) != buf.size())
    throw IntegrityError("truncated PPM payload: " + path);
  Image img(h, w, false);
  for (size_t i = 0; i < buf.size(); ++i)
    img.values[i] = static_cast<double>(static_cast<uint8_t>(buf[i]));
  return img;
}

inline void SaveImage(const Image& img, const std::string& path) {
  const Image out = ToInt(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write image file: " + path);
  os << "P6\n" << out.width << " " << out.height << "\n255\n";
  std::vector<char> buf(out.values.size());
  for (size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<char>(static_cast<uint8_t>(out.values[i]));
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error("I/O failure writing " + path);
}

// PSNR in dB between two images in the [0,255] convention; capped when MSE=0.
inline double Psnr(const Image& a, const Image& b, double cap_db = 100.0) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("Psnr: image shape mismatch");
  if (a.real_convention || b.real_convention)
    throw Error("Psnr: expects [0,255] convention");
  double mse = MseBetween(a.values, b.values);
  if (mse <= 0.0) return cap_db;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

// MSE in the [-0.5, 0.5] convention (converts if needed).
inline double MseReal(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("MseReal: image shape mismatch");
  return MseBetween(ToReal(a).values, ToReal(b).values);
}

// n uniform-random square crops, deterministic under fixed seed.
inline std::vector<Image> ExtractPatches(const Image& img, size_t size,
                                         size_t count, uint64_t seed) {
  if (size > img.height || size > img.width)
    throw UsageError("ExtractPatches: patch larger than image");
  Rng rng(seed);
  std::vector<Image> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    size_t ymax = img.height - size, xmax = img.width - size;
    size_t y = ymax == 0 ? 0 : rng() % (ymax + 1);
    size_t x = xmax == 0 ? 0 : rng() % (xmax + 1);
    Image p(size, size, img.real_convention);
    for (size_t yy = 0; yy < size; ++yy)
      for (size_t xx = 0; xx < size; ++xx)
        for (size_t c = 0; c < 3; ++c)
          p.at(yy, xx, c) = img.at(y + yy, x + xx, c);
    out.push_back(std::move(p));
  }
  return out;
}

// Right/bottom replicate padding up to a multiple of `stride`; the decoder
// crops back using the true dimensions stored in the bitstream header.
inline Image PadToMultiple(const Image& img, size_t stride) {
  size_t H = (img.height + stride - 1) / stride * stride;
  size_t W = (img.width + stride - 1) / stride * stride;
  if (H == img.height && W == img.width) return img;
  Image out(H, W, img.real_convention);
  for (size_t y = 0; y < H; ++y)
    for (size_t x = 0; x < W; ++x)
      for (size_t c = 0; c < 3; ++c)
        out.at(y, x, c) = img.at(std::min(y, img.height - 1),
                                 std::min(x, img.width - 1), c);
  return out;
}

inline Image Crop(const Image& img, size_t h, size_t w) {
  if (h > img.height || w > img.width) throw ShapeError("Crop: too large");
  Image out(h, w, img.real_convention);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      for (size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

}  // namespace shallow

#endif  // SHALLOW_IMAGE_HPP_
