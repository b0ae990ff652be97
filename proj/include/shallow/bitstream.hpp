// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_BITSTREAM_HPP_
#define SHALLOW_BITSTREAM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/entropy.hpp"
#include "shallow/io.hpp"
#include "shallow/range_coder.hpp"

namespace shallow {

// Wire format header. Fields in order: magic "SHBS", version u16, H u32,
// W u32, arch tag u8, hyper flag u8, C u16, model_hash u64 (FNV-1a of the
// checkpoint file used to encode). All little-endian.
constexpr uint16_t kBitstreamVersion = 1;
constexpr size_t kHeaderBytes = 26;

struct BitstreamHeader {
  uint32_t height = 0;
  uint32_t width = 0;
  uint8_t arch = 0;
  uint8_t hyper = 0;
  uint16_t channels = 0;
  uint64_t model_hash = 0;

  bool operator==(const BitstreamHeader&) const = default;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<uint8_t> payload_hyper;  // present iff header.hyper
  std::vector<uint8_t> payload_main;
};

inline std::vector<uint8_t> PackBitstream(const Bitstream& b) {
  ByteWriter w;
  w.Str("SHBS");
  w.U16(kBitstreamVersion);
  w.U32(b.header.height);
  w.U32(b.header.width);
  w.U8(b.header.arch);
  w.U8(b.header.hyper);
  w.U16(b.header.channels);
  w.U64(b.header.model_hash);
  if (b.header.hyper != 0) {
    w.U32(static_cast<uint32_t>(b.payload_hyper.size()));
    w.Bytes(b.payload_hyper);
  }
  w.U32(static_cast<uint32_t>(b.payload_main.size()));
  w.Bytes(b.payload_main);
  return w.Take();
}

inline Bitstream UnpackBitstream(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.Str(4) != "SHBS") throw IntegrityError("bitstream: bad magic");
  if (r.U16() != kBitstreamVersion)
    throw IntegrityError("bitstream: unsupported version");
  Bitstream b;
  b.header.height = r.U32();
  b.header.width = r.U32();
  b.header.arch = r.U8();
  b.header.hyper = r.U8();
  b.header.channels = r.U16();
  b.header.model_hash = r.U64();
  if (b.header.hyper != 0) b.payload_hyper = r.Bytes(r.U32());
  b.payload_main = r.Bytes(r.U32());
  if (!r.AtEnd()) throw IntegrityError("bitstream: trailing bytes");
  return b;
}

// ---------------------------------------------------------------------------
// Symbol coding of quantized latents under per-element (mu, sigma).
//
// Each element's distribution is quantized to (m, f, sigma_idx): m is the
// nearest integer of mu after snapping mu to a 1/256 grid, f = mu_q - m is
// the fractional offset, and sigma_idx indexes the shared scale table. The
// coded symbol is zhat - m, clipped to [-R, R] with an escape symbol for
// outliers which are then sent as 4 raw bytes (32 bits). R shrinks with
// sigma so near-deterministic channels pay no alphabet-floor overhead.

constexpr int kMaxSupportRadius = 255;

struct CodingParams {
  int64_t m = 0;     // integer center
  int16_t f256 = 0;  // fractional offset in 1/256 units, [-128, 127]
  int8_t sigma_idx = 0;
};

inline CodingParams QuantizeDist(double mu, double sigma) {
  CodingParams p;
  const int64_t q = std::llround(mu * 256.0);
  // floor((q + 128) / 256): nearest integer of q/256
  int64_t m = (q + 128) / 256;
  if (q + 128 < 0 && (q + 128) % 256 != 0) --m;
  p.m = m;
  p.f256 = static_cast<int16_t>(q - 256 * m);
  p.sigma_idx = static_cast<int8_t>(QuantizeScale(sigma));
  return p;
}

// Covers the range where the floored pmf is above the floor; anything
// further is cheaper through the escape path.
inline int SupportRadius(int sigma_idx) {
  const double sigma = ScaleTable()[static_cast<size_t>(sigma_idx)];
  const int r = static_cast<int>(std::ceil(4.5 * sigma)) + 3;
  return r > kMaxSupportRadius ? kMaxSupportRadius : r;
}

// CDF over 2R+2 symbols: offsets -R..R then the escape symbol, which
// carries the tail mass. Frequencies track the floored pmf to within one
// part in kFreqTotal (largest-remainder apportionment, minimum one slot),
// so coded length stays tight against sum(-log2 pmf).
inline Cdf BuildOffsetCdf(int f256, int sigma_idx) {
  const double mu = f256 / 256.0;
  const double sigma = ScaleTable()[static_cast<size_t>(sigma_idx)];
  const int R = SupportRadius(sigma_idx);
  const size_t n_sym = static_cast<size_t>(2 * R + 2);
  std::vector<double> w(n_sym);
  double total = 0.0, covered = 0.0;
  for (int n = -R; n <= R; ++n) {
    total += w[static_cast<size_t>(n + R)] =
        DiscretizedGaussianPmf(n, mu, sigma);
    covered += DiscretizedGaussianPmfUnfloored(n, mu, sigma);
  }
  total += w[n_sym - 1] = std::max(kPmfFloor, 1.0 - covered);  // escape
  std::vector<uint32_t> freq(n_sym);
  std::vector<std::pair<double, size_t>> rem(n_sym);
  uint64_t used = 0;
  size_t argmax = 0;
  for (size_t i = 0; i < n_sym; ++i) {
    const double exact = w[i] / total * static_cast<double>(kFreqTotal);
    freq[i] = std::max<uint32_t>(1, static_cast<uint32_t>(exact));
    used += freq[i];
    rem[i] = {exact - std::floor(exact), i};
    if (w[i] > w[argmax]) argmax = i;
  }
  if (used > kFreqTotal) {
    const uint64_t excess = used - kFreqTotal;
    if (freq[argmax] <= excess)
      throw NumericError("BuildOffsetCdf: frequency overflow");
    freq[argmax] -= static_cast<uint32_t>(excess);
  } else {
    std::sort(rem.begin(), rem.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    uint64_t leftover = kFreqTotal - used;
    for (size_t i = 0; leftover > 0; i = (i + 1) % n_sym, --leftover)
      ++freq[rem[i].second];
  }
  Cdf cdf(n_sym + 1);
  cdf[0] = 0;
  for (size_t i = 0; i < n_sym; ++i) cdf[i + 1] = cdf[i] + freq[i];
  return cdf;
}

// Shared CDF cache; keys are (f256, sigma_idx), at most 256*64 entries.
class CdfCache {
 public:
  const Cdf& Get(int f256, int sigma_idx) {
    const auto key = std::make_pair(f256, sigma_idx);
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(key, BuildOffsetCdf(f256, sigma_idx)).first;
    return it->second;
  }

 private:
  std::map<std::pair<int, int>, Cdf> cache_;
};

inline const Cdf& UniformByteCdf() {
  static const Cdf cdf = [] {
    Cdf c(257);
    for (size_t i = 0; i <= 256; ++i) c[i] = static_cast<uint32_t>(i << 8);
    return c;
  }();
  return cdf;
}

// The (mu, sigma) quantization actually used on the wire; rate reporting
// uses these so reported bits match coded bits.
inline ElementDists QuantizeDists(const ElementDists& dists) {
  ElementDists q;
  q.mu = Tensor(dists.mu.shape());
  q.sigma = Tensor(dists.sigma.shape());
  for (size_t i = 0; i < dists.mu.size(); ++i) {
    CodingParams p = QuantizeDist(dists.mu[i], dists.sigma[i]);
    q.mu[i] = static_cast<double>(p.m) + p.f256 / 256.0;
    q.sigma[i] = ScaleTable()[static_cast<size_t>(p.sigma_idx)];
  }
  return q;
}

// Hash of the per-element quantized-distribution stream; encoder and
// decoder must derive identical streams from the shared side information.
inline uint64_t DistStreamHash(const ElementDists& dists) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < dists.mu.size(); ++i) {
    CodingParams p = QuantizeDist(dists.mu[i], dists.sigma[i]);
    uint8_t rec[11];
    for (int b = 0; b < 8; ++b)
      rec[b] = static_cast<uint8_t>(static_cast<uint64_t>(p.m) >> (8 * b));
    rec[8] = static_cast<uint8_t>(p.f256 & 0xff);
    rec[9] = static_cast<uint8_t>((p.f256 >> 8) & 0xff);
    rec[10] = static_cast<uint8_t>(p.sigma_idx);
    h = Fnv1a64(rec, sizeof(rec), h);
  }
  return h;
}

inline std::vector<uint8_t> EncodeLatents(const std::vector<int32_t>& zhat,
                                          const ElementDists& dists,
                                          CdfCache* cache) {
  if (zhat.size() != dists.mu.size())
    throw ShapeError("EncodeLatents: shape mismatch");
  RangeEncoder enc;
  for (size_t i = 0; i < zhat.size(); ++i) {
    CodingParams p = QuantizeDist(dists.mu[i], dists.sigma[i]);
    const Cdf& cdf = cache->Get(p.f256, p.sigma_idx);
    const int R = SupportRadius(p.sigma_idx);
    const int64_t d = zhat[i] - p.m;
    if (d >= -R && d <= R) {
      const size_t s = static_cast<size_t>(d + R);
      enc.Encode(cdf[s], cdf[s + 1] - cdf[s]);
    } else {
      const size_t esc = static_cast<size_t>(2 * R + 1);
      enc.Encode(cdf[esc], cdf[esc + 1] - cdf[esc]);
      const Cdf& u = UniformByteCdf();
      const uint32_t raw = static_cast<uint32_t>(zhat[i]);
      for (int b = 0; b < 4; ++b) {
        const uint32_t byte = (raw >> (8 * b)) & 0xff;
        enc.Encode(u[byte], u[byte + 1] - u[byte]);
      }
    }
  }
  return enc.Finish();
}

inline std::vector<int32_t> DecodeLatents(const std::vector<uint8_t>& bytes,
                                          const ElementDists& dists,
                                          CdfCache* cache) {
  const size_t count = dists.mu.size();
  RangeDecoder dec(bytes.data(), bytes.size());
  std::vector<int32_t> out(count);
  for (size_t i = 0; i < count; ++i) {
    CodingParams p = QuantizeDist(dists.mu[i], dists.sigma[i]);
    const Cdf& cdf = cache->Get(p.f256, p.sigma_idx);
    const int R = SupportRadius(p.sigma_idx);
    const uint32_t v = dec.DecodeFreq();
    size_t lo = 0, hi = cdf.size() - 1;
    while (hi - lo > 1) {
      const size_t mid = (lo + hi) / 2;
      if (cdf[mid] <= v) lo = mid;
      else hi = mid;
    }
    dec.Update(cdf[lo], cdf[lo + 1] - cdf[lo]);
    if (lo == static_cast<size_t>(2 * R + 1)) {  // escape
      const Cdf& u = UniformByteCdf();
      uint32_t raw = 0;
      for (int b = 0; b < 4; ++b) {
        const uint32_t byte = dec.DecodeFreq() >> 8;
        dec.Update(u[byte], u[byte + 1] - u[byte]);
        raw |= byte << (8 * b);
      }
      out[i] = static_cast<int32_t>(raw);
    } else {
      out[i] = static_cast<int32_t>(static_cast<int64_t>(lo) - R + p.m);
    }
  }
  dec.CheckFullyConsumed();
  return out;
}

}  // namespace shallow

#endif  // SHALLOW_BITSTREAM_HPP_
