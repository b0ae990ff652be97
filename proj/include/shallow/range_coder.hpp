// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_RANGE_CODER_HPP_
#define SHALLOW_RANGE_CODER_HPP_

#include <algorithm>
#include <cstdint>
#include <vector>

#include "shallow/common.hpp"

namespace shallow {

// Quantized CDF with 16-bit total frequency: cum[0] = 0, cum[n] = 65536,
// symbol i has frequency cum[i+1] - cum[i] >= 1.
using Cdf = std::vector<uint32_t>;

constexpr uint32_t kFreqTotal = 1u << 16;

// Carry-less range coder (Subbotin variant): 32-bit low/range, byte-wise
// renormalization, range clamping instead of carry propagation. Termination
// costs 2 bytes: after the final renormalization range >= 2^16, so the
// interval contains a code point whose low 16 bits are zero and only its top
// two bytes are transmitted; the decoder supplies the implied zero bytes.
class RangeEncoder {
 public:
  void Encode(uint32_t cum, uint32_t freq) {
    // Full-precision interval scaling: both bounds are mapped through
    // (range * c) >> 16, so at most one unit of range is lost per symbol.
    const uint64_t r = range_;
    const uint32_t lo = static_cast<uint32_t>(r * cum >> 16);
    const uint32_t hi = static_cast<uint32_t>(r * (cum + freq) >> 16);
    low_ += lo;
    range_ = hi - lo;
    Normalize();
  }

  std::vector<uint8_t> Finish() {
    // range_ >= kBot after Normalize, so this code point lies in the
    // interval and its low 16 bits are zero.
    const uint32_t code = (low_ + (kBot - 1)) & ~(kBot - 1);
    out_.push_back(static_cast<uint8_t>(code >> 24));
    out_.push_back(static_cast<uint8_t>(code >> 16));
    return std::move(out_);
  }

 private:
  static constexpr uint32_t kTop = 1u << 24;
  static constexpr uint32_t kBot = 1u << 16;

  void Normalize() {
    while ((low_ ^ (low_ + range_)) < kTop ||
           (range_ < kBot && ((range_ = ~low_ + 1u & (kBot - 1)), true))) {
      out_.push_back(static_cast<uint8_t>(low_ >> 24));
      range_ <<= 8;
      low_ <<= 8;
    }
  }

  std::vector<uint8_t> out_;
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size) : data_(data), size_(size) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | ReadByte();
  }

  // Returns a value in [0, kFreqTotal); the caller locates the symbol whose
  // [cum, cum+freq) interval contains it, then calls Update.
  uint32_t DecodeFreq() {
    const uint64_t d = code_ - low_;
    const uint64_t v = (((d + 1) << 16) - 1) / range_;
    if (v >= kFreqTotal) throw IntegrityError("range decoder: corrupt stream");
    return static_cast<uint32_t>(v);
  }

  void Update(uint32_t cum, uint32_t freq) {
    const uint64_t r = range_;
    const uint32_t lo = static_cast<uint32_t>(r * cum >> 16);
    const uint32_t hi = static_cast<uint32_t>(r * (cum + freq) >> 16);
    low_ += lo;
    range_ = hi - lo;
    while ((low_ ^ (low_ + range_)) < kTop ||
           (range_ < kBot && ((range_ = ~low_ + 1u & (kBot - 1)), true))) {
      code_ = (code_ << 8) | ReadByte();
      range_ <<= 8;
      low_ <<= 8;
    }
  }

  void CheckFullyConsumed() const {
    // A well-formed stream consumes every byte plus exactly the two zero
    // bytes implied by the termination.
    if (pos_ != size_ || implied_ != 2)
      throw IntegrityError("range decoder: payload size mismatch");
  }

 private:
  static constexpr uint32_t kTop = 1u << 24;
  static constexpr uint32_t kBot = 1u << 16;

  uint8_t ReadByte() {
    if (pos_ < size_) return data_[pos_++];
    // The 2-byte termination implies exactly two zero bytes past the end;
    // needing more means the stream was cut short.
    if (++implied_ > 2)
      throw IntegrityError("range decoder: truncated stream");
    return 0;
  }

  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  size_t implied_ = 0;
  uint32_t code_ = 0;
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

// Convenience batch API over per-symbol CDFs. freqs[i] is the CDF under
// which symbols[i] is coded; symbols are indices into their CDF.
inline std::vector<uint8_t> RcEncode(const std::vector<uint32_t>& symbols,
                                     const std::vector<const Cdf*>& freqs) {
  if (symbols.size() != freqs.size())
    throw ShapeError("RcEncode: symbols/freqs size mismatch");
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const Cdf& cdf = *freqs[i];
    const uint32_t s = symbols[i];
    if (s + 1 >= cdf.size()) throw Error("RcEncode: symbol out of support");
    enc.Encode(cdf[s], cdf[s + 1] - cdf[s]);
  }
  return enc.Finish();
}

inline std::vector<uint32_t> RcDecode(const std::vector<uint8_t>& bytes,
                                      const std::vector<const Cdf*>& freqs,
                                      size_t count) {
  if (freqs.size() != count) throw ShapeError("RcDecode: freqs size mismatch");
  RangeDecoder dec(bytes.data(), bytes.size());
  std::vector<uint32_t> out(count);
  for (size_t i = 0; i < count; ++i) {
    const Cdf& cdf = *freqs[i];
    const uint32_t v = dec.DecodeFreq();
    size_t lo = 0, hi = cdf.size() - 1;
    while (hi - lo > 1) {
      size_t mid = (lo + hi) / 2;
      if (cdf[mid] <= v) lo = mid;
      else hi = mid;
    }
    out[i] = static_cast<uint32_t>(lo);
    dec.Update(cdf[lo], cdf[lo + 1] - cdf[lo]);
  }
  dec.CheckFullyConsumed();
  return out;
}

}  // namespace shallow

#endif  // SHALLOW_RANGE_CODER_HPP_
