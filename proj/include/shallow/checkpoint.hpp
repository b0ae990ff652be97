// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.

#ifndef SHALLOW_CHECKPOINT_HPP_
#define SHALLOW_CHECKPOINT_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/io.hpp"
#include "shallow/models.hpp"
#include "shallow/tensor.hpp"

namespace shallow {

// Flat binary checkpoint container: magic "SHCK", version u16, architecture
// tag u8, hyperprior flag u8, hyperparameter block (C, s, k, N, k1, s1,
// k2, s2 as u16 each), then named parameter tensors (name length u16, name
// bytes, rank u8, dims u32 each, 64-bit little-endian floats).
constexpr uint16_t kCheckpointVersion = 1;

inline std::vector<uint8_t> SerializeModel(const CodecModel& m) {
  ByteWriter w;
  w.Str("SHCK");
  w.U16(kCheckpointVersion);
  w.U8(static_cast<uint8_t>(m.arch));
  w.U8(m.has_hyper() ? 1 : 0);
  const HyperParams& hp = m.hp;
  for (uint16_t v : {hp.C, hp.s, hp.k, hp.N, hp.k1, hp.s1, hp.k2, hp.s2})
    w.U16(v);
  ForEachParam(m, [&](const std::string& name, const Tensor& t) {
    w.U16(static_cast<uint16_t>(name.size()));
    w.Str(name);
    w.U8(static_cast<uint8_t>(t.rank()));
    for (size_t i = 0; i < t.rank(); ++i)
      w.U32(static_cast<uint32_t>(t.dim(i)));
    for (size_t i = 0; i < t.size(); ++i) w.F64(t[i]);
  });
  return w.Take();
}

inline void SaveModel(const CodecModel& m, const std::string& path) {
  WriteFileBytes(path, SerializeModel(m));
}

namespace detail {

inline ConvSpec ConvFromTensors(const Tensor& w, const Tensor& b, size_t stride,
                                bool transposed) {
  if (w.rank() != 4 || b.rank() != 1 || w.dim(0) != w.dim(1) ||
      w.dim(3) != b.dim(0))
    throw IntegrityError("checkpoint: malformed conv tensors");
  ConvSpec spec(w.dim(2), w.dim(3), w.dim(0), stride, transposed);
  spec.weights = w;
  spec.bias = b;
  return spec;
}

inline const Tensor& Need(const std::map<std::string, Tensor>& tensors,
                          const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw IntegrityError("checkpoint: missing tensor " + name);
  return it->second;
}

}  // namespace detail

inline CodecModel DeserializeModel(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.Str(4) != "SHCK") throw IntegrityError("checkpoint: bad magic");
  if (r.U16() != kCheckpointVersion)
    throw IntegrityError("checkpoint: unsupported version");
  const uint8_t arch = r.U8();
  if (arch > 1) throw IntegrityError("checkpoint: unknown architecture tag");
  const uint8_t hyper_flag = r.U8();
  CodecModel m;
  m.arch = static_cast<ArchTag>(arch);
  m.hp.C = r.U16();
  m.hp.s = r.U16();
  m.hp.k = r.U16();
  m.hp.N = r.U16();
  m.hp.k1 = r.U16();
  m.hp.s1 = r.U16();
  m.hp.k2 = r.U16();
  m.hp.s2 = r.U16();

  std::map<std::string, Tensor> tensors;
  while (!r.AtEnd()) {
    const size_t name_len = r.U16();
    std::string name = r.Str(name_len);
    const size_t rank = r.U8();
    std::vector<size_t> shape(rank);
    size_t n = 1;
    for (size_t i = 0; i < rank; ++i) {
      shape[i] = r.U32();
      n *= shape[i];
    }
    Tensor t(shape);
    for (size_t i = 0; i < n; ++i) t[i] = r.F64();
    if (!tensors.emplace(std::move(name), std::move(t)).second)
      throw IntegrityError("checkpoint: duplicate tensor name");
  }

  using detail::ConvFromTensors;
  using detail::Need;
  if (m.arch == ArchTag::kJpegLike) {
    JpegLikeSynthesis syn;
    syn.layer = ConvFromTensors(Need(tensors, "syn.w"), Need(tensors, "syn.b"),
                                m.hp.s, true);
    if (syn.layer.kernel != m.hp.k || syn.layer.in_channels != m.hp.C)
      throw IntegrityError("checkpoint: synthesis shape disagrees with header");
    m.jpeg = std::move(syn);
  } else {
    TwoLayerSynthesis tl;
    tl.conv1 = ConvFromTensors(Need(tensors, "syn1.w"), Need(tensors, "syn1.b"),
                               m.hp.s1, true);
    tl.conv_res = ConvFromTensors(Need(tensors, "synres.w"),
                                  Need(tensors, "synres.b"), m.hp.s1, true);
    tl.beta_raw = Need(tensors, "igdn.beta_raw");
    tl.gamma_raw = Need(tensors, "igdn.gamma_raw");
    tl.conv2 = ConvFromTensors(Need(tensors, "syn2.w"), Need(tensors, "syn2.b"),
                               m.hp.s2, true);
    if (tl.conv1.kernel != m.hp.k1 || tl.conv1.in_channels != m.hp.C ||
        tl.conv1.out_channels != m.hp.N || tl.conv2.kernel != m.hp.k2)
      throw IntegrityError("checkpoint: synthesis shape disagrees with header");
    m.two_layer = std::move(tl);
  }
  if (tensors.count("ana0.w") != 0) {
    AnalysisTransform ana;
    for (size_t i = 0;; ++i) {
      const std::string p = "ana" + std::to_string(i);
      if (tensors.count(p + ".w") == 0) break;
      ana.layers.push_back(
          ConvFromTensors(Need(tensors, p + ".w"), Need(tensors, p + ".b"), 2,
                          false));
      if (tensors.count(p + ".act_beta_raw") != 0) {
        ana.act_beta_raw.push_back(Need(tensors, p + ".act_beta_raw"));
        ana.act_gamma_raw.push_back(Need(tensors, p + ".act_gamma_raw"));
      }
    }
    if (ana.act_beta_raw.size() + 1 != ana.layers.size())
      throw IntegrityError("checkpoint: analysis activation count mismatch");
    m.analysis = std::move(ana);
  }
  m.prior.mu = Need(tensors, "prior.mu");
  m.prior.sigma_raw = Need(tensors, "prior.sigma_raw");
  if (m.prior.mu.rank() != 1 || m.prior.mu.dim(0) != m.hp.C ||
      !m.prior.mu.same_shape(m.prior.sigma_raw))
    throw IntegrityError("checkpoint: prior shape disagrees with header");
  if (hyper_flag != 0) {
    HyperpriorModel hy;
    hy.hyper_analysis = ConvFromTensors(Need(tensors, "hyper_ana.w"),
                                        Need(tensors, "hyper_ana.b"), 4, false);
    hy.hyper_synthesis = ConvFromTensors(Need(tensors, "hyper_syn.w"),
                                         Need(tensors, "hyper_syn.b"), 4, true);
    hy.hyper_prior.mu = Need(tensors, "hyper_prior.mu");
    hy.hyper_prior.sigma_raw = Need(tensors, "hyper_prior.sigma_raw");
    if (hy.hyper_analysis.out_channels != hy.hyper_synthesis.in_channels ||
        hy.hyper_synthesis.out_channels != 2 * size_t{m.hp.C} ||
        hy.hyper_prior.mu.dim(0) != hy.hyper_analysis.out_channels)
      throw IntegrityError("checkpoint: hyperprior shapes inconsistent");
    m.hyper = std::move(hy);
  }
  return m;
}

struct LoadedModel {
  CodecModel model;
  uint64_t file_hash = 0;  // FNV-1a over the checkpoint bytes
};

inline LoadedModel LoadModel(const std::string& path) {
  std::vector<uint8_t> bytes = ReadFileBytes(path);
  LoadedModel lm;
  lm.file_hash = Fnv1a64(bytes.data(), bytes.size());
  lm.model = DeserializeModel(bytes);
  return lm;
}

}  // namespace shallow

#endif  // SHALLOW_CHECKPOINT_HPP_
