// Copyright 2026 The WaveVerify Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WAVEVERIFY_DETECTOR_HH
#define WAVEVERIFY_DETECTOR_HH

#include <stdexcept>
#include <string>
#include <vector>

#include "waveverify/audio.hh"
#include "waveverify/generator.hh"
#include "waveverify/nn.hh"
#include "waveverify/rng.hh"
#include "waveverify/tape.hh"

namespace waveverify {

// Strided conv encoder feeding a mixture-of-experts decoder:
// Output = sum_i sigmoid(gate_i) (.) f_i(z).  Experts run at the encoder
// frame rate and unpool back to sample resolution; a 1x1 head over the
// normalized mixture then emits one probability channel per payload bit
// and per sample.
struct DetectorConfig {
  int n_bits = 16;
  std::vector<int> channels = {32, 64, 96, 128};  // paper scale {128, 256, 384, 512}
  std::vector<int> strides = {2, 2, 2, 2};
  int kernel = 7;
  int experts = 4;
  int expert_kernel = 3;
  int norm_groups = 8;
  // Default gates pool z over time into one scalar logit per expert; the
  // alternative derives a logit per frame.
  bool per_timestep_gates = false;

  int levels() const { return static_cast<int>(channels.size()); }
  int total_stride() const {
    int s = 1;
    for (int v : strides) s *= v;
    return s;
  }
  void validate() const;
};

template <typename S>
struct Detector {
  using Var = nn::VarT<S>;

  DetectorConfig cfg;
  std::vector<nn::Conv1dLayer<S>> enc;
  std::vector<nn::GroupNormLayer<S>> enc_gn;
  std::vector<std::vector<nn::DwSepConv1d<S>>> experts;
  std::vector<std::vector<nn::GroupNormLayer<S>>> expert_gn;
  nn::LinearLayer<S> gate;       // time-pooled mode
  nn::Conv1dLayer<S> gate_conv;  // per-timestep mode
  nn::GroupNormLayer<S> moe_gn;
  nn::Conv1dLayer<S> bit_head;

  void init(const DetectorConfig& config, RandomSource& rng) {
    config.validate();
    cfg = config;
    const int L = cfg.levels();
    const int P = (cfg.kernel - 1) / 2;
    enc.resize(L);
    enc_gn.resize(L);
    for (int l = 0; l < L; ++l) {
      const int cin = l == 0 ? 1 : cfg.channels[l - 1];
      enc[l].init(cin, cfg.channels[l], cfg.kernel, cfg.strides[l], P, rng);
      enc_gn[l].init(cfg.channels[l], cfg.norm_groups);
    }
    const int top = cfg.channels[L - 1];
    const int eP = (cfg.expert_kernel - 1) / 2;
    experts.assign(cfg.experts, {});
    expert_gn.assign(cfg.experts, {});
    for (int e = 0; e < cfg.experts; ++e) {
      experts[e].resize(3);
      expert_gn[e].resize(3);
      for (int j = 0; j < 3; ++j) {
        experts[e][j].init(top, top, cfg.expert_kernel, 1, eP, rng);
        expert_gn[e][j].init(top, cfg.norm_groups);
      }
    }
    if (cfg.per_timestep_gates)
      gate_conv.init(top, cfg.experts, 1, 1, 0, rng);
    else
      gate.init(top, cfg.experts, rng);
    moe_gn.init(top, cfg.norm_groups);
    bit_head.init(top, cfg.n_bits, 1, 1, 0, rng);
  }

  void register_params(nn::ParamRegistry<S>& reg, const std::string& prefix = "det") {
    for (size_t l = 0; l < enc.size(); ++l) {
      const std::string t = prefix + ".enc" + std::to_string(l);
      enc[l].register_params(reg, t);
      enc_gn[l].register_params(reg, t + "_gn");
    }
    for (size_t e = 0; e < experts.size(); ++e)
      for (size_t j = 0; j < experts[e].size(); ++j) {
        const std::string t = prefix + ".exp" + std::to_string(e) + "_" + std::to_string(j);
        experts[e][j].register_params(reg, t);
        expert_gn[e][j].register_params(reg, t + "_gn");
      }
    if (cfg.per_timestep_gates)
      gate_conv.register_params(reg, prefix + ".gate");
    else
      gate.register_params(reg, prefix + ".gate");
    moe_gn.register_params(reg, prefix + ".moe_gn");
    bit_head.register_params(reg, prefix + ".bits");
  }

  size_t param_count() const {
    nn::ParamRegistry<S> reg;
    const_cast<Detector*>(this)->register_params(reg);
    return reg.count();
  }

  int min_input_length() const { return cfg.total_stride(); }

  struct DetectOut {
    Var probs;        // [n_bits x T], sample-aligned sigmoid probabilities
    Var gate_logits;  // [E x 1] pooled or [E x T_frames] per-timestep
  };

  DetectOut forward(ad::Tape<S>& t, Var x, bool trainable = true) const {
    const Eigen::Index T = t.val(x).cols();
    if (t.val(x).rows() != 1) throw std::invalid_argument("detect: clip must be [1 x T]");
    if (T < min_input_length()) throw std::invalid_argument("detect: clip too short");
    const int ts = cfg.total_stride();
    const Eigen::Index Tp = ((T + ts - 1) / ts) * ts;
    Var h = Tp == T ? x : t.pad_cols(x, 0, Tp - T);
    for (int l = 0; l < cfg.levels(); ++l)
      h = t.mish(enc_gn[l].apply(t, enc[l].apply(t, h, trainable), trainable));
    Var z = h;

    std::vector<Var> unpooled(cfg.experts);
    for (int e = 0; e < cfg.experts; ++e) {
      Var f = z;
      for (int j = 0; j < 3; ++j)
        f = t.mish(expert_gn[e][j].apply(t, experts[e][j].apply(t, f, trainable), trainable));
      unpooled[e] = t.upsample_nearest(f, ts);
    }

    Var combined, logits;
    if (cfg.per_timestep_gates) {
      logits = gate_conv.apply(t, z, trainable);  // [E x T_frames]
      Var sig = t.sigmoid(t.upsample_nearest(logits, ts));
      for (int e = 0; e < cfg.experts; ++e) {
        Var term = t.colwise_scale(unpooled[e], t.slice_rows(sig, e, 1));
        combined = e == 0 ? term : t.add(combined, term);
      }
    } else {
      logits = gate.apply(t, t.mean_rows(z), trainable);  // [E x 1]
      combined = t.moe_combine(unpooled, logits);
    }

    // Normalizing the mixture keeps the head scale-invariant in the gates:
    // without it, driving every gate shut is a gradient-free way to predict
    // the marginal, and the encoder stops learning.
    combined = moe_gn.apply(t, combined, trainable);
    Var probs = t.sigmoid(bit_head.apply(t, combined, trainable));
    if (Tp != T) probs = t.slice_cols(probs, 0, T);
    return {probs, logits};
  }
};

inline void DetectorConfig::validate() const {
  if (channels.empty() || channels.size() != strides.size())
    throw std::invalid_argument("detector: channels/strides length mismatch");
  for (size_t l = 0; l < channels.size(); ++l) {
    if (channels[l] <= 0 || channels[l] % norm_groups != 0)
      throw std::invalid_argument("detector: channels must be divisible by norm_groups");
    if (strides[l] < 1) throw std::invalid_argument("detector: strides must be >= 1");
  }
  if (n_bits <= 0 || experts < 1 || kernel % 2 == 0 || expert_kernel % 2 == 0)
    throw std::invalid_argument("detector: bad n_bits/experts/kernel");
}

// Aggregated read-out: bit b = 1 iff the (region-weighted) time average of
// its probability row clears 0.5.  A zero-weight region falls back to the
// full-clip average.
struct DecodedBits {
  MessageBits bits;
  std::vector<double> confidence;  // per-bit mean probability
};

template <typename S>
DecodedBits decode_bit_probs(const ad::Mat<S>& probs, const std::vector<double>* region = nullptr) {
  if (region && static_cast<Eigen::Index>(region->size()) != probs.cols())
    throw std::invalid_argument("decode: region length mismatch");
  double wsum = 0.0;
  if (region)
    for (double v : *region) wsum += v;
  DecodedBits out;
  out.bits.bits.resize(static_cast<size_t>(probs.rows()));
  out.confidence.resize(static_cast<size_t>(probs.rows()));
  for (Eigen::Index b = 0; b < probs.rows(); ++b) {
    double acc = 0.0;
    if (region && wsum > 0.0) {
      for (Eigen::Index i = 0; i < probs.cols(); ++i)
        acc += (*region)[static_cast<size_t>(i)] * static_cast<double>(probs(b, i));
      acc /= wsum;
    } else {
      for (Eigen::Index i = 0; i < probs.cols(); ++i) acc += static_cast<double>(probs(b, i));
      acc /= static_cast<double>(probs.cols());
    }
    out.confidence[static_cast<size_t>(b)] = acc;
    out.bits.bits[static_cast<size_t>(b)] = acc >= 0.5 ? 1 : 0;
  }
  return out;
}

template <typename S>
DecodedBits detect_clip(const Detector<S>& det, const AudioClip& clip,
                        const PresenceMask* region = nullptr) {
  if (region) require_paired(clip, *region);
  ad::Tape<S> t;
  auto x = t.constant(clip_to_row<S>(clip));
  auto out = det.forward(t, x, /*trainable=*/false);
  return decode_bit_probs(t.val(out.probs), region ? &region->values : nullptr);
}

}  // namespace waveverify

#endif  // WAVEVERIFY_DETECTOR_HH
