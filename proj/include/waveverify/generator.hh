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

#ifndef WAVEVERIFY_GENERATOR_HH
#define WAVEVERIFY_GENERATOR_HH

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "waveverify/audio.hh"
#include "waveverify/nn.hh"
#include "waveverify/rng.hh"
#include "waveverify/tape.hh"

namespace waveverify {

// FiLM-conditioned encoder-decoder.  The message MLP maps the n-bit
// payload (as +-1 values) to per-level (gamma, beta) vectors, gamma
// parameterized as 1 + g; features are modulated directly without
// normalization.  The watermark leaves as a bounded additive residual
// delta = residual_gain * tanh(decoder output).
struct GeneratorConfig {
  int n_bits = 16;
  std::vector<int> channels = {32, 64, 96, 128};
  std::vector<int> strides = {2, 2, 2, 2};
  int kernel = 7;
  int bands = 4;
  int mlp_hidden = 128;
  int norm_groups = 8;
  int spec_win = 32;  // spectrogram branch window, hopped at strides[0]
  double residual_gain = 0.1;

  int levels() const { return static_cast<int>(channels.size()); }
  int total_stride() const {
    int s = 1;
    for (int v : strides) s *= v;
    return s;
  }
  void validate() const;
};

template <typename S>
struct Generator {
  using Var = nn::VarT<S>;

  GeneratorConfig cfg;
  nn::Conv1dLayer<S> pre;
  nn::GroupNormLayer<S> pre_gn;
  std::vector<nn::DwSepConv1d<S>> enc;
  std::vector<nn::GroupNormLayer<S>> enc_gn;
  nn::Conv1dLayer<S> spec_proj;  // 1x1 over log-magnitude bins
  nn::Conv1dLayer<S> merge;      // 1x1 after spectrogram concat at level 0
  std::vector<nn::ConvT1dLayer<S>> dec;
  std::vector<nn::GroupNormLayer<S>> dec_gn;
  nn::Conv1dLayer<S> post;  // residual head
  nn::LinearLayer<S> mlp1, mlp2, mlp_head;

  void init(const GeneratorConfig& config, RandomSource& rng) {
    config.validate();
    cfg = config;
    const int L = cfg.levels();
    const int ch0 = cfg.channels[0];
    const int P = (cfg.kernel - 1) / 2;

    pre.init(1, ch0, cfg.kernel, 1, P, rng);
    pre_gn.init(ch0, cfg.norm_groups);
    enc.resize(L);
    enc_gn.resize(L);
    for (int l = 0; l < L; ++l) {
      const int cin = l == 0 ? ch0 : cfg.channels[l - 1];
      enc[l].init(cin, cfg.channels[l], cfg.kernel, cfg.strides[l], P, rng);
      enc_gn[l].init(cfg.channels[l], cfg.norm_groups);
    }
    const int bins = cfg.spec_win / 2 + 1;
    spec_proj.init(bins, ch0, 1, 1, 0, rng);
    merge.init(2 * ch0, ch0, 1, 1, 0, rng);
    dec.resize(L);
    dec_gn.resize(L);
    for (int l = 0; l < L; ++l) {
      const int cout = l == 0 ? ch0 : cfg.channels[l - 1];
      const int s = cfg.strides[l];
      dec[l].init(cfg.channels[l], cout, 2 * s, s, s / 2, rng);
      dec_gn[l].init(cout, cfg.norm_groups);
    }
    mlp1.init(cfg.n_bits, cfg.mlp_hidden, rng);
    mlp2.init(cfg.mlp_hidden, cfg.mlp_hidden, rng);
    mlp_head.init(cfg.mlp_hidden, film_total(), rng);
    // The residual head keeps its regular init: a silent start deadlocks
    // joint training (no signal for the detector, no detector gradient for
    // the embedder); residual_gain bounds the initial mark instead.
    post.init(ch0, 1, cfg.kernel, 1, P, rng);
  }

  void register_params(nn::ParamRegistry<S>& reg, const std::string& prefix = "gen") {
    pre.register_params(reg, prefix + ".pre");
    pre_gn.register_params(reg, prefix + ".pre_gn");
    for (size_t l = 0; l < enc.size(); ++l) {
      const std::string t = prefix + ".enc" + std::to_string(l);
      enc[l].register_params(reg, t);
      enc_gn[l].register_params(reg, t + "_gn");
    }
    spec_proj.register_params(reg, prefix + ".spec");
    merge.register_params(reg, prefix + ".merge");
    for (size_t l = 0; l < dec.size(); ++l) {
      const std::string t = prefix + ".dec" + std::to_string(l);
      dec[l].register_params(reg, t);
      dec_gn[l].register_params(reg, t + "_gn");
    }
    post.register_params(reg, prefix + ".post");
    mlp1.register_params(reg, prefix + ".mlp1");
    mlp2.register_params(reg, prefix + ".mlp2");
    mlp_head.register_params(reg, prefix + ".mlp_head");
  }

  size_t param_count() const {
    nn::ParamRegistry<S> reg;
    const_cast<Generator*>(this)->register_params(reg);
    return reg.count();
  }

  // Row offset of level l's gamma block in the MLP head output; the beta
  // block follows at offset + channels[l].  Within a block, band b owns
  // rows [b*channels[l]/bands, (b+1)*channels[l]/bands).
  int film_offset(int level) const {
    int off = 0;
    for (int l = 0; l < level; ++l) off += 2 * cfg.channels[l];
    return off;
  }
  int film_total() const { return film_offset(cfg.levels()); }

  // Per-level (gamma, beta) column vectors from a +-1 message column.
  std::vector<std::pair<Var, Var>> message_to_film(ad::Tape<S>& t, Var msg,
                                                   bool trainable = true) const {
    if (t.val(msg).rows() != cfg.n_bits || t.val(msg).cols() != 1)
      throw std::invalid_argument("message_to_film: message must be [n_bits x 1]");
    Var h = t.mish(mlp1.apply(t, msg, trainable));
    h = t.mish(mlp2.apply(t, h, trainable));
    Var out = mlp_head.apply(t, h, trainable);
    std::vector<std::pair<Var, Var>> film;
    film.reserve(cfg.levels());
    for (int l = 0; l < cfg.levels(); ++l) {
      const int off = film_offset(l);
      const int ch = cfg.channels[l];
      Var gamma = t.add_scalar(t.slice_rows(out, off, ch), 1.0);
      Var beta = t.slice_rows(out, off + ch, ch);
      film.emplace_back(gamma, beta);
    }
    return film;
  }

  int min_input_length() const { return std::max(cfg.spec_win, cfg.total_stride()); }

  struct EmbedOut {
    Var watermarked;  // [1 x T], clamped to [-1,1]
    Var residual;     // [1 x T], |residual| <= residual_gain
    std::vector<Var> film_features;  // post-FiLM activation per level
  };

  EmbedOut embed(ad::Tape<S>& t, Var x, Var msg, bool trainable = true) const {
    const Eigen::Index T = t.val(x).cols();
    if (t.val(x).rows() != 1) throw std::invalid_argument("embed: clip must be [1 x T]");
    if (T < min_input_length()) throw std::invalid_argument("embed: clip too short");
    const int ts = cfg.total_stride();
    const Eigen::Index Tp = ((T + ts - 1) / ts) * ts;
    Var xp = Tp == T ? x : t.pad_cols(x, 0, Tp - T);

    auto film = message_to_film(t, msg, trainable);

    Var h = t.mish(pre_gn.apply(t, pre.apply(t, xp, trainable), trainable));
    std::vector<Var> skips(cfg.levels());
    std::vector<Var> film_feats(cfg.levels());
    for (int l = 0; l < cfg.levels(); ++l) {
      skips[l] = h;
      h = t.mish(enc_gn[l].apply(t, enc[l].apply(t, h, trainable), trainable));
      h = t.film(h, film[l].first, film[l].second);
      film_feats[l] = h;
      if (l == 0) {
        Var sm = t.stft_mag(xp, cfg.spec_win, cfg.strides[0]);
        Var sp = t.mish(spec_proj.apply(t, t.log_(t.add_scalar(sm, 1.0)), trainable));
        const Eigen::Index want = t.val(h).cols();
        const Eigen::Index have = t.val(sp).cols();
        if (have < want) sp = t.pad_cols(sp, 0, want - have);
        h = t.mish(merge.apply(t, t.concat_rows(h, sp), trainable));
      }
    }
    Var d = h;
    for (int l = cfg.levels() - 1; l >= 0; --l) {
      d = t.mish(dec_gn[l].apply(t, dec[l].apply(t, d, trainable), trainable));
      d = t.add(d, skips[l]);
    }
    Var r = post.apply(t, d, trainable);
    Var delta = t.scale(t.tanh_(r), cfg.residual_gain);
    if (Tp != T) delta = t.slice_cols(delta, 0, T);
    Var wm = t.clamp_(t.add(x, delta), -1.0, 1.0);
    return {wm, delta, std::move(film_feats)};
  }
};

inline void GeneratorConfig::validate() const {
  if (channels.empty() || channels.size() != strides.size())
    throw std::invalid_argument("generator: channels/strides length mismatch");
  for (size_t l = 0; l < channels.size(); ++l) {
    if (channels[l] <= 0 || channels[l] % bands != 0)
      throw std::invalid_argument("generator: channels must be positive multiples of bands");
    if (channels[l] % norm_groups != 0)
      throw std::invalid_argument("generator: channels must be divisible by norm_groups");
    if (strides[l] < 2 || strides[l] % 2 != 0)
      throw std::invalid_argument("generator: strides must be even and >= 2");
  }
  if (n_bits <= 0 || mlp_hidden <= 0 || kernel % 2 == 0)
    throw std::invalid_argument("generator: bad n_bits/mlp_hidden/kernel");
  if (spec_win < 2 || spec_win % strides[0] != 0)
    throw std::invalid_argument("generator: spec_win must be a multiple of strides[0]");
  if (!(residual_gain > 0.0)) throw std::invalid_argument("generator: residual_gain must be > 0");
}

template <typename S>
ad::Mat<S> message_to_pm1(const MessageBits& m) {
  ad::Mat<S> v(static_cast<Eigen::Index>(m.n()), 1);
  for (size_t i = 0; i < m.n(); ++i) v(static_cast<Eigen::Index>(i), 0) = m.bits[i] ? S(1) : S(-1);
  return v;
}

template <typename S>
ad::Mat<S> clip_to_row(const AudioClip& clip) {
  ad::Mat<S> x(1, static_cast<Eigen::Index>(clip.length()));
  for (size_t i = 0; i < clip.length(); ++i)
    x(0, static_cast<Eigen::Index>(i)) = static_cast<S>(clip.samples[i]);
  return x;
}

template <typename S>
AudioClip row_to_clip(const ad::Mat<S>& row, int sample_rate) {
  std::vector<double> s(static_cast<size_t>(row.cols()));
  for (Eigen::Index i = 0; i < row.cols(); ++i) s[static_cast<size_t>(i)] = static_cast<double>(row(0, i));
  return AudioClip(std::move(s), sample_rate);
}

struct EmbedResult {
  AudioClip watermarked;
  AudioClip residual;
};

template <typename S>
EmbedResult embed_clip(const Generator<S>& gen, const AudioClip& clip, const MessageBits& msg) {
  if (static_cast<int>(msg.n()) != gen.cfg.n_bits)
    throw std::invalid_argument("embed: message has wrong bit count");
  ad::Tape<S> t;
  auto x = t.constant(clip_to_row<S>(clip));
  auto m = t.constant(message_to_pm1<S>(msg));
  auto out = gen.embed(t, x, m, /*trainable=*/false);
  return {row_to_clip<S>(t.val(out.watermarked), clip.sample_rate),
          row_to_clip<S>(t.val(out.residual), clip.sample_rate)};
}

}  // namespace waveverify

#endif  // WAVEVERIFY_GENERATOR_HH
