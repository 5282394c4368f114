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

#ifndef WAVEVERIFY_LOCATOR_HH
#define WAVEVERIFY_LOCATOR_HH

#include <stdexcept>
#include <string>
#include <vector>

#include "waveverify/audio.hh"
#include "waveverify/generator.hh"
#include "waveverify/nn.hh"
#include "waveverify/rng.hh"
#include "waveverify/tape.hh"

namespace waveverify {

// Lightweight sample-resolution presence locator.  Three stride-2 encoder
// blocks (the second block's weights are reused for the third) feed a
// three-stage decoder; each stage upsamples x2 via a transposed conv and
// fuses the encoder feature of the matching rate through a 1x1 projection,
// so the stages consume the stride-8, stride-4 and stride-2 features.
// Output length equals input length exactly for every supported T.
struct LocatorConfig {
  int channels = 64;
  int kernel = 7;
  int up_kernel = 4;
  int norm_groups = 8;

  void validate() const {
    if (channels <= 0 || channels % norm_groups != 0)
      throw std::invalid_argument("locator: channels must be divisible by norm_groups");
    if (kernel % 2 == 0 || up_kernel != 4)
      throw std::invalid_argument("locator: kernel must be odd, up_kernel 4");
  }
};

template <typename S>
struct Locator {
  using Var = nn::VarT<S>;

  LocatorConfig cfg;
  nn::Conv1dLayer<S> b1;  // 1 -> C, stride 2
  nn::Conv1dLayer<S> b2;  // C -> C, stride 2; applied twice (shared weights)
  nn::GroupNormLayer<S> gn1, gn2;
  nn::ConvT1dLayer<S> up1, up2, up3;  // C -> C, K=4 S=2 P=1
  nn::GroupNormLayer<S> ugn1, ugn2, ugn3;
  nn::Conv1dLayer<S> fuse1, fuse2;  // 1x1 projections of e2 respectively e1
  nn::Conv1dLayer<S> head;          // 1x1 C -> 1

  void init(const LocatorConfig& config, RandomSource& rng) {
    config.validate();
    cfg = config;
    const int C = cfg.channels;
    const int P = (cfg.kernel - 1) / 2;
    b1.init(1, C, cfg.kernel, 2, P, rng);
    gn1.init(C, cfg.norm_groups);
    b2.init(C, C, cfg.kernel, 2, P, rng);
    gn2.init(C, cfg.norm_groups);
    up1.init(C, C, cfg.up_kernel, 2, 1, rng);
    ugn1.init(C, cfg.norm_groups);
    up2.init(C, C, cfg.up_kernel, 2, 1, rng);
    ugn2.init(C, cfg.norm_groups);
    up3.init(C, C, cfg.up_kernel, 2, 1, rng);
    ugn3.init(C, cfg.norm_groups);
    fuse1.init(C, C, 1, 1, 0, rng);
    fuse2.init(C, C, 1, 1, 0, rng);
    head.init(C, 1, 1, 1, 0, rng);
  }

  void register_params(nn::ParamRegistry<S>& reg, const std::string& prefix = "loc") {
    b1.register_params(reg, prefix + ".b1");
    gn1.register_params(reg, prefix + ".gn1");
    b2.register_params(reg, prefix + ".b2");  // shared by encoder stages 2 and 3
    gn2.register_params(reg, prefix + ".gn2");
    up1.register_params(reg, prefix + ".up1");
    ugn1.register_params(reg, prefix + ".ugn1");
    up2.register_params(reg, prefix + ".up2");
    ugn2.register_params(reg, prefix + ".ugn2");
    up3.register_params(reg, prefix + ".up3");
    ugn3.register_params(reg, prefix + ".ugn3");
    fuse1.register_params(reg, prefix + ".fuse1");
    fuse2.register_params(reg, prefix + ".fuse2");
    head.register_params(reg, prefix + ".head");
  }

  size_t param_count() const {
    nn::ParamRegistry<S> reg;
    const_cast<Locator*>(this)->register_params(reg);
    return reg.count();
  }

  int min_input_length() const { return 8; }

  // Per-sample presence probabilities, [1 x T].
  Var forward(ad::Tape<S>& t, Var x, bool trainable = true) const {
    const Eigen::Index T = t.val(x).cols();
    if (t.val(x).rows() != 1) throw std::invalid_argument("locate: clip must be [1 x T]");
    if (T < min_input_length()) throw std::invalid_argument("locate: clip too short");
    Var e1 = t.mish(gn1.apply(t, b1.apply(t, x, trainable), trainable));
    Var e2 = t.mish(gn2.apply(t, b2.apply(t, e1, trainable), trainable));
    Var e3 = t.mish(gn2.apply(t, b2.apply(t, e2, trainable), trainable));

    Var d = crop(t, up1.apply(t, e3, trainable), t.val(e2).cols());
    d = t.mish(ugn1.apply(t, t.add(d, fuse1.apply(t, e2, trainable)), trainable));
    d = crop(t, up2.apply(t, d, trainable), t.val(e1).cols());
    d = t.mish(ugn2.apply(t, t.add(d, fuse2.apply(t, e1, trainable)), trainable));
    d = crop(t, up3.apply(t, d, trainable), T);
    d = t.mish(ugn3.apply(t, d, trainable));
    return t.sigmoid(head.apply(t, d, trainable));
  }

 private:
  static Var crop(ad::Tape<S>& t, Var v, Eigen::Index n) {
    return t.val(v).cols() == n ? v : t.slice_cols(v, 0, n);
  }
};

template <typename S>
PresenceMask locate_clip(const Locator<S>& loc, const AudioClip& clip) {
  ad::Tape<S> t;
  auto x = t.constant(clip_to_row<S>(clip));
  auto p = loc.forward(t, x, /*trainable=*/false);
  const auto& row = t.val(p);
  std::vector<double> v(static_cast<size_t>(row.cols()));
  for (Eigen::Index i = 0; i < row.cols(); ++i) v[static_cast<size_t>(i)] = static_cast<double>(row(0, i));
  return PresenceMask(std::move(v), /*is_hard=*/false);
}

}  // namespace waveverify

#endif  // WAVEVERIFY_LOCATOR_HH
