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

#ifndef WAVEVERIFY_DISCRIMINATOR_HH
#define WAVEVERIFY_DISCRIMINATOR_HH

#include <stdexcept>
#include <string>
#include <vector>

#include "waveverify/nn.hh"
#include "waveverify/rng.hh"
#include "waveverify/tape.hh"

namespace waveverify {

// Multi-scale waveform discriminator: one conv stack per scale operating
// on the input average-pooled 0, 1 and 2 times.  Every layer's activation
// map is tapped for feature matching.
struct DiscriminatorConfig {
  int scales = 3;
  std::vector<int> channels = {16, 32, 64};  // widths of the three hidden layers
  int kernel = 7;

  void validate() const {
    if (scales < 1 || channels.size() != 3) throw std::invalid_argument("discriminator: need 3 widths");
    for (int c : channels)
      if (c <= 0) throw std::invalid_argument("discriminator: bad channel count");
    if (kernel % 2 == 0) throw std::invalid_argument("discriminator: kernel must be odd");
  }
};

template <typename S>
struct Discriminator {
  using Var = nn::VarT<S>;

  DiscriminatorConfig cfg;
  // per scale: 4 strided conv layers, the last producing the score map
  std::vector<std::vector<nn::Conv1dLayer<S>>> stacks;

  void init(const DiscriminatorConfig& config, RandomSource& rng) {
    config.validate();
    cfg = config;
    const int P = (cfg.kernel - 1) / 2;
    stacks.assign(cfg.scales, {});
    for (int s = 0; s < cfg.scales; ++s) {
      stacks[s].resize(4);
      stacks[s][0].init(1, cfg.channels[0], cfg.kernel, 2, P, rng);
      stacks[s][1].init(cfg.channels[0], cfg.channels[1], cfg.kernel, 2, P, rng);
      stacks[s][2].init(cfg.channels[1], cfg.channels[2], cfg.kernel, 2, P, rng);
      stacks[s][3].init(cfg.channels[2], 1, 3, 2, 1, rng);
    }
  }

  void register_params(nn::ParamRegistry<S>& reg, const std::string& prefix = "disc") {
    for (size_t s = 0; s < stacks.size(); ++s)
      for (size_t l = 0; l < stacks[s].size(); ++l)
        stacks[s][l].register_params(
            reg, prefix + ".s" + std::to_string(s) + "_l" + std::to_string(l));
  }

  size_t param_count() const {
    nn::ParamRegistry<S> reg;
    const_cast<Discriminator*>(this)->register_params(reg);
    return reg.count();
  }

  // Each scale halves the input before its 4 stride-2 layers; keep T at or
  // above this so every score map is nonempty.
  int min_input_length() const { return 16 << (cfg.scales - 1); }

  struct Out {
    std::vector<Var> scores;    // one score map per scale
    std::vector<Var> features;  // every layer activation of every scale
  };

  Out forward(ad::Tape<S>& t, Var x, bool trainable = true) const {
    if (t.val(x).rows() != 1) throw std::invalid_argument("discriminator: input must be [1 x T]");
    if (t.val(x).cols() < min_input_length())
      throw std::invalid_argument("discriminator: input too short");
    Out out;
    Var in = x;
    for (int s = 0; s < cfg.scales; ++s) {
      if (s > 0) in = t.avgpool2(in);
      Var h = in;
      for (int l = 0; l < 3; ++l) {
        h = t.leaky_relu(stacks[s][l].apply(t, h, trainable), 0.2);
        out.features.push_back(h);
      }
      Var score = stacks[s][3].apply(t, h, trainable);
      out.features.push_back(score);
      out.scores.push_back(score);
    }
    return out;
  }
};

}  // namespace waveverify

#endif  // WAVEVERIFY_DISCRIMINATOR_HH
