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

#ifndef WAVEVERIFY_EVAL_HH
#define WAVEVERIFY_EVAL_HH

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "waveverify/audio.hh"
#include "waveverify/effects.hh"
#include "waveverify/rng.hh"

namespace waveverify {

// Fraction of wrongly decoded bits.
double ber(const MessageBits& pred, const MessageBits& truth);

// Two-class mean IoU between a predicted mask (binarized at 0.5) and a hard
// ground-truth mask.  A class absent from both contributes IoU 1.
double miou(const PresenceMask& pred, const PresenceMask& truth);

// Clip-level detection rates at a score threshold.  labels: 1 watermarked,
// 0 clean.  Throws if either class is empty.
std::pair<double, double> tpr_fpr(const std::vector<double>& scores,
                                  const std::vector<int>& labels, double threshold = 0.5);

// Scale-invariant SNR in dB, capped at +-100.
double sisnr(const AudioClip& reference, const AudioClip& estimate);

// Mean locator probability, used as the clip-level detection score.
double detection_score(const PresenceMask& located);

// Model access points for the harness.  Tests substitute oracle stubs;
// production code wires the trained generator/detector/locator through
// these (see cli.cc).
struct EvalHooks {
  std::function<AudioClip(const AudioClip&, const MessageBits&)> embed;
  std::function<MessageBits(const AudioClip&)> detect;
  std::function<PresenceMask(const AudioClip&)> locate;  // probabilistic
};

struct EvalRow {
  EffectId effect = EffectId::kIdentity;
  EffectParams params;
  double tpr = 0.0;
  double fpr = 0.0;
  double mean_ber = 0.0;
  double mean_miou = 0.0;
  double mean_sisnr = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  size_t clip_count = 0;
  std::string model_id;
  uint64_t seed = 0;

  std::string to_json() const;
  std::string to_table() const;
};

// Robustness harness.  For every effect: embed a fresh random message into
// each corpus clip, distort watermarked and clean copies with the same
// effect, then score detection, decoding and localization.  Deterministic
// given (hooks, corpus, seed).
EvalReport evaluate(const EvalHooks& hooks, const std::vector<AudioClip>& corpus, int n_bits,
                    const std::vector<std::pair<EffectId, EffectParams>>& effects,
                    uint64_t seed, const std::string& model_id = "model",
                    const EffectContext& ctx = {});

}  // namespace waveverify

#endif  // WAVEVERIFY_EVAL_HH
