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

#ifndef WAVEVERIFY_SCHEDULER_HH
#define WAVEVERIFY_SCHEDULER_HH

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "waveverify/effects.hh"
#include "waveverify/rng.hh"

namespace waveverify {

// Dynamic effect scheduler: drifts effect-selection probabilities toward
// the attacks the detector currently handles worst, via EMA-smoothed
// BER/MIoU feedback pushed through a temperature-scaled softmax, and skews
// per-effect parameter sampling toward low-success bins.
struct SchedulerConfig {
  double w1 = 0.8;            // BER weight in the difficulty score
  double w2 = 0.2;            // (1 - MIoU) weight
  double ema_beta = 0.9;
  double laplace_alpha = 1.0;
  double laplace_beta = 1.0;  // denominator smoothing, distinct from ema_beta
  double t_initial = 1.0;
  double t_final = 0.7;
  double switch_fraction = 0.5;  // exploration -> exploitation point
  double anneal_fraction = 0.1;  // span of the linear temperature drop
  size_t total_iters = 0;        // 0 keeps the scheduler in exploration
};

struct ParamBinStats {
  std::vector<int64_t> success;
  std::vector<int64_t> total;
};

struct SchedulerState {
  std::vector<EffectId> effects;
  std::vector<double> probs;
  std::vector<double> ber_ema;
  std::vector<double> miou_ema;
  SchedulerConfig config;
  double temperature = 1.0;
  bool exploitation = false;
  // per effect, per parameter name
  std::map<int, std::map<std::string, ParamBinStats>> bins;

  size_t index_of(EffectId id) const;
};

struct EffectFeedback {
  EffectId effect;
  double ber = 0.0;
  double miou = 0.0;
};

SchedulerState init_scheduler(const std::vector<EffectId>& effects, SchedulerConfig config = {});

// Sets phase and temperature for the given training iteration.
void set_scheduler_iter(SchedulerState& state, size_t iter);

// k categorical draws with parameters from the posterior in exploitation
// phase, uniform otherwise.
std::vector<std::pair<EffectId, EffectParams>> sample_effects(const SchedulerState& state,
                                                              size_t k, RandomSource& rng);

// EMA update for fed-back effects, then softmax over all effects.
void update_scheduler(SchedulerState& state, const std::vector<EffectFeedback>& feedback);

void record_param_outcome(SchedulerState& state, EffectId effect, const EffectParams& params,
                          bool success);

// Smoothed success rate (s + alpha) / (t + alpha + beta).
double laplace_rate(int64_t success, int64_t total, const SchedulerConfig& config);

// Normalized per-bin sampling weights, one entry per parameter; harder
// (lower success) bins weigh more.
ParamPosterior param_posterior(const SchedulerState& state, EffectId effect);

std::string scheduler_to_json(const SchedulerState& state);
SchedulerState scheduler_from_json(const std::string& text);

}  // namespace waveverify

#endif  // WAVEVERIFY_SCHEDULER_HH
