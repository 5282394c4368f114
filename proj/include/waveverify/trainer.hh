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

#ifndef WAVEVERIFY_TRAINER_HH
#define WAVEVERIFY_TRAINER_HH

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "waveverify/detector.hh"
#include "waveverify/discriminator.hh"
#include "waveverify/effects.hh"
#include "waveverify/generator.hh"
#include "waveverify/locator.hh"
#include "waveverify/losses.hh"
#include "waveverify/nn.hh"
#include "waveverify/scheduler.hh"

namespace waveverify {

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Exponential learning-rate decay, applied once per optimizer step.
  double lr_decay = 0.999996;

  void validate() const;
};

// AdamW over a parameter registry.  Moment buffers are aligned with the
// registry's entry order and allocated on the first step.
struct AdamW {
  OptimizerConfig cfg;
  int64_t steps = 0;
  std::vector<Eigen::MatrixXf> m, v;

  double current_lr() const;
  void step(nn::ParamRegistry<float>& reg);
};

struct TrainingConfig {
  OptimizerConfig optimizer;
  int batch_size = 8;
  int total_iters = 2000;
  int validation_interval = 200;
  int variants_per_sample = 2;
  double clip_seconds = 0.5;
  int sample_rate = 16000;
  uint64_t seed = 1;
  bool augment = true;
  // Chance that an augmented variant also gets a temporal augmentation
  // (split evenly between segment replacement and sequence permutation)
  // before the scheduled effect.
  double temporal_prob = 0.5;
  int val_clips = 16;
  // A variant counts as a parameter-bin success when its BER stays at or
  // below this threshold.
  double param_success_ber = 0.25;
  // Early stop once validation reaches both thresholds; stop_ber < 0
  // disables the check.
  double stop_ber = -1.0;
  double stop_miou = 1.1;

  LossWeights weights;
  StftLossSpec stft;
  SchedulerConfig scheduler;
  std::vector<EffectId> effects;  // empty selects default_training_effects()
  GeneratorConfig generator;
  DetectorConfig detector;
  LocatorConfig locator;
  DiscriminatorConfig discriminator;
  TemporalAugSpec temporal;

  std::string model_id = "waveverify";
  std::string trace_path;
  std::string checkpoint_out;
  // Corpus location, consumed by the CLI; in-process callers pass a Corpus
  // directly.  pools syntax: name:weight:dir[,name:weight:dir...]
  std::string corpus_dir;
  std::string pools;
  std::string val_dir;

  void validate() const;
};

// Flat key=value config file ('#' comments).  Unknown keys are rejected.
TrainingConfig parse_training_config(const std::string& text);
TrainingConfig load_training_config(const std::string& path);
// Canonical form: every key, fixed order; parse(dump(c)) == c.
std::string dump_training_config(const TrainingConfig& cfg);

struct CorpusPool {
  std::string name;
  double weight = 1.0;
  std::vector<AudioClip> clips;
};

struct Corpus {
  std::vector<CorpusPool> pools;
  std::vector<AudioClip> val;  // held-out; empty validates on training pools

  void validate() const;
  static Corpus from_clips(std::vector<AudioClip> clips, std::vector<AudioClip> val = {});
};

struct CorpusSpecPool {
  std::string name;
  std::string dir;
  double weight = 1.0;
};

struct CorpusSpec {
  std::vector<CorpusSpecPool> pools;
  std::string val_dir;
};

Corpus load_corpus(const CorpusSpec& spec, int expected_rate = 16000);

// Weighted pool choice, then a uniform random crop; clips shorter than the
// crop are cycled.
AudioClip sample_training_clip(const Corpus& corpus, size_t samples, RandomSource& rng);

struct EffectStepStat {
  std::string effect;
  double ber = 0.0;
  double miou = 0.0;
};

struct StepMetrics {
  int64_t iteration = 0;
  double loss_total = 0.0;
  double loss_rec = 0.0;
  double loss_adv = 0.0;
  double loss_det = 0.0;
  double loss_loc = 0.0;
  double loss_disc = 0.0;
  double ber = 0.0;
  double miou = 0.0;
  double lr = 0.0;
  std::vector<EffectStepStat> effects;
};

std::string step_metrics_json(const StepMetrics& m);

struct ValidationMetrics {
  int64_t iteration = 0;
  double ber = 0.0;
  double miou = 0.0;
  double score = 0.0;  // ber + (1 - miou); lower is better
};

std::string validation_metrics_json(const ValidationMetrics& v);

struct TrainerState {
  TrainingConfig cfg;
  Generator<float> gen;
  Detector<float> det;
  Locator<float> loc;
  Discriminator<float> disc;
  nn::ParamRegistry<float> gen_side;  // generator + detector + locator
  nn::ParamRegistry<float> disc_side;
  AdamW opt_gen, opt_disc;
  SchedulerState scheduler;
  int64_t iteration = 0;
  std::vector<std::string> trace;  // line-delimited JSON metric records
  double best_val_score = 1e300;
  int64_t best_val_iter = -1;

  explicit TrainerState(const TrainingConfig& config);
  TrainerState(const TrainerState&) = delete;
  TrainerState& operator=(const TrainerState&) = delete;
};

struct OptStateBlob {
  int64_t steps = 0;
  std::map<std::string, Eigen::MatrixXf> m, v;
};

struct Checkpoint {
  TrainingConfig config;
  int64_t iteration = 0;
  std::map<std::string, Eigen::MatrixXf> tensors;
  OptStateBlob opt_gen, opt_disc;
  std::string scheduler_json;
  std::vector<std::string> trace;
  double best_val_score = 1e300;
  int64_t best_val_iter = -1;
};

Checkpoint make_checkpoint(const TrainerState& state);
void restore_state(TrainerState& state, const Checkpoint& ck);
std::unique_ptr<TrainerState> state_from_checkpoint(const Checkpoint& ck);
std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// One optimization step: generator-side pass (reconstruction, adversarial,
// detection/localization over augmented variants), then a discriminator
// pass on the detached watermarked signal, then scheduler feedback.
StepMetrics train_step(TrainerState& state, const std::vector<AudioClip>& batch,
                       const std::vector<MessageBits>& messages, RandomSource& rng,
                       const EffectContext& ctx = {});

ValidationMetrics run_validation(TrainerState& state, const Corpus& corpus, RandomSource& rng);

struct TrainResult {
  Checkpoint best;
  Checkpoint final;
  std::vector<std::string> trace;
};

TrainResult train(const TrainingConfig& cfg, const Corpus& corpus, const EffectContext& ctx = {});
// Continues a loaded checkpoint to ck.config.total_iters; with the same
// seed the combined trace is identical to an uninterrupted run.
TrainResult resume_training(const Checkpoint& ck, const Corpus& corpus,
                            const EffectContext& ctx = {});

}  // namespace waveverify

#endif  // WAVEVERIFY_TRAINER_HH
