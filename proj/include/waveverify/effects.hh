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

#ifndef WAVEVERIFY_EFFECTS_HH
#define WAVEVERIFY_EFFECTS_HH

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "waveverify/audio.hh"
#include "waveverify/dsp.hh"
#include "waveverify/rng.hh"
#include "waveverify/tape.hh"

namespace waveverify {

// Audio-effect attacks.  Filters, resampling, speed and noise are
// differentiable signal ops; quantize8 and external_codec pass gradients
// straight through.
enum class EffectId : int {
  kIdentity = 0,
  kHighpass,
  kLowpass,
  kBandpass,
  kResample,
  kSpeed,
  kGaussianNoise,
  kPinkNoise,
  kBabbleNoise,
  kQuantize8,
  kExternalCodec,
};

const char* effect_name(EffectId id);
EffectId effect_from_name(const std::string& name);
std::vector<EffectId> all_effects();

// The six-effect attack set the scheduler trains against by default.
std::vector<EffectId> default_training_effects();

struct EffectParams {
  std::map<std::string, double> values;

  bool has(const std::string& k) const { return values.count(k) > 0; }
  void set(const std::string& k, double v) { values[k] = v; }
  double get(const std::string& k) const;
  double get_or(const std::string& k, double fallback) const;
};

// Legal range of one effect parameter; continuous ranges are discretized
// into uniform bins for the scheduler's success counters, discrete sets
// keep one bin per choice.
struct ParamRangeSpec {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> choices;  // non-empty for discrete parameters
  int bin_count = 8;

  int bins() const { return choices.empty() ? bin_count : static_cast<int>(choices.size()); }
};

std::vector<ParamRangeSpec> effect_param_specs(EffectId id);
int param_bin_index(const ParamRangeSpec& spec, double value);
double sample_param_in_bin(const ParamRangeSpec& spec, int bin, RandomSource& rng);

// Per-parameter bin weights, as produced by the scheduler posterior.
using ParamPosterior = std::map<std::string, std::vector<double>>;

EffectParams sample_effect_params(EffectId id, RandomSource& rng,
                                  const ParamPosterior* posterior = nullptr);

void validate_effect_params(EffectId id, const EffectParams& params);

struct EffectContext {
  int sample_rate = 16000;
  // Source clips for synthesizing multi-talker babble.
  const std::vector<AudioClip>* babble_pool = nullptr;
  // Shell template with {in}, {out}, {bitrate} placeholders; empty disables
  // the external_codec effect.
  std::string codec_command;
};

enum class SequenceKind { kReverse, kRotate, kShuffle };

SequenceKind sequence_kind_from_name(const std::string& name);
const char* sequence_kind_name(SequenceKind k);

struct TemporalAugSpec {
  double segment_len_s = 0.1;
  double modify_fraction = 0.2;
  SequenceKind sequence_kind = SequenceKind::kReverse;
  double shuffle_len_s = 0.5;
};

// Segment replacement plan: which segments get modified and how.
struct SegmentPlan {
  int seg_len = 0;
  std::vector<int32_t> segments;  // chosen segment indices, ascending
  std::vector<int> branch;        // 0: original, 1: silence, 2: alternative
};

SegmentPlan plan_segments(size_t len, int sample_rate, const TemporalAugSpec& spec,
                          RandomSource& rng);

// Index permutation for sequence-level augmentation: output i reads input
// perm[i].
std::vector<int32_t> sequence_permutation(size_t len, int sample_rate,
                                          const TemporalAugSpec& spec, RandomSource& rng);

namespace detail {

std::vector<double> make_noise(EffectId id, size_t len, double snr_db, double signal_rms,
                               RandomSource& rng, const EffectContext& ctx);
std::vector<double> codec_roundtrip(const std::vector<double>& x, double bitrate_kbps,
                                    const EffectContext& ctx);
double quantize8_sample(double v);

}  // namespace detail

// Applies one effect to an in-graph [1 x T] signal, rewriting `mask` to the
// output length.  The same rng draw order backs the numeric apply_effect
// below, so the two stay in lockstep.
template <typename S>
typename ad::Tape<S>::Var effect_signal_tape(ad::Tape<S>& t, typename ad::Tape<S>::Var x,
                                             std::vector<double>& mask, EffectId id,
                                             const EffectParams& params, RandomSource& rng,
                                             const EffectContext& ctx = {}) {
  validate_effect_params(id, params);
  const double fs = static_cast<double>(ctx.sample_rate);
  const Eigen::Index len = t.val(x).cols();
  if (mask.size() != static_cast<size_t>(len))
    throw std::invalid_argument("effect: mask length does not match signal");

  switch (id) {
    case EffectId::kIdentity:
      return x;
    case EffectId::kHighpass:
      return t.iir(x, butterworth_highpass(4, params.get("cutoff_hz"), fs));
    case EffectId::kLowpass:
      return t.iir(x, butterworth_lowpass(4, params.get("cutoff_hz"), fs));
    case EffectId::kBandpass: {
      auto sos = butterworth_highpass(4, params.get("low_hz"), fs);
      auto lp = butterworth_lowpass(4, params.get("high_hz"), fs);
      sos.insert(sos.end(), lp.begin(), lp.end());
      return t.iir(x, std::move(sos));
    }
    case EffectId::kResample: {
      const double target = params.get("target_rate_hz");
      if (target == fs) return x;
      auto down = std::make_shared<const ResampleMap>(
          make_resample_map(static_cast<size_t>(len), fs / target));
      auto up = std::make_shared<const ResampleMap>(
          make_resample_map(down->out_len, target / fs));
      auto y = t.resample(t.resample(x, down), up);
      mask = mask_resample_nearest(mask, static_cast<size_t>(t.val(y).cols()));
      return y;
    }
    case EffectId::kSpeed: {
      const double factor = params.get("speed_factor");
      auto map = std::make_shared<const ResampleMap>(
          make_resample_map(static_cast<size_t>(len), factor));
      auto y = t.resample(x, map);
      mask = mask_resample_nearest(mask, map->out_len);
      return y;
    }
    case EffectId::kGaussianNoise:
    case EffectId::kPinkNoise:
    case EffectId::kBabbleNoise: {
      const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& xv = t.val(x);
      std::vector<double> sig(xv.cols());
      for (Eigen::Index i = 0; i < xv.cols(); ++i) sig[i] = static_cast<double>(xv(0, i));
      std::vector<double> noise =
          detail::make_noise(id, sig.size(), params.get("snr_db"), rms(sig), rng, ctx);
      ad::Mat<S> n(1, len);
      for (Eigen::Index i = 0; i < len; ++i) n(0, i) = static_cast<S>(noise[i]);
      return t.add(x, t.constant(std::move(n)));
    }
    case EffectId::kQuantize8: {
      const auto& xv = t.val(x);
      ad::Mat<S> delta(1, len);
      for (Eigen::Index i = 0; i < len; ++i) {
        const double v = static_cast<double>(xv(0, i));
        delta(0, i) = static_cast<S>(detail::quantize8_sample(v) - v);
      }
      return t.add(x, t.constant(std::move(delta)));
    }
    case EffectId::kExternalCodec: {
      const auto& xv = t.val(x);
      std::vector<double> sig(xv.cols());
      for (Eigen::Index i = 0; i < xv.cols(); ++i) sig[i] = static_cast<double>(xv(0, i));
      std::vector<double> coded =
          detail::codec_roundtrip(sig, params.get("bitrate_kbps"), ctx);
      ad::Mat<S> delta(1, len);
      for (Eigen::Index i = 0; i < len; ++i)
        delta(0, i) = static_cast<S>(coded[i] - sig[i]);
      return t.add(x, t.constant(std::move(delta)));
    }
  }
  throw std::logic_error("effect_signal_tape: unhandled effect");
}

std::pair<AudioClip, PresenceMask> apply_effect(const AudioClip& clip, const PresenceMask& mask,
                                                EffectId id, const EffectParams& params,
                                                RandomSource& rng, const EffectContext& ctx = {});

// Segment-level augmentation on an in-graph watermarked signal: chosen
// segments are overwritten with non-watermarked content and their mask
// zeroed.  `original` is the pre-embedding clip, `alternative` a different
// recording at least as long.
template <typename S>
typename ad::Tape<S>::Var segment_augment_tape(ad::Tape<S>& t, typename ad::Tape<S>::Var wm,
                                               const std::vector<double>& original,
                                               const std::vector<double>& alternative,
                                               std::vector<double>& mask,
                                               const TemporalAugSpec& spec, RandomSource& rng,
                                               int sample_rate = 16000) {
  const size_t len = static_cast<size_t>(t.val(wm).cols());
  if (original.size() != len) throw std::invalid_argument("segment_augment: original length");
  if (alternative.size() < len)
    throw std::invalid_argument("segment_augment: alternative shorter than clip");
  if (mask.size() != len) throw std::invalid_argument("segment_augment: mask length");
  SegmentPlan plan = plan_segments(len, sample_rate, spec, rng);
  if (plan.segments.empty()) return wm;

  std::vector<int32_t> idx(len);
  std::vector<uint8_t> take(len, 1);
  ad::Mat<S> fill = ad::Mat<S>::Zero(1, static_cast<Eigen::Index>(len));
  for (size_t i = 0; i < len; ++i) idx[i] = static_cast<int32_t>(i);
  for (size_t s = 0; s < plan.segments.size(); ++s) {
    const size_t start = static_cast<size_t>(plan.segments[s]) * plan.seg_len;
    for (size_t i = start; i < start + plan.seg_len; ++i) {
      take[i] = 0;
      mask[i] = 0.0;
      if (plan.branch[s] == 0)
        fill(0, static_cast<Eigen::Index>(i)) = static_cast<S>(original[i]);
      else if (plan.branch[s] == 2)
        fill(0, static_cast<Eigen::Index>(i)) = static_cast<S>(alternative[i]);
    }
  }
  return t.gather_mix(wm, idx, take, fill);
}

std::pair<AudioClip, PresenceMask> segment_augment(const AudioClip& wm, const AudioClip& original,
                                                   const AudioClip& alternative,
                                                   const PresenceMask& mask,
                                                   const TemporalAugSpec& spec, RandomSource& rng);

// Sequence-level augmentation: one permutation applied to both signal and
// mask.
template <typename S>
typename ad::Tape<S>::Var sequence_augment_tape(ad::Tape<S>& t, typename ad::Tape<S>::Var x,
                                                std::vector<double>& mask,
                                                const TemporalAugSpec& spec, RandomSource& rng,
                                                int sample_rate = 16000) {
  const size_t len = static_cast<size_t>(t.val(x).cols());
  if (mask.size() != len) throw std::invalid_argument("sequence_augment: mask length");
  std::vector<int32_t> perm = sequence_permutation(len, sample_rate, spec, rng);
  std::vector<double> new_mask(len);
  for (size_t i = 0; i < len; ++i) new_mask[i] = mask[perm[i]];
  mask = std::move(new_mask);
  std::vector<uint8_t> take(len, 1);
  return t.gather_mix(x, perm, take, ad::Mat<S>::Zero(1, static_cast<Eigen::Index>(len)));
}

std::pair<AudioClip, PresenceMask> sequence_augment(const AudioClip& clip,
                                                    const PresenceMask& mask,
                                                    const TemporalAugSpec& spec,
                                                    RandomSource& rng);

}  // namespace waveverify

#endif  // WAVEVERIFY_EFFECTS_HH
