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

#include "waveverify/effects.hh"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <stdexcept>

#include "waveverify/wav.hh"

namespace waveverify {

namespace {

struct EffectNameEntry {
  EffectId id;
  const char* name;
};

constexpr EffectNameEntry kEffectNames[] = {
    {EffectId::kIdentity, "identity"},
    {EffectId::kHighpass, "highpass"},
    {EffectId::kLowpass, "lowpass"},
    {EffectId::kBandpass, "bandpass"},
    {EffectId::kResample, "resample"},
    {EffectId::kSpeed, "speed"},
    {EffectId::kGaussianNoise, "gaussian_noise"},
    {EffectId::kPinkNoise, "pink_noise"},
    {EffectId::kBabbleNoise, "babble_noise"},
    {EffectId::kQuantize8, "quantize8"},
    {EffectId::kExternalCodec, "external_codec"},
};

void check_range(const char* effect, const char* key, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi))
    throw std::invalid_argument(std::string(effect) + ": " + key + "=" + std::to_string(v) +
                                " outside legal range [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + "]");
}

void check_choice(const char* effect, const char* key, double v,
                  const std::vector<double>& choices) {
  for (double c : choices)
    if (v == c) return;
  throw std::invalid_argument(std::string(effect) + ": " + key + "=" + std::to_string(v) +
                              " not in the legal set");
}

}  // namespace

const char* effect_name(EffectId id) {
  for (const auto& e : kEffectNames)
    if (e.id == id) return e.name;
  throw std::logic_error("effect_name: unknown id");
}

EffectId effect_from_name(const std::string& name) {
  for (const auto& e : kEffectNames)
    if (name == e.name) return e.id;
  throw std::invalid_argument("unknown effect: " + name);
}

std::vector<EffectId> all_effects() {
  std::vector<EffectId> out;
  for (const auto& e : kEffectNames) out.push_back(e.id);
  return out;
}

std::vector<EffectId> default_training_effects() {
  return {EffectId::kHighpass, EffectId::kLowpass,       EffectId::kBandpass,
          EffectId::kResample, EffectId::kSpeed,         EffectId::kGaussianNoise};
}

double EffectParams::get(const std::string& k) const {
  auto it = values.find(k);
  if (it == values.end()) throw std::invalid_argument("missing effect parameter: " + k);
  return it->second;
}

double EffectParams::get_or(const std::string& k, double fallback) const {
  auto it = values.find(k);
  return it == values.end() ? fallback : it->second;
}

std::vector<ParamRangeSpec> effect_param_specs(EffectId id) {
  switch (id) {
    case EffectId::kIdentity:
    case EffectId::kQuantize8:
      return {};
    case EffectId::kHighpass:
      return {{"cutoff_hz", 100.0, 3000.0, {}, 8}};
    case EffectId::kLowpass:
      return {{"cutoff_hz", 2000.0, 16000.0, {}, 8}};
    case EffectId::kBandpass:
      // both edges sampled within 20% of the 300/4000 Hz anchors
      return {{"low_hz", 240.0, 360.0, {}, 8}, {"high_hz", 3200.0, 4800.0, {}, 8}};
    case EffectId::kResample:
      return {{"target_rate_hz", 0.0, 0.0, {8000.0, 16000.0, 32000.0}, 3}};
    case EffectId::kSpeed:
      return {{"speed_factor", 0.8, 1.25, {}, 8}};
    case EffectId::kGaussianNoise:
    case EffectId::kPinkNoise:
    case EffectId::kBabbleNoise:
      return {{"snr_db", 10.0, 30.0, {}, 8}};
    case EffectId::kExternalCodec:
      return {{"bitrate_kbps", 0.0, 0.0, {64.0, 96.0, 128.0}, 3}};
  }
  throw std::logic_error("effect_param_specs: unknown id");
}

int param_bin_index(const ParamRangeSpec& spec, double value) {
  if (!spec.choices.empty()) {
    for (size_t i = 0; i < spec.choices.size(); ++i)
      if (value == spec.choices[i]) return static_cast<int>(i);
    throw std::invalid_argument("param_bin_index: value not in discrete set for " + spec.name);
  }
  const double t = (value - spec.lo) / (spec.hi - spec.lo);
  int bin = static_cast<int>(t * spec.bin_count);
  return std::clamp(bin, 0, spec.bin_count - 1);
}

double sample_param_in_bin(const ParamRangeSpec& spec, int bin, RandomSource& rng) {
  if (!spec.choices.empty()) {
    if (bin < 0 || bin >= static_cast<int>(spec.choices.size()))
      throw std::invalid_argument("sample_param_in_bin: bad bin for " + spec.name);
    return spec.choices[static_cast<size_t>(bin)];
  }
  const double width = (spec.hi - spec.lo) / spec.bin_count;
  return spec.lo + (bin + rng.uniform()) * width;
}

EffectParams sample_effect_params(EffectId id, RandomSource& rng,
                                  const ParamPosterior* posterior) {
  EffectParams out;
  for (const ParamRangeSpec& spec : effect_param_specs(id)) {
    const std::vector<double>* weights = nullptr;
    if (posterior) {
      auto it = posterior->find(spec.name);
      if (it != posterior->end() && static_cast<int>(it->second.size()) == spec.bins())
        weights = &it->second;
    }
    int bin;
    if (weights) {
      double total = std::accumulate(weights->begin(), weights->end(), 0.0);
      double u = rng.uniform() * total;
      bin = spec.bins() - 1;
      double acc = 0.0;
      for (int i = 0; i < spec.bins(); ++i) {
        acc += (*weights)[static_cast<size_t>(i)];
        if (u < acc) {
          bin = i;
          break;
        }
      }
    } else {
      bin = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.bins())));
    }
    out.set(spec.name, sample_param_in_bin(spec, bin, rng));
  }
  return out;
}

void validate_effect_params(EffectId id, const EffectParams& params) {
  switch (id) {
    case EffectId::kIdentity:
    case EffectId::kQuantize8:
      return;
    case EffectId::kHighpass:
      check_range("highpass", "cutoff_hz", params.get("cutoff_hz"), 100.0, 3000.0);
      return;
    case EffectId::kLowpass:
      check_range("lowpass", "cutoff_hz", params.get("cutoff_hz"), 2000.0, 16000.0);
      return;
    case EffectId::kBandpass:
      check_range("bandpass", "low_hz", params.get("low_hz"), 240.0, 360.0);
      check_range("bandpass", "high_hz", params.get("high_hz"), 3200.0, 4800.0);
      return;
    case EffectId::kResample:
      check_choice("resample", "target_rate_hz", params.get("target_rate_hz"),
                   {8000.0, 16000.0, 32000.0});
      return;
    case EffectId::kSpeed:
      check_range("speed", "speed_factor", params.get("speed_factor"), 0.8, 1.25);
      return;
    case EffectId::kGaussianNoise:
    case EffectId::kPinkNoise:
    case EffectId::kBabbleNoise:
      check_range(effect_name(id), "snr_db", params.get("snr_db"), 10.0, 30.0);
      return;
    case EffectId::kExternalCodec:
      check_choice("external_codec", "bitrate_kbps", params.get("bitrate_kbps"),
                   {64.0, 96.0, 128.0});
      return;
  }
  throw std::logic_error("validate_effect_params: unknown id");
}

namespace detail {

double quantize8_sample(double v) {
  double q = std::round(std::clamp(v, -1.0, 1.0) * 128.0) / 128.0;
  return std::clamp(q, -1.0, 127.0 / 128.0);
}

std::vector<double> make_noise(EffectId id, size_t len, double snr_db, double signal_rms,
                               RandomSource& rng, const EffectContext& ctx) {
  std::vector<double> noise(len, 0.0);
  switch (id) {
    case EffectId::kGaussianNoise:
      for (auto& v : noise) v = rng.normal();
      break;
    case EffectId::kPinkNoise:
      noise = pink_noise(len, rng);
      break;
    case EffectId::kBabbleNoise: {
      if (!ctx.babble_pool || ctx.babble_pool->empty())
        throw std::runtime_error("babble_noise: no babble pool configured");
      const auto& pool = *ctx.babble_pool;
      for (int talker = 0; talker < 6; ++talker) {
        const AudioClip& src = pool[rng.uniform_int(pool.size())];
        if (src.length() == 0) continue;
        const size_t shift = rng.uniform_int(src.length());
        for (size_t i = 0; i < len; ++i) noise[i] += src.samples[(i + shift) % src.length()];
      }
      break;
    }
    default:
      throw std::logic_error("make_noise: not a noise effect");
  }
  const double nr = rms(noise);
  if (nr > 0.0) {
    const double scale = signal_rms * std::pow(10.0, -snr_db / 20.0) / nr;
    for (auto& v : noise) v *= scale;
  }
  return noise;
}

std::vector<double> codec_roundtrip(const std::vector<double>& x, double bitrate_kbps,
                                    const EffectContext& ctx) {
  if (ctx.codec_command.empty())
    throw std::runtime_error("external_codec: no codec command configured (effect disabled)");
  char in_path[] = "/tmp/waveverify_codec_in_XXXXXX";
  char out_path[] = "/tmp/waveverify_codec_out_XXXXXX";
  int in_fd = mkstemp(in_path);
  int out_fd = mkstemp(out_path);
  if (in_fd < 0 || out_fd < 0) throw std::runtime_error("external_codec: mkstemp failed");
  close(in_fd);
  close(out_fd);
  save_wav(AudioClip(x, ctx.sample_rate), in_path);

  std::string cmd = ctx.codec_command;
  auto subst = [&cmd](const std::string& key, const std::string& value) {
    size_t pos;
    while ((pos = cmd.find(key)) != std::string::npos) cmd.replace(pos, key.size(), value);
  };
  subst("{in}", in_path);
  subst("{out}", out_path);
  subst("{bitrate}", std::to_string(static_cast<int>(bitrate_kbps)));
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    std::remove(in_path);
    std::remove(out_path);
    throw std::runtime_error("external_codec: command failed with status " + std::to_string(rc));
  }
  WavLoadOptions opts;
  opts.allow_resample = true;
  opts.allow_downmix = true;
  AudioClip decoded = load_wav(out_path, ctx.sample_rate, opts);
  std::remove(in_path);
  std::remove(out_path);
  std::vector<double> out(x.size(), 0.0);
  const size_t n = std::min(out.size(), decoded.samples.size());
  for (size_t i = 0; i < n; ++i) out[i] = decoded.samples[i];
  return out;
}

}  // namespace detail

std::pair<AudioClip, PresenceMask> apply_effect(const AudioClip& clip, const PresenceMask& mask,
                                                EffectId id, const EffectParams& params,
                                                RandomSource& rng, const EffectContext& ctx) {
  require_paired(clip, mask);
  EffectContext local = ctx;
  local.sample_rate = clip.sample_rate;
  ad::Tape<double> t;
  ad::Mat<double> sig(1, static_cast<Eigen::Index>(clip.length()));
  for (size_t i = 0; i < clip.length(); ++i) sig(0, static_cast<Eigen::Index>(i)) = clip.samples[i];
  std::vector<double> m = mask.values;
  auto out = effect_signal_tape(t, t.constant(std::move(sig)), m, id, params, rng, local);
  const auto& y = t.val(out);
  std::vector<double> samples(y.cols());
  for (Eigen::Index i = 0; i < y.cols(); ++i) samples[static_cast<size_t>(i)] = y(0, i);
  return {AudioClip(std::move(samples), clip.sample_rate), PresenceMask(std::move(m), mask.hard)};
}

SequenceKind sequence_kind_from_name(const std::string& name) {
  if (name == "reverse") return SequenceKind::kReverse;
  if (name == "rotate") return SequenceKind::kRotate;
  if (name == "shuffle") return SequenceKind::kShuffle;
  throw std::invalid_argument("unknown sequence kind: " + name);
}

const char* sequence_kind_name(SequenceKind k) {
  switch (k) {
    case SequenceKind::kReverse:
      return "reverse";
    case SequenceKind::kRotate:
      return "rotate";
    case SequenceKind::kShuffle:
      return "shuffle";
  }
  throw std::logic_error("sequence_kind_name: unknown kind");
}

SegmentPlan plan_segments(size_t len, int sample_rate, const TemporalAugSpec& spec,
                          RandomSource& rng) {
  if (!(spec.modify_fraction >= 0.0 && spec.modify_fraction <= 1.0))
    throw std::invalid_argument("segment_augment: modify_fraction outside [0,1]");
  if (spec.segment_len_s <= 0.0)
    throw std::invalid_argument("segment_augment: segment length must be positive");
  SegmentPlan plan;
  plan.seg_len = static_cast<int>(std::lround(spec.segment_len_s * sample_rate));
  if (plan.seg_len < 1 || static_cast<size_t>(plan.seg_len) > len)
    throw std::invalid_argument("segment_augment: clip shorter than one segment");
  const size_t segments = len / static_cast<size_t>(plan.seg_len);
  const size_t modify =
      static_cast<size_t>(std::ceil(spec.modify_fraction * static_cast<double>(segments)));
  if (modify == 0) return plan;
  std::vector<int32_t> order(segments);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  plan.segments.assign(order.begin(), order.begin() + static_cast<long>(modify));
  std::sort(plan.segments.begin(), plan.segments.end());
  plan.branch.resize(modify);
  for (auto& b : plan.branch) b = static_cast<int>(rng.uniform_int(3));
  return plan;
}

std::vector<int32_t> sequence_permutation(size_t len, int sample_rate,
                                          const TemporalAugSpec& spec, RandomSource& rng) {
  std::vector<int32_t> perm(len);
  switch (spec.sequence_kind) {
    case SequenceKind::kReverse:
      for (size_t i = 0; i < len; ++i) perm[i] = static_cast<int32_t>(len - 1 - i);
      break;
    case SequenceKind::kRotate: {
      const size_t r = len == 0 ? 0 : rng.uniform_int(len);
      for (size_t i = 0; i < len; ++i) perm[i] = static_cast<int32_t>((i + r) % len);
      break;
    }
    case SequenceKind::kShuffle: {
      const size_t block = static_cast<size_t>(
          std::max<long>(1, std::lround(spec.shuffle_len_s * sample_rate)));
      const size_t blocks = len / block;
      std::vector<int32_t> order(blocks);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      for (size_t b = 0; b < blocks; ++b)
        for (size_t i = 0; i < block; ++i)
          perm[b * block + i] = static_cast<int32_t>(static_cast<size_t>(order[b]) * block + i);
      for (size_t i = blocks * block; i < len; ++i) perm[i] = static_cast<int32_t>(i);
      break;
    }
  }
  return perm;
}

std::pair<AudioClip, PresenceMask> segment_augment(const AudioClip& wm, const AudioClip& original,
                                                   const AudioClip& alternative,
                                                   const PresenceMask& mask,
                                                   const TemporalAugSpec& spec,
                                                   RandomSource& rng) {
  if (wm.length() != original.length())
    throw std::invalid_argument("segment_augment: wm/original length mismatch");
  require_paired(wm, mask);
  ad::Tape<double> t;
  ad::Mat<double> sig(1, static_cast<Eigen::Index>(wm.length()));
  for (size_t i = 0; i < wm.length(); ++i) sig(0, static_cast<Eigen::Index>(i)) = wm.samples[i];
  std::vector<double> m = mask.values;
  auto out = segment_augment_tape(t, t.constant(std::move(sig)), original.samples,
                                  alternative.samples, m, spec, rng, wm.sample_rate);
  const auto& y = t.val(out);
  std::vector<double> samples(y.cols());
  for (Eigen::Index i = 0; i < y.cols(); ++i) samples[static_cast<size_t>(i)] = y(0, i);
  return {AudioClip(std::move(samples), wm.sample_rate), PresenceMask(std::move(m), mask.hard)};
}

std::pair<AudioClip, PresenceMask> sequence_augment(const AudioClip& clip,
                                                    const PresenceMask& mask,
                                                    const TemporalAugSpec& spec,
                                                    RandomSource& rng) {
  require_paired(clip, mask);
  ad::Tape<double> t;
  ad::Mat<double> sig(1, static_cast<Eigen::Index>(clip.length()));
  for (size_t i = 0; i < clip.length(); ++i)
    sig(0, static_cast<Eigen::Index>(i)) = clip.samples[i];
  std::vector<double> m = mask.values;
  auto out =
      sequence_augment_tape(t, t.constant(std::move(sig)), m, spec, rng, clip.sample_rate);
  const auto& y = t.val(out);
  std::vector<double> samples(y.cols());
  for (Eigen::Index i = 0; i < y.cols(); ++i) samples[static_cast<size_t>(i)] = y(0, i);
  return {AudioClip(std::move(samples), clip.sample_rate), PresenceMask(std::move(m), mask.hard)};
}

}  // namespace waveverify
