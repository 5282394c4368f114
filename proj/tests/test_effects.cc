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

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "gradcheck.hh"
#include "waveverify/effects.hh"

using namespace waveverify;

namespace {

AudioClip tone_clip(double freq, size_t n, double amp = 0.5, int rate = 16000) {
  std::vector<double> s(n);
  for (size_t i = 0; i < n; ++i) s[i] = amp * std::sin(2.0 * M_PI * freq * i / rate);
  return AudioClip(std::move(s), rate);
}

AudioClip noise_clip(size_t n, uint64_t seed, double amp = 0.3) {
  RandomSource rng(seed);
  std::vector<double> s(n);
  for (auto& v : s) v = amp * rng.uniform(-1.0, 1.0);
  return AudioClip(std::move(s), 16000);
}

double clip_rms(const AudioClip& c) { return rms(c.samples); }

EffectParams params_of(std::initializer_list<std::pair<const char*, double>> kv) {
  EffectParams p;
  for (const auto& e : kv) p.set(e.first, e.second);
  return p;
}

std::multiset<double> sample_multiset(const std::vector<double>& v) {
  return std::multiset<double>(v.begin(), v.end());
}

}  // namespace

TEST_CASE("effect names round trip") {
  for (EffectId id : all_effects()) {
    CHECK(effect_from_name(effect_name(id)) == id);
  }
  CHECK_THROWS_AS(effect_from_name("reverb"), std::invalid_argument);
  CHECK(default_training_effects().size() == 6);
}

TEST_CASE("identity effect is bit identical") {
  AudioClip clip = noise_clip(3000, 1);
  PresenceMask mask = mask_full(3000, 1);
  RandomSource rng(2);
  auto [out, omask] = apply_effect(clip, mask, EffectId::kIdentity, {}, rng);
  CHECK(out.samples == clip.samples);
  CHECK(omask.values == mask.values);
}

TEST_CASE("speed changes length by the resampling rule") {
  AudioClip clip = tone_clip(440.0, 16000);
  PresenceMask mask = mask_full(16000, 1);
  RandomSource rng(3);
  auto [slow, smask] = apply_effect(clip, mask, EffectId::kSpeed,
                                    params_of({{"speed_factor", 0.8}}), rng);
  CHECK(slow.length() == 20000);
  CHECK(smask.length() == 20000);
  auto [fast, fmask] = apply_effect(clip, mask, EffectId::kSpeed,
                                    params_of({{"speed_factor", 1.25}}), rng);
  CHECK(fast.length() == 12800);
  CHECK(fmask.length() == 12800);
}

TEST_CASE("highpass deep stopband attenuation through the effect path") {
  AudioClip clip = tone_clip(100.0, 8000);
  PresenceMask mask = mask_full(8000, 1);
  RandomSource rng(4);
  auto [out, omask] = apply_effect(clip, mask, EffectId::kHighpass,
                                   params_of({{"cutoff_hz", 3000.0}}), rng);
  CHECK(clip_rms(out) / clip_rms(clip) < 0.05);
  CHECK(omask.values == mask.values);
}

TEST_CASE("lowpass at the top of its legal range stays stable") {
  AudioClip clip = tone_clip(1000.0, 8000);
  PresenceMask mask = mask_full(8000, 1);
  RandomSource rng(5);
  auto [out, omask] = apply_effect(clip, mask, EffectId::kLowpass,
                                   params_of({{"cutoff_hz", 16000.0}}), rng);
  for (double v : out.samples) CHECK(std::isfinite(v));
  CHECK(clip_rms(out) / clip_rms(clip) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("bandpass keeps midband and rejects band edges") {
  PresenceMask mask = mask_full(8000, 1);
  auto run = [&](double freq) {
    RandomSource rng(6);
    AudioClip clip = tone_clip(freq, 8000);
    auto [out, m] = apply_effect(clip, mask, EffectId::kBandpass,
                                 params_of({{"low_hz", 300.0}, {"high_hz", 4000.0}}), rng);
    return clip_rms(out) / clip_rms(clip);
  };
  CHECK(run(1000.0) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(run(50.0) < 0.05);
  CHECK(run(7900.0) < 0.05);
}

TEST_CASE("noise effects hit the requested snr") {
  AudioClip clip = tone_clip(500.0, 16000);
  PresenceMask mask = mask_full(16000, 1);
  for (EffectId id : {EffectId::kGaussianNoise, EffectId::kPinkNoise}) {
    for (double snr : {10.0, 30.0}) {
      RandomSource rng(7);
      auto [out, m] = apply_effect(clip, mask, id, params_of({{"snr_db", snr}}), rng);
      REQUIRE(out.length() == clip.length());
      std::vector<double> diff(out.length());
      for (size_t i = 0; i < diff.size(); ++i) diff[i] = out.samples[i] - clip.samples[i];
      const double measured = 20.0 * std::log10(clip_rms(clip) / rms(diff));
      CHECK(measured == doctest::Approx(snr).epsilon(0.01));
    }
  }
}

TEST_CASE("babble noise needs a pool and then meets snr") {
  AudioClip clip = tone_clip(500.0, 8000);
  PresenceMask mask = mask_full(8000, 1);
  RandomSource rng(8);
  CHECK_THROWS_AS(
      apply_effect(clip, mask, EffectId::kBabbleNoise, params_of({{"snr_db", 20.0}}), rng),
      std::runtime_error);

  std::vector<AudioClip> pool{noise_clip(5000, 41), noise_clip(7000, 42), tone_clip(321.0, 6000)};
  EffectContext ctx;
  ctx.babble_pool = &pool;
  auto [out, m] = apply_effect(clip, mask, EffectId::kBabbleNoise,
                               params_of({{"snr_db", 20.0}}), rng, ctx);
  std::vector<double> diff(out.length());
  for (size_t i = 0; i < diff.size(); ++i) diff[i] = out.samples[i] - clip.samples[i];
  CHECK(20.0 * std::log10(clip_rms(clip) / rms(diff)) == doctest::Approx(20.0).epsilon(0.01));
}

TEST_CASE("quantize8 snaps to the 8-bit grid") {
  AudioClip clip = noise_clip(2000, 9, 0.9);
  PresenceMask mask = mask_full(2000, 1);
  RandomSource rng(10);
  auto [out, m] = apply_effect(clip, mask, EffectId::kQuantize8, {}, rng);
  double max_err = 0.0;
  for (size_t i = 0; i < out.length(); ++i) {
    const double scaled = out.samples[i] * 128.0;
    CHECK(std::abs(scaled - std::round(scaled)) < 1e-9);
    max_err = std::max(max_err, std::abs(out.samples[i] - clip.samples[i]));
  }
  CHECK(max_err <= 0.5 / 128.0 + 1e-9);
}

TEST_CASE("external codec is disabled by default but runs a command when set") {
  AudioClip clip = noise_clip(1500, 11, 0.5);
  PresenceMask mask = mask_full(1500, 1);
  RandomSource rng(12);
  CHECK_THROWS_AS(apply_effect(clip, mask, EffectId::kExternalCodec,
                               params_of({{"bitrate_kbps", 64.0}}), rng),
                  std::runtime_error);

  EffectContext ctx;
  ctx.codec_command = "cp {in} {out}";
  auto [out, m] = apply_effect(clip, mask, EffectId::kExternalCodec,
                               params_of({{"bitrate_kbps", 64.0}}), rng, ctx);
  REQUIRE(out.length() == clip.length());
  double max_err = 0.0;
  for (size_t i = 0; i < out.length(); ++i)
    max_err = std::max(max_err, std::abs(out.samples[i] - clip.samples[i]));
  CHECK(max_err <= 1.0 / 32768.0);
}

TEST_CASE("resample to 8k removes content above the new nyquist") {
  PresenceMask mask = mask_full(4000, 1);
  auto run = [&](double freq) {
    RandomSource rng(13);
    AudioClip clip = tone_clip(freq, 4000);
    auto [out, m] = apply_effect(clip, mask, EffectId::kResample,
                                 params_of({{"target_rate_hz", 8000.0}}), rng);
    CHECK(out.length() == m.length());
    return clip_rms(out) / clip_rms(clip);
  };
  CHECK(run(1000.0) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(run(6000.0) < 0.05);
}

TEST_CASE("resample to the native rate is the identity") {
  AudioClip clip = noise_clip(1000, 14);
  PresenceMask mask = mask_full(1000, 1);
  RandomSource rng(15);
  auto [out, m] = apply_effect(clip, mask, EffectId::kResample,
                               params_of({{"target_rate_hz", 16000.0}}), rng);
  CHECK(out.samples == clip.samples);
}

TEST_CASE("illegal parameters are rejected") {
  AudioClip clip = noise_clip(1000, 16);
  PresenceMask mask = mask_full(1000, 1);
  RandomSource rng(17);
  CHECK_THROWS_AS(apply_effect(clip, mask, EffectId::kHighpass,
                               params_of({{"cutoff_hz", 3500.0}}), rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(apply_effect(clip, mask, EffectId::kSpeed,
                               params_of({{"speed_factor", 0.5}}), rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(apply_effect(clip, mask, EffectId::kResample,
                               params_of({{"target_rate_hz", 12000.0}}), rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(apply_effect(clip, mask, EffectId::kHighpass, {}, rng), std::invalid_argument);
}

TEST_CASE("effects are deterministic per seed and masks stay paired") {
  AudioClip clip = noise_clip(3200, 18);
  PresenceMask mask = mask_full(3200, 1);
  std::vector<AudioClip> pool{noise_clip(4000, 19)};
  EffectContext ctx;
  ctx.babble_pool = &pool;
  ctx.codec_command = "cp {in} {out}";
  for (EffectId id : all_effects()) {
    RandomSource r1(77), r2(77);
    EffectParams p = sample_effect_params(id, r1);
    EffectParams p2 = sample_effect_params(id, r2);
    CHECK(p.values == p2.values);
    auto [a, am] = apply_effect(clip, mask, id, p, r1, ctx);
    auto [b, bm] = apply_effect(clip, mask, id, p2, r2, ctx);
    CHECK(a.samples == b.samples);
    CHECK(am.values == bm.values);
    CHECK(a.length() == am.length());
  }
}

TEST_CASE("sampled parameters always fall in the legal ranges") {
  RandomSource rng(20);
  for (EffectId id : all_effects()) {
    for (int trial = 0; trial < 500; ++trial) {
      EffectParams p = sample_effect_params(id, rng);
      CHECK_NOTHROW(validate_effect_params(id, p));
    }
  }
  for (int trial = 0; trial < 200; ++trial) {
    double v = sample_effect_params(EffectId::kResample, rng).get("target_rate_hz");
    CHECK((v == 8000.0 || v == 16000.0 || v == 32000.0));
    double c = sample_effect_params(EffectId::kHighpass, rng).get("cutoff_hz");
    CHECK(c >= 100.0);
    CHECK(c <= 3000.0);
    double f = sample_effect_params(EffectId::kSpeed, rng).get("speed_factor");
    CHECK(f >= 0.8);
    CHECK(f < 1.25 + 1e-12);
  }
}

TEST_CASE("posterior weights steer parameter sampling") {
  RandomSource rng(21);
  ParamPosterior post;
  post["target_rate_hz"] = {1.0, 0.0, 0.0};
  for (int i = 0; i < 100; ++i)
    CHECK(sample_effect_params(EffectId::kResample, rng, &post).get("target_rate_hz") == 8000.0);

  ParamPosterior top_bin;
  top_bin["cutoff_hz"] = {0, 0, 0, 0, 0, 0, 0, 1.0};
  // top of 8 bins over [100, 3000]: [2637.5, 3000]
  for (int i = 0; i < 100; ++i) {
    double c = sample_effect_params(EffectId::kHighpass, rng, &top_bin).get("cutoff_hz");
    CHECK(c >= 2637.5 - 1e-9);
    CHECK(c <= 3000.0);
  }
}

TEST_CASE("param bins partition the range") {
  ParamRangeSpec spec = effect_param_specs(EffectId::kHighpass)[0];
  CHECK(spec.bins() == 8);
  CHECK(param_bin_index(spec, 100.0) == 0);
  CHECK(param_bin_index(spec, 3000.0) == 7);
  CHECK(param_bin_index(spec, 100.0 + 362.4) == 0);
  CHECK(param_bin_index(spec, 100.0 + 363.0) == 1);
  RandomSource rng(22);
  for (int b = 0; b < 8; ++b) {
    for (int i = 0; i < 20; ++i) CHECK(param_bin_index(spec, sample_param_in_bin(spec, b, rng)) == b);
  }
  ParamRangeSpec discrete = effect_param_specs(EffectId::kResample)[0];
  CHECK(discrete.bins() == 3);
  CHECK(param_bin_index(discrete, 16000.0) == 1);
  CHECK_THROWS_AS(param_bin_index(discrete, 12345.0), std::invalid_argument);
}

TEST_CASE("segment_augment modifies exactly ceil(0.2 S) segments") {
  AudioClip wm = noise_clip(16000, 23, 0.4);
  AudioClip original = noise_clip(16000, 24, 0.4);
  AudioClip alt = noise_clip(18000, 25, 0.4);
  PresenceMask mask = mask_full(16000, 1);
  TemporalAugSpec spec;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    RandomSource rng(seed);
    auto [out, omask] = segment_augment(wm, original, alt, mask, spec, rng);
    REQUIRE(out.length() == 16000);
    size_t zeros = 16000 - omask.count_ones();
    CHECK(zeros == 3200);  // exactly 2 of 10 segments

    // zeroed regions align with whole segments and carry replacement content
    for (int seg = 0; seg < 10; ++seg) {
      const size_t start = static_cast<size_t>(seg) * 1600;
      bool seg_zero = omask.values[start] == 0.0;
      for (size_t i = start; i < start + 1600; ++i)
        CHECK(omask.values[i] == (seg_zero ? 0.0 : 1.0));
      bool is_orig = true, is_silence = true, is_alt = true, untouched = true;
      for (size_t i = start; i < start + 1600; ++i) {
        is_orig = is_orig && out.samples[i] == original.samples[i];
        is_silence = is_silence && out.samples[i] == 0.0;
        is_alt = is_alt && out.samples[i] == alt.samples[i];
        untouched = untouched && out.samples[i] == wm.samples[i];
      }
      if (seg_zero)
        CHECK((is_orig || is_silence || is_alt));
      else
        CHECK(untouched);
    }
  }
}

TEST_CASE("segment_augment boundary behavior") {
  AudioClip wm = noise_clip(4000, 26);
  AudioClip orig = noise_clip(4000, 27);
  AudioClip alt = noise_clip(4000, 28);
  PresenceMask mask = mask_full(4000, 1);
  TemporalAugSpec spec;
  spec.modify_fraction = 0.0;
  RandomSource rng(29);
  auto [out, omask] = segment_augment(wm, orig, alt, mask, spec, rng);
  CHECK(out.samples == wm.samples);
  CHECK(omask.values == mask.values);

  TemporalAugSpec long_seg;
  long_seg.segment_len_s = 1.0;  // 16000 samples > clip
  CHECK_THROWS_AS(segment_augment(wm, orig, alt, mask, long_seg, rng), std::invalid_argument);
}

TEST_CASE("sequence reverse flips clip and mask together") {
  AudioClip clip({0.1, 0.2, 0.3, 0.4}, 16000);
  PresenceMask mask({1, 1, 0, 0}, true);
  TemporalAugSpec spec;
  spec.sequence_kind = SequenceKind::kReverse;
  RandomSource rng(30);
  auto [out, omask] = sequence_augment(clip, mask, spec, rng);
  CHECK(out.samples == std::vector<double>{0.4, 0.3, 0.2, 0.1});
  CHECK(omask.values == std::vector<double>{0, 0, 1, 1});
}

TEST_CASE("sequence augmentations conserve multisets and mask ones") {
  AudioClip clip = noise_clip(19200, 31);  // 1.2 s
  std::vector<double> mvals(19200, 0.0);
  for (size_t i = 4000; i < 12000; ++i) mvals[i] = 1.0;
  PresenceMask mask(mvals, true);
  for (SequenceKind kind :
       {SequenceKind::kReverse, SequenceKind::kRotate, SequenceKind::kShuffle}) {
    for (uint64_t seed = 100; seed < 140; ++seed) {
      TemporalAugSpec spec;
      spec.sequence_kind = kind;
      RandomSource rng(seed);
      auto [out, omask] = sequence_augment(clip, mask, spec, rng);
      REQUIRE(out.length() == clip.length());
      CHECK(sample_multiset(out.samples) == sample_multiset(clip.samples));
      CHECK(omask.count_ones() == mask.count_ones());
    }
  }
}

TEST_CASE("shuffle keeps the trailing remainder in place") {
  // 1.2 s: two 0.5 s blocks shuffle, the 0.2 s tail stays put
  AudioClip clip = noise_clip(19200, 32);
  PresenceMask mask = mask_full(19200, 1);
  TemporalAugSpec spec;
  spec.sequence_kind = SequenceKind::kShuffle;
  RandomSource rng(33);
  auto [out, omask] = sequence_augment(clip, mask, spec, rng);
  for (size_t i = 16000; i < 19200; ++i) CHECK(out.samples[i] == clip.samples[i]);
}

TEST_CASE("gradients flow through differentiable effects") {
  using testutil::gradcheck;
  using testutil::MatD;
  using testutil::TapeD;
  using testutil::VarD;
  RandomSource init(34);
  MatD x = testutil::random_mat(1, 64, init, 0.3);

  for (EffectId id : {EffectId::kHighpass, EffectId::kSpeed}) {
    EffectParams p;
    if (id == EffectId::kHighpass) p.set("cutoff_hz", 1000.0);
    if (id == EffectId::kSpeed) p.set("speed_factor", 1.25);
    double err = gradcheck({&x}, [&](TapeD& t, const std::vector<VarD>& v) {
      RandomSource rng(35);
      std::vector<double> mask(64, 1.0);
      VarD y = effect_signal_tape(t, v[0], mask, id, p, rng);
      return t.mean_all(t.square(y));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("noise and quantize effects pass gradients straight through") {
  using testutil::MatD;
  using testutil::TapeD;
  using testutil::VarD;
  RandomSource init(60);
  for (EffectId id : {EffectId::kGaussianNoise, EffectId::kPinkNoise, EffectId::kQuantize8}) {
    TapeD t;
    MatD x = testutil::random_mat(1, 64, init, 0.3);
    VarD vx = t.input(x);
    RandomSource rng(61);
    std::vector<double> mask(64, 1.0);
    EffectParams p;
    if (id != EffectId::kQuantize8) p.set("snr_db", 15.0);
    VarD y = effect_signal_tape(t, vx, mask, id, p, rng);
    t.backward(t.sum_all(y));
    // the added term is constant w.r.t. the signal: d(sum y)/dx = 1
    CHECK((t.grad(vx).array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("tape augmentation matches the numeric path") {
  AudioClip wm = noise_clip(3200, 36);
  AudioClip orig = noise_clip(3200, 37);
  AudioClip alt = noise_clip(3200, 38);
  PresenceMask mask = mask_full(3200, 1);
  TemporalAugSpec spec;
  spec.sequence_kind = SequenceKind::kRotate;

  RandomSource r_num(55);
  auto [seg_clip, seg_mask] = segment_augment(wm, orig, alt, mask, spec, r_num);
  auto [final_clip, final_mask] = sequence_augment(seg_clip, seg_mask, spec, r_num);

  ad::Tape<float> t;
  ad::Mat<float> sig(1, 3200);
  for (size_t i = 0; i < 3200; ++i) sig(0, static_cast<Eigen::Index>(i)) = static_cast<float>(wm.samples[i]);
  RandomSource r_tape(55);
  std::vector<double> m = mask.values;
  auto v1 = segment_augment_tape(t, t.constant(std::move(sig)), orig.samples, alt.samples, m,
                                 spec, r_tape, 16000);
  auto v2 = sequence_augment_tape(t, v1, m, spec, r_tape, 16000);
  CHECK(m == final_mask.values);
  double max_err = 0.0;
  for (Eigen::Index i = 0; i < 3200; ++i)
    max_err = std::max(max_err, std::abs(static_cast<double>(t.val(v2)(0, i)) -
                                         final_clip.samples[static_cast<size_t>(i)]));
  CHECK(max_err < 1e-6);
}
