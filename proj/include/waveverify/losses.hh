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

#ifndef WAVEVERIFY_LOSSES_HH
#define WAVEVERIFY_LOSSES_HH

#include <cmath>
#include <stdexcept>
#include <vector>

#include "waveverify/audio.hh"
#include "waveverify/discriminator.hh"
#include "waveverify/dsp.hh"
#include "waveverify/nn.hh"
#include "waveverify/tape.hh"

namespace waveverify {

// Weighted scheme prioritizing time-domain fidelity on the reconstruction
// side and detection robustness over localization precision on the
// supervision side.
struct LossWeights {
  double wave = 10.0;
  double spec = 1.0;
  double mel = 1.0;
  double det = 10.0;
  double loc = 5.0;
  double gen = 1.0;
  double feat = 2.0;

  void validate() const {
    for (double v : {wave, spec, mel, det, loc, gen, feat})
      if (!(v >= 0.0) || !std::isfinite(v))
        throw std::invalid_argument("loss weights must be finite and nonnegative");
  }
};

// Multi-resolution STFT pairing: the wider window carries the finer mel
// resolution.  Hop is fixed at a quarter window.
struct StftLossSpec {
  std::vector<int> windows = {512, 2048};
  std::vector<int> mel_banks = {80, 150};
  double log_eps = 1e-5;

  int hop(size_t i) const { return windows[i] / 4; }
  void validate() const {
    if (windows.empty() || windows.size() != mel_banks.size())
      throw std::invalid_argument("stft spec: windows/mel_banks length mismatch");
    for (size_t i = 0; i < windows.size(); ++i)
      if (windows[i] < 4 || mel_banks[i] < 1)
        throw std::invalid_argument("stft spec: bad window or bank count");
  }
};

// L_rec = w_wave mean|x - xhat|
//       + w_spec sum_w (mean|M - Mhat| + mean|log M - log Mhat|)
//       + w_mel  sum_w mean|mel M - mel Mhat|
template <typename S>
nn::VarT<S> loss_reconstruction(ad::Tape<S>& t, nn::VarT<S> x, nn::VarT<S> xhat,
                                const LossWeights& w, const StftLossSpec& spec,
                                double sample_rate) {
  if (t.val(x).rows() != 1 || t.val(xhat).rows() != 1 || t.val(x).cols() != t.val(xhat).cols())
    throw std::invalid_argument("loss_reconstruction: length mismatch");
  spec.validate();
  const Eigen::Index T = t.val(x).cols();
  auto total = t.scale(t.mean_all(t.abs_(t.sub(x, xhat))), w.wave);
  for (size_t i = 0; i < spec.windows.size(); ++i) {
    const int win = spec.windows[i];
    if (static_cast<Eigen::Index>(win) > T)
      throw std::invalid_argument("loss_reconstruction: clip shorter than STFT window");
    auto mx = t.stft_mag(x, win, spec.hop(i));
    auto mh = t.stft_mag(xhat, win, spec.hop(i));
    auto lin = t.mean_all(t.abs_(t.sub(mx, mh)));
    auto lx = t.log_(t.add_scalar(mx, spec.log_eps));
    auto lh = t.log_(t.add_scalar(mh, spec.log_eps));
    auto logl = t.mean_all(t.abs_(t.sub(lx, lh)));
    total = t.add(total, t.scale(t.add(lin, logl), w.spec));
    const int bins = win / 2 + 1;
    ad::Mat<S> mel = mel_filterbank(spec.mel_banks[i], bins, win, sample_rate).cast<S>();
    auto mm = t.constant(std::move(mel));
    auto mell = t.mean_all(t.abs_(t.sub(t.matmul(mm, mx), t.matmul(mm, mh))));
    total = t.add(total, t.scale(mell, w.mel));
  }
  return total;
}

// Presence-masked BCE over per-position bit probabilities, normalized by
// the total position count (not the mask mass); an all-zero mask yields 0
// and passes no gradient.
template <typename S>
nn::VarT<S> loss_detection(ad::Tape<S>& t, nn::VarT<S> p_det, const MessageBits& msg,
                           const std::vector<double>& mask) {
  const Eigen::Index n = t.val(p_det).rows();
  const Eigen::Index T = t.val(p_det).cols();
  if (n != static_cast<Eigen::Index>(msg.n()))
    throw std::invalid_argument("loss_detection: bit count mismatch");
  if (T != static_cast<Eigen::Index>(mask.size()))
    throw std::invalid_argument("loss_detection: mask length mismatch");
  ad::Mat<S> target(n, T), m(n, T);
  for (Eigen::Index j = 0; j < T; ++j) {
    const S mm = static_cast<S>(mask[static_cast<size_t>(j)]);
    for (Eigen::Index i = 0; i < n; ++i) {
      target(i, j) = msg.bits[static_cast<size_t>(i)] ? S(1) : S(0);
      m(i, j) = mm;
    }
  }
  return t.bce_masked(p_det, target, m, static_cast<double>(n) * static_cast<double>(T));
}

// Unmasked BCE of the locator probabilities against the ground-truth mask.
template <typename S>
nn::VarT<S> loss_localization(ad::Tape<S>& t, nn::VarT<S> p_loc, const std::vector<double>& truth) {
  const Eigen::Index T = t.val(p_loc).cols();
  if (t.val(p_loc).rows() != 1 || T != static_cast<Eigen::Index>(truth.size()))
    throw std::invalid_argument("loss_localization: length mismatch");
  ad::Mat<S> target(1, T);
  for (Eigen::Index j = 0; j < T; ++j) target(0, j) = static_cast<S>(truth[static_cast<size_t>(j)]);
  ad::Mat<S> ones = ad::Mat<S>::Ones(1, T);
  return t.bce_masked(p_loc, target, ones, static_cast<double>(T));
}

// Least-squares "real" pressure on a set of score maps: mean over scales
// of mean (1 - s)^2.
template <typename S>
nn::VarT<S> lsgan_toward_one(ad::Tape<S>& t, const std::vector<nn::VarT<S>>& scores) {
  if (scores.empty()) throw std::invalid_argument("lsgan: no score maps");
  nn::VarT<S> acc;
  for (size_t i = 0; i < scores.size(); ++i) {
    auto term = t.mean_all(t.square(t.add_scalar(t.scale(scores[i], -1.0), 1.0)));
    acc = i == 0 ? term : t.add(acc, term);
  }
  return t.scale(acc, 1.0 / static_cast<double>(scores.size()));
}

template <typename S>
nn::VarT<S> lsgan_toward_zero(ad::Tape<S>& t, const std::vector<nn::VarT<S>>& scores) {
  if (scores.empty()) throw std::invalid_argument("lsgan: no score maps");
  nn::VarT<S> acc;
  for (size_t i = 0; i < scores.size(); ++i) {
    auto term = t.mean_all(t.square(scores[i]));
    acc = i == 0 ? term : t.add(acc, term);
  }
  return t.scale(acc, 1.0 / static_cast<double>(scores.size()));
}

// Per-layer mean absolute feature gap, averaged over layers.
template <typename S>
nn::VarT<S> feature_match_term(ad::Tape<S>& t, const std::vector<nn::VarT<S>>& real,
                               const std::vector<nn::VarT<S>>& fake) {
  if (real.empty() || real.size() != fake.size())
    throw std::invalid_argument("feature matching: tap count mismatch");
  nn::VarT<S> acc;
  for (size_t i = 0; i < real.size(); ++i) {
    auto term = t.mean_all(t.abs_(t.sub(real[i], fake[i])));
    acc = i == 0 ? term : t.add(acc, term);
  }
  return t.scale(acc, 1.0 / static_cast<double>(real.size()));
}

// Generator-side objective: w_gen E[(1 - D(xhat))^2] + w_feat L_fm.  The
// discriminator runs frozen so gradients reach xhat only.
template <typename S>
nn::VarT<S> adv_generator_loss(ad::Tape<S>& t, const Discriminator<S>& disc, nn::VarT<S> x,
                               nn::VarT<S> xhat, const LossWeights& w) {
  auto real = disc.forward(t, x, /*trainable=*/false);
  auto fake = disc.forward(t, xhat, /*trainable=*/false);
  auto adv = t.scale(lsgan_toward_one(t, fake.scores), w.gen);
  auto fm = t.scale(feature_match_term(t, real.features, fake.features), w.feat);
  return t.add(adv, fm);
}

// Discriminator-side objective: E[(1 - D(x))^2] + E[D(xhat)^2].  Pass the
// watermarked clip as a constant so no gradient leaks into the generator.
template <typename S>
nn::VarT<S> adv_discriminator_loss(ad::Tape<S>& t, const Discriminator<S>& disc, nn::VarT<S> x,
                                   nn::VarT<S> xhat_detached) {
  auto real = disc.forward(t, x, /*trainable=*/true);
  auto fake = disc.forward(t, xhat_detached, /*trainable=*/true);
  return t.add(lsgan_toward_one(t, real.scores), lsgan_toward_zero(t, fake.scores));
}

// Combined objective: rec and adv enter once (clean watermarked clip);
// detection and localization average over the augmentation variants.
template <typename S>
nn::VarT<S> loss_total(ad::Tape<S>& t, nn::VarT<S> rec, nn::VarT<S> adv,
                       const std::vector<nn::VarT<S>>& det_variants,
                       const std::vector<nn::VarT<S>>& loc_variants, const LossWeights& w) {
  if (det_variants.empty() || det_variants.size() != loc_variants.size())
    throw std::invalid_argument("loss_total: need matching nonempty variant lists");
  nn::VarT<S> det, loc;
  for (size_t i = 0; i < det_variants.size(); ++i) {
    det = i == 0 ? det_variants[i] : t.add(det, det_variants[i]);
    loc = i == 0 ? loc_variants[i] : t.add(loc, loc_variants[i]);
  }
  const double inv = 1.0 / static_cast<double>(det_variants.size());
  auto total = t.add(rec, adv);
  total = t.add(total, t.scale(det, w.det * inv));
  return t.add(total, t.scale(loc, w.loc * inv));
}

}  // namespace waveverify

#endif  // WAVEVERIFY_LOSSES_HH
