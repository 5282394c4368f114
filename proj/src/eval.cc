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

#include "waveverify/eval.hh"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace waveverify {

double ber(const MessageBits& pred, const MessageBits& truth) {
  if (pred.n() != truth.n()) throw std::invalid_argument("ber: bit count mismatch");
  if (pred.n() == 0) throw std::invalid_argument("ber: empty message");
  size_t wrong = 0;
  for (size_t i = 0; i < pred.n(); ++i)
    if ((pred.bits[i] != 0) != (truth.bits[i] != 0)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(pred.n());
}

double miou(const PresenceMask& pred, const PresenceMask& truth) {
  if (pred.length() != truth.length()) throw std::invalid_argument("miou: length mismatch");
  if (pred.length() == 0) throw std::invalid_argument("miou: empty mask");
  const PresenceMask p = pred.binarized();
  const PresenceMask t = truth.binarized();
  double total = 0.0;
  for (int cls = 0; cls < 2; ++cls) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < p.length(); ++i) {
      const bool in_p = (p.values[i] != 0.0) == (cls == 1);
      const bool in_t = (t.values[i] != 0.0) == (cls == 1);
      if (in_p && in_t) ++inter;
      if (in_p || in_t) ++uni;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / 2.0;
}

std::pair<double, double> tpr_fpr(const std::vector<double>& scores,
                                  const std::vector<int>& labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("tpr_fpr: size mismatch");
  size_t pos = 0, neg = 0, tp = 0, fp = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool fired = scores[i] >= threshold;
    if (labels[i] != 0) {
      ++pos;
      if (fired) ++tp;
    } else {
      ++neg;
      if (fired) ++fp;
    }
  }
  if (pos == 0) throw std::invalid_argument("tpr_fpr: no watermarked clips");
  if (neg == 0) throw std::invalid_argument("tpr_fpr: no clean clips");
  return {static_cast<double>(tp) / static_cast<double>(pos),
          static_cast<double>(fp) / static_cast<double>(neg)};
}

double sisnr(const AudioClip& reference, const AudioClip& estimate) {
  if (reference.length() != estimate.length())
    throw std::invalid_argument("sisnr: length mismatch");
  double rr = 0.0, er = 0.0;
  for (size_t i = 0; i < reference.length(); ++i) {
    rr += reference.samples[i] * reference.samples[i];
    er += estimate.samples[i] * reference.samples[i];
  }
  if (rr == 0.0) throw std::invalid_argument("sisnr: zero reference");
  const double alpha = er / rr;
  double target = 0.0, residual = 0.0;
  for (size_t i = 0; i < reference.length(); ++i) {
    const double s = alpha * reference.samples[i];
    const double e = estimate.samples[i] - s;
    target += s * s;
    residual += e * e;
  }
  if (residual == 0.0) return target > 0.0 ? 100.0 : -100.0;
  if (target == 0.0) return -100.0;
  return std::clamp(10.0 * std::log10(target / residual), -100.0, 100.0);
}

double detection_score(const PresenceMask& located) {
  if (located.length() == 0) throw std::invalid_argument("detection_score: empty mask");
  double sum = 0.0;
  for (double v : located.values) sum += v;
  return sum / static_cast<double>(located.length());
}

EvalReport evaluate(const EvalHooks& hooks, const std::vector<AudioClip>& corpus, int n_bits,
                    const std::vector<std::pair<EffectId, EffectParams>>& effects,
                    uint64_t seed, const std::string& model_id, const EffectContext& ctx) {
  if (!hooks.embed || !hooks.detect || !hooks.locate)
    throw std::invalid_argument("evaluate: missing model hooks");
  if (corpus.empty()) throw std::invalid_argument("evaluate: empty corpus");
  if (effects.empty()) throw std::invalid_argument("evaluate: empty effect list");
  if (n_bits <= 0) throw std::invalid_argument("evaluate: n_bits must be positive");
  for (const auto& [id, params] : effects) validate_effect_params(id, params);

  EvalReport report;
  report.clip_count = corpus.size();
  report.model_id = model_id;
  report.seed = seed;
  const RandomSource root(seed);

  for (size_t ei = 0; ei < effects.size(); ++ei) {
    const auto& [id, params] = effects[ei];
    EvalRow row;
    row.effect = id;
    row.params = params;
    std::vector<double> scores;
    std::vector<int> labels;
    double sum_ber = 0.0, sum_miou = 0.0, sum_sisnr = 0.0;

    for (size_t ci = 0; ci < corpus.size(); ++ci) {
      RandomSource clip_rng = root.child(ei).child(ci);
      RandomSource fx_wm = clip_rng.child(1);
      RandomSource fx_clean = clip_rng.child(2);
      const AudioClip& clip = corpus[ci];
      const MessageBits msg = random_message(static_cast<size_t>(n_bits), clip_rng);
      const AudioClip wm = hooks.embed(clip, msg);
      sum_sisnr += sisnr(clip, wm);

      auto [wm_fx, mask_fx] =
          apply_effect(wm, mask_full(wm.length(), 1), id, params, fx_wm, ctx);
      auto [clean_fx, ignored] =
          apply_effect(clip, mask_full(clip.length(), 1), id, params, fx_clean, ctx);
      (void)ignored;

      sum_ber += ber(hooks.detect(wm_fx), msg);
      const PresenceMask loc_wm = hooks.locate(wm_fx);
      sum_miou += miou(loc_wm, mask_fx);
      scores.push_back(detection_score(loc_wm));
      labels.push_back(1);
      scores.push_back(detection_score(hooks.locate(clean_fx)));
      labels.push_back(0);
    }

    const double n = static_cast<double>(corpus.size());
    std::tie(row.tpr, row.fpr) = tpr_fpr(scores, labels);
    row.mean_ber = sum_ber / n;
    row.mean_miou = sum_miou / n;
    row.mean_sisnr = sum_sisnr / n;
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

std::string params_string(const EffectParams& params) {
  std::ostringstream out;
  bool first = true;
  for (const auto& [k, v] : params.values) {
    if (!first) out << ",";
    first = false;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    out << k << "=" << buf;
  }
  return out.str();
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["model_id"] = model_id;
  j["seed"] = seed;
  j["clip_count"] = clip_count;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r;
    r["effect"] = effect_name(row.effect);
    r["params"] = nlohmann::json::object();
    for (const auto& [k, v] : row.params.values) r["params"][k] = v;
    r["tpr"] = row.tpr;
    r["fpr"] = row.fpr;
    r["mean_ber"] = row.mean_ber;
    r["mean_miou"] = row.mean_miou;
    r["mean_sisnr"] = row.mean_sisnr;
    j["rows"].push_back(std::move(r));
  }
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  size_t name_w = 6, param_w = 6;
  for (const auto& row : rows) {
    name_w = std::max(name_w, std::string(effect_name(row.effect)).size());
    param_w = std::max(param_w, params_string(row.params).size());
  }
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s  %-*s  %6s  %6s  %6s  %6s  %8s\n",
                static_cast<int>(name_w), "effect", static_cast<int>(param_w), "params",
                "TPR", "FPR", "BER", "MIoU", "SI-SNR");
  out << line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-*s  %-*s  %6.3f  %6.3f  %6.3f  %6.3f  %8.2f\n",
                  static_cast<int>(name_w), effect_name(row.effect),
                  static_cast<int>(param_w), params_string(row.params).c_str(), row.tpr,
                  row.fpr, row.mean_ber, row.mean_miou, row.mean_sisnr);
    out << line;
  }
  std::snprintf(line, sizeof(line), "clips per effect: %zu  model: %s  seed: %llu\n",
                clip_count, model_id.c_str(),
                static_cast<unsigned long long>(seed));
  out << line;
  return out.str();
}

}  // namespace waveverify
