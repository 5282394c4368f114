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

#include "waveverify/scheduler.hh"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace waveverify {

namespace {

void recompute_probs(SchedulerState& state) {
  const auto& c = state.config;
  const size_t n = state.effects.size();
  std::vector<double> score(n);
  double max_score = -1e300;
  for (size_t i = 0; i < n; ++i) {
    score[i] = (c.w1 * state.ber_ema[i] + c.w2 * (1.0 - state.miou_ema[i])) / state.temperature;
    max_score = std::max(max_score, score[i]);
  }
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    state.probs[i] = std::exp(score[i] - max_score);
    z += state.probs[i];
  }
  for (size_t i = 0; i < n; ++i) state.probs[i] /= z;
}

ParamBinStats& bin_stats(SchedulerState& state, EffectId effect, const ParamRangeSpec& spec) {
  auto& per_param = state.bins[static_cast<int>(effect)];
  auto it = per_param.find(spec.name);
  if (it == per_param.end()) {
    ParamBinStats fresh;
    fresh.success.assign(spec.bins(), 0);
    fresh.total.assign(spec.bins(), 0);
    it = per_param.emplace(spec.name, std::move(fresh)).first;
  }
  return it->second;
}

}  // namespace

size_t SchedulerState::index_of(EffectId id) const {
  for (size_t i = 0; i < effects.size(); ++i)
    if (effects[i] == id) return i;
  throw std::invalid_argument("effect not managed by this scheduler: " + std::string(effect_name(id)));
}

SchedulerState init_scheduler(const std::vector<EffectId>& effects, SchedulerConfig config) {
  if (effects.empty()) throw std::invalid_argument("scheduler needs at least one effect");
  SchedulerState state;
  state.effects = effects;
  state.config = config;
  state.probs.assign(effects.size(), 1.0 / static_cast<double>(effects.size()));
  state.ber_ema.assign(effects.size(), 0.5);
  state.miou_ema.assign(effects.size(), 0.5);
  state.temperature = config.t_initial;
  state.exploitation = false;
  return state;
}

void set_scheduler_iter(SchedulerState& state, size_t iter) {
  const auto& c = state.config;
  if (c.total_iters == 0) {
    state.exploitation = false;
    state.temperature = c.t_initial;
    return;
  }
  const double switch_at = c.switch_fraction * static_cast<double>(c.total_iters);
  state.exploitation = static_cast<double>(iter) >= switch_at;
  if (!state.exploitation) {
    state.temperature = c.t_initial;
    return;
  }
  const double span = c.anneal_fraction * static_cast<double>(c.total_iters);
  double f = span > 0.0 ? (static_cast<double>(iter) - switch_at) / span : 1.0;
  f = std::clamp(f, 0.0, 1.0);
  state.temperature = c.t_initial + f * (c.t_final - c.t_initial);
}

std::vector<std::pair<EffectId, EffectParams>> sample_effects(const SchedulerState& state,
                                                              size_t k, RandomSource& rng) {
  std::vector<std::pair<EffectId, EffectParams>> out;
  out.reserve(k);
  for (size_t draw = 0; draw < k; ++draw) {
    const double u = rng.uniform();
    double acc = 0.0;
    size_t pick = state.effects.size() - 1;
    for (size_t i = 0; i < state.effects.size(); ++i) {
      acc += state.probs[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    const EffectId id = state.effects[pick];
    if (state.exploitation) {
      ParamPosterior posterior = param_posterior(state, id);
      out.emplace_back(id, sample_effect_params(id, rng, &posterior));
    } else {
      out.emplace_back(id, sample_effect_params(id, rng, nullptr));
    }
  }
  return out;
}

void update_scheduler(SchedulerState& state, const std::vector<EffectFeedback>& feedback) {
  const double b = state.config.ema_beta;
  for (const auto& f : feedback) {
    const size_t i = state.index_of(f.effect);
    state.ber_ema[i] = b * state.ber_ema[i] + (1.0 - b) * f.ber;
    state.miou_ema[i] = b * state.miou_ema[i] + (1.0 - b) * f.miou;
  }
  recompute_probs(state);
}

void record_param_outcome(SchedulerState& state, EffectId effect, const EffectParams& params,
                          bool success) {
  for (const auto& spec : effect_param_specs(effect)) {
    if (!params.has(spec.name)) continue;
    const int bin = param_bin_index(spec, params.get(spec.name));
    ParamBinStats& stats = bin_stats(state, effect, spec);
    stats.total[bin] += 1;
    if (success) stats.success[bin] += 1;
  }
}

double laplace_rate(int64_t success, int64_t total, const SchedulerConfig& config) {
  return (static_cast<double>(success) + config.laplace_alpha) /
         (static_cast<double>(total) + config.laplace_alpha + config.laplace_beta);
}

ParamPosterior param_posterior(const SchedulerState& state, EffectId effect) {
  ParamPosterior posterior;
  const auto effect_it = state.bins.find(static_cast<int>(effect));
  for (const auto& spec : effect_param_specs(effect)) {
    std::vector<double> weights(spec.bins(), 0.5);
    if (effect_it != state.bins.end()) {
      auto param_it = effect_it->second.find(spec.name);
      if (param_it != effect_it->second.end()) {
        const ParamBinStats& stats = param_it->second;
        for (int b = 0; b < spec.bins(); ++b)
          weights[b] = 1.0 - laplace_rate(stats.success[b], stats.total[b], state.config);
      }
    }
    double z = 0.0;
    for (double w : weights) z += w;
    for (double& w : weights) w /= z;
    posterior[spec.name] = std::move(weights);
  }
  return posterior;
}

std::string scheduler_to_json(const SchedulerState& state) {
  nlohmann::json j;
  j["effects"] = nlohmann::json::array();
  for (EffectId id : state.effects) j["effects"].push_back(effect_name(id));
  j["probs"] = state.probs;
  j["ber_ema"] = state.ber_ema;
  j["miou_ema"] = state.miou_ema;
  j["temperature"] = state.temperature;
  j["exploitation"] = state.exploitation;
  const auto& c = state.config;
  j["config"] = {{"w1", c.w1},
                 {"w2", c.w2},
                 {"ema_beta", c.ema_beta},
                 {"laplace_alpha", c.laplace_alpha},
                 {"laplace_beta", c.laplace_beta},
                 {"t_initial", c.t_initial},
                 {"t_final", c.t_final},
                 {"switch_fraction", c.switch_fraction},
                 {"anneal_fraction", c.anneal_fraction},
                 {"total_iters", c.total_iters}};
  nlohmann::json bins = nlohmann::json::object();
  for (const auto& [effect_int, per_param] : state.bins) {
    nlohmann::json pj = nlohmann::json::object();
    for (const auto& [name, stats] : per_param)
      pj[name] = {{"success", stats.success}, {"total", stats.total}};
    bins[effect_name(static_cast<EffectId>(effect_int))] = std::move(pj);
  }
  j["bins"] = std::move(bins);
  return j.dump(2);
}

SchedulerState scheduler_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SchedulerState state;
  for (const auto& name : j.at("effects")) state.effects.push_back(effect_from_name(name.get<std::string>()));
  state.probs = j.at("probs").get<std::vector<double>>();
  state.ber_ema = j.at("ber_ema").get<std::vector<double>>();
  state.miou_ema = j.at("miou_ema").get<std::vector<double>>();
  state.temperature = j.at("temperature").get<double>();
  state.exploitation = j.at("exploitation").get<bool>();
  const auto& cj = j.at("config");
  auto& c = state.config;
  c.w1 = cj.at("w1").get<double>();
  c.w2 = cj.at("w2").get<double>();
  c.ema_beta = cj.at("ema_beta").get<double>();
  c.laplace_alpha = cj.at("laplace_alpha").get<double>();
  c.laplace_beta = cj.at("laplace_beta").get<double>();
  c.t_initial = cj.at("t_initial").get<double>();
  c.t_final = cj.at("t_final").get<double>();
  c.switch_fraction = cj.at("switch_fraction").get<double>();
  c.anneal_fraction = cj.at("anneal_fraction").get<double>();
  c.total_iters = cj.at("total_iters").get<size_t>();
  for (const auto& [effect_key, per_param] : j.at("bins").items()) {
    const int effect_int = static_cast<int>(effect_from_name(effect_key));
    for (const auto& [name, sj] : per_param.items()) {
      ParamBinStats stats;
      stats.success = sj.at("success").get<std::vector<int64_t>>();
      stats.total = sj.at("total").get<std::vector<int64_t>>();
      state.bins[effect_int][name] = std::move(stats);
    }
  }
  if (state.probs.size() != state.effects.size() || state.ber_ema.size() != state.effects.size() ||
      state.miou_ema.size() != state.effects.size())
    throw std::invalid_argument("scheduler state arrays disagree with the effect list");
  return state;
}

}  // namespace waveverify
