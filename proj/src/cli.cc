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

#include "waveverify/cli.hh"

#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "waveverify/eval.hh"
#include "waveverify/trainer.hh"
#include "waveverify/wav.hh"

namespace waveverify {

namespace {

double parse_number_strict(const std::string& value, const std::string& what) {
  size_t used = 0;
  double out;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("bad number for " + what + ": " + value);
  }
  if (used != value.size()) throw std::runtime_error("bad number for " + what + ": " + value);
  return out;
}

EffectParams params_from_kv(const std::vector<std::string>& kvs) {
  EffectParams p;
  for (const auto& kv : kvs) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("expected key=value effect parameter, got: " + kv);
    p.set(kv.substr(0, eq), parse_number_strict(kv.substr(eq + 1), kv.substr(0, eq)));
  }
  return p;
}

// "name" or "name:k=v,k=v" -> (effect, params).
std::pair<EffectId, EffectParams> parse_effect_spec(const std::string& text) {
  const size_t colon = text.find(':');
  const std::string name = text.substr(0, colon);
  std::vector<std::string> kvs;
  if (colon != std::string::npos) {
    std::string rest = text.substr(colon + 1), cur;
    for (char c : rest) {
      if (c == ',') {
        kvs.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) kvs.push_back(cur);
  }
  return {effect_from_name(name), params_from_kv(kvs)};
}

CorpusSpec corpus_spec_from_config(const TrainingConfig& cfg) {
  CorpusSpec spec;
  if (!cfg.pools.empty()) {
    std::string cur;
    std::vector<std::string> entries;
    for (char c : cfg.pools) {
      if (c == ',') {
        entries.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) entries.push_back(cur);
    for (const auto& e : entries) {
      const size_t c1 = e.find(':');
      const size_t c2 = e.find(':', c1 == std::string::npos ? c1 : c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        throw std::runtime_error("pools entry must be name:weight:dir, got: " + e);
      spec.pools.push_back({e.substr(0, c1),
                            e.substr(c2 + 1),
                            parse_number_strict(e.substr(c1 + 1, c2 - c1 - 1), "pool weight")});
    }
  } else if (!cfg.corpus_dir.empty()) {
    spec.pools.push_back({"default", cfg.corpus_dir, 1.0});
  } else {
    throw std::runtime_error("config must set corpus_dir or pools");
  }
  spec.val_dir = cfg.val_dir;
  return spec;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::unique_ptr<TrainerState> load_models(const std::string& path) {
  return state_from_checkpoint(load_checkpoint(path));
}

int cmd_embed(const std::string& in, const std::string& bits, const std::string& model,
              const std::string& out) {
  auto s = load_models(model);
  const AudioClip clip = load_wav(in, s->cfg.sample_rate);
  const MessageBits msg = message_from_hex(bits, size_t(s->cfg.generator.n_bits));
  const EmbedResult er = embed_clip(s->gen, clip, msg);
  save_wav(er.watermarked, out);
  std::printf("embedded %d bits into %zu samples -> %s\n", s->cfg.generator.n_bits,
              clip.length(), out.c_str());
  return 0;
}

int cmd_detect(const std::string& in, const std::string& model, const std::string& out,
               const std::string& region_path) {
  auto s = load_models(model);
  const AudioClip clip = load_wav(in, s->cfg.sample_rate);
  PresenceMask region;
  const PresenceMask* region_ptr = nullptr;
  if (!region_path.empty()) {
    region = load_mask_json(region_path);
    require_paired(clip, region);
    region_ptr = &region;
  }
  const DecodedBits decoded = detect_clip(s->det, clip, region_ptr);
  nlohmann::json j;
  j["bits"] = message_to_hex(decoded.bits);
  j["per_bit_confidence"] = decoded.confidence;
  const std::string text = j.dump(2) + "\n";
  if (out.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_text(out, text);
  return 0;
}

int cmd_locate(const std::string& in, const std::string& model, const std::string& out) {
  auto s = load_models(model);
  const AudioClip clip = load_wav(in, s->cfg.sample_rate);
  const PresenceMask mask = locate_clip(s->loc, clip);
  if (out.empty()) {
    nlohmann::json j = mask.values;
    std::fputs((j.dump() + "\n").c_str(), stdout);
  } else {
    save_mask_json(mask, out);
  }
  std::fprintf(stderr, "watermark score %.4f over %zu samples\n", detection_score(mask),
               mask.length());
  return 0;
}

int cmd_attack(const std::string& in, const std::string& out, const std::string& effect,
               const std::vector<std::string>& params_kv, const std::string& mask_in,
               const std::string& mask_out, uint64_t seed) {
  const EffectId id = effect_from_name(effect);
  const EffectParams params = params_from_kv(params_kv);
  AudioClip clip = load_wav(in, 0);
  PresenceMask mask =
      mask_in.empty() ? mask_full(clip.length(), 1) : load_mask_json(mask_in);
  require_paired(clip, mask);
  EffectContext ctx;
  ctx.sample_rate = clip.sample_rate;
  RandomSource rng(seed);
  auto [fx, fx_mask] = apply_effect(clip, mask, id, params, rng, ctx);
  save_wav(fx, out);
  if (!mask_out.empty()) save_mask_json(fx_mask, mask_out);
  std::printf("%s: %zu -> %zu samples\n", effect.c_str(), clip.length(), fx.length());
  return 0;
}

int cmd_train(const std::string& config_path, bool seed_set, uint64_t seed,
              const std::string& out) {
  TrainingConfig cfg = load_training_config(config_path);
  if (seed_set) cfg.seed = seed;
  if (!out.empty()) cfg.checkpoint_out = out;
  if (cfg.checkpoint_out.empty())
    throw std::runtime_error("set checkpoint_out in the config or pass --out");
  const Corpus corpus = load_corpus(corpus_spec_from_config(cfg), cfg.sample_rate);
  const TrainResult result = train(cfg, corpus);
  for (auto it = result.trace.rbegin(); it != result.trace.rend(); ++it) {
    if (it->find("\"kind\":\"val\"") != std::string::npos) {
      std::printf("last validation: %s\n", it->c_str());
      break;
    }
  }
  std::printf("trained %lld iterations; best checkpoint (iter %lld) -> %s\n",
              static_cast<long long>(result.final.iteration),
              static_cast<long long>(result.best.iteration), cfg.checkpoint_out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& model,
                 const std::vector<std::string>& effect_specs, const std::string& out,
                 uint64_t seed, int max_clips) {
  const TrainingConfig cfg = load_training_config(config_path);
  auto s = load_models(model);
  const Corpus corpus = load_corpus(corpus_spec_from_config(cfg), s->cfg.sample_rate);
  std::vector<AudioClip> clips = corpus.val;
  if (clips.empty())
    for (const auto& pool : corpus.pools)
      clips.insert(clips.end(), pool.clips.begin(), pool.clips.end());
  if (max_clips > 0 && clips.size() > size_t(max_clips)) clips.resize(size_t(max_clips));

  std::vector<std::pair<EffectId, EffectParams>> effects;
  for (const auto& spec : effect_specs) effects.push_back(parse_effect_spec(spec));
  if (effects.empty()) effects.push_back({EffectId::kIdentity, {}});

  EvalHooks hooks;
  hooks.embed = [&s](const AudioClip& clip, const MessageBits& msg) {
    return embed_clip(s->gen, clip, msg).watermarked;
  };
  hooks.detect = [&s](const AudioClip& clip) { return detect_clip(s->det, clip).bits; };
  hooks.locate = [&s](const AudioClip& clip) { return locate_clip(s->loc, clip); };

  EffectContext ctx;
  ctx.sample_rate = s->cfg.sample_rate;
  const EvalReport report = evaluate(hooks, clips, s->cfg.generator.n_bits, effects, seed,
                                     s->cfg.model_id, ctx);
  std::fputs(report.to_table().c_str(), stdout);
  if (!out.empty()) write_text(out, report.to_json() + "\n");
  return 0;
}

int cmd_scheduler_report(const std::string& model, const std::string& out) {
  const Checkpoint ck = load_checkpoint(model);
  const std::string text = ck.scheduler_json + "\n";
  if (out.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_text(out, text);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"WaveVerify: speech watermark embedding, detection and localization"};
  app.require_subcommand(1);

  std::string in, out, model, bits, config, region, effect, mask_in, mask_out;
  std::vector<std::string> params_kv, effect_specs;
  uint64_t seed = 0;
  int max_clips = 0;

  auto add_seed = [&seed](CLI::App* cmd) {
    return cmd->add_option("--seed", seed, "random seed")->default_val(0);
  };

  auto* embed = app.add_subcommand("embed", "Embed a hex payload into a WAV clip");
  embed->add_option("--in", in, "input WAV")->required();
  embed->add_option("--bits", bits, "payload as hex, MSB first")->required();
  embed->add_option("--model", model, "checkpoint file")->required();
  embed->add_option("--out", out, "output WAV")->required();
  add_seed(embed);

  auto* detect = app.add_subcommand("detect", "Decode the payload from a WAV clip");
  detect->add_option("--in", in, "input WAV")->required();
  detect->add_option("--model", model, "checkpoint file")->required();
  detect->add_option("--out", out, "output JSON (default stdout)");
  detect->add_option("--region", region, "mask JSON restricting bit aggregation");
  add_seed(detect);

  auto* locate = app.add_subcommand("locate", "Locate watermarked samples in a WAV clip");
  locate->add_option("--in", in, "input WAV")->required();
  locate->add_option("--model", model, "checkpoint file")->required();
  locate->add_option("--out", out, "mask JSON (default stdout)");
  add_seed(locate);

  auto* attack = app.add_subcommand("attack", "Apply a named audio effect");
  attack->add_option("--in", in, "input WAV")->required();
  attack->add_option("--out", out, "output WAV")->required();
  attack->add_option("--effect", effect, "effect name")->required();
  attack->add_option("--param", params_kv, "effect parameter key=value (repeatable)");
  attack->add_option("--mask-in", mask_in, "input mask JSON (default all ones)");
  attack->add_option("--mask-out", mask_out, "write the transformed mask JSON");
  add_seed(attack);

  auto* train_cmd = app.add_subcommand("train", "Run the training loop");
  train_cmd->add_option("--config", config, "flat key=value config file")->required();
  train_cmd->add_option("--out", out, "checkpoint output path (overrides config)");
  auto* train_seed = add_seed(train_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "Run the robustness evaluation harness");
  eval_cmd->add_option("--config", config, "config file naming the corpus")->required();
  eval_cmd->add_option("--model", model, "checkpoint file")->required();
  eval_cmd->add_option("--effect", effect_specs,
                       "effect spec name[:k=v,k=v] (repeatable; default identity)");
  eval_cmd->add_option("--out", out, "report JSON path");
  eval_cmd->add_option("--clips", max_clips, "cap the number of evaluated clips");
  add_seed(eval_cmd);

  auto* sched = app.add_subcommand("scheduler-report", "Dump the scheduler state of a checkpoint");
  sched->add_option("--model", model, "checkpoint file")->required();
  sched->add_option("--out", out, "output JSON (default stdout)");
  add_seed(sched);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (embed->parsed()) return cmd_embed(in, bits, model, out);
    if (detect->parsed()) return cmd_detect(in, model, out, region);
    if (locate->parsed()) return cmd_locate(in, model, out);
    if (attack->parsed()) return cmd_attack(in, out, effect, params_kv, mask_in, mask_out, seed);
    if (train_cmd->parsed()) return cmd_train(config, train_seed->count() > 0, seed, out);
    if (eval_cmd->parsed())
      return cmd_evaluate(config, model, effect_specs, out, seed, max_clips);
    if (sched->parsed()) return cmd_scheduler_report(model, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "waveverify: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace waveverify
