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

#include "waveverify/trainer.hh"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "waveverify/eval.hh"
#include "waveverify/wav.hh"

namespace waveverify {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optimizer: bad lr");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("optimizer: betas must lie in [0,1)");
  if (!(eps > 0.0)) throw std::invalid_argument("optimizer: bad eps");
  if (weight_decay < 0.0) throw std::invalid_argument("optimizer: negative weight decay");
  if (!(lr_decay > 0.0) || lr_decay > 1.0)
    throw std::invalid_argument("optimizer: lr_decay must lie in (0,1]");
}

double AdamW::current_lr() const { return cfg.lr * std::pow(cfg.lr_decay, double(steps)); }

void AdamW::step(nn::ParamRegistry<float>& reg) {
  const size_t n = reg.entries.size();
  if (m.empty()) {
    m.resize(n);
    v.resize(n);
    for (size_t i = 0; i < n; ++i) {
      m[i].setZero(reg.entries[i].value->rows(), reg.entries[i].value->cols());
      v[i].setZero(reg.entries[i].value->rows(), reg.entries[i].value->cols());
    }
  }
  if (m.size() != n) throw std::logic_error("AdamW: registry size changed");
  const float lr_t = static_cast<float>(current_lr());
  ++steps;
  const float bc1 = static_cast<float>(1.0 - std::pow(cfg.beta1, double(steps)));
  const float bc2 = static_cast<float>(1.0 - std::pow(cfg.beta2, double(steps)));
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float eps = static_cast<float>(cfg.eps);
  const float wd = static_cast<float>(cfg.weight_decay);
  for (size_t i = 0; i < n; ++i) {
    auto& val = *reg.entries[i].value;
    const auto& g = *reg.entries[i].grad;
    if (g.rows() != val.rows() || g.cols() != val.cols())
      throw std::logic_error("AdamW: gradient not shaped for " + reg.entries[i].name);
    m[i].array() = b1 * m[i].array() + (1.0f - b1) * g.array();
    v[i].array() = b2 * v[i].array() + (1.0f - b2) * g.array().square();
    val.array() -=
        lr_t * ((m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + eps) + wd * val.array());
  }
}

void TrainingConfig::validate() const {
  optimizer.validate();
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
  if (total_iters < 1) throw std::invalid_argument("config: total_iters must be positive");
  if (validation_interval < 0) throw std::invalid_argument("config: bad validation_interval");
  if (variants_per_sample < 1) throw std::invalid_argument("config: need >= 1 variant");
  if (!(clip_seconds > 0.0)) throw std::invalid_argument("config: bad clip_seconds");
  if (sample_rate < 1000) throw std::invalid_argument("config: bad sample_rate");
  if (temporal_prob < 0.0 || temporal_prob > 1.0)
    throw std::invalid_argument("config: temporal_prob outside [0,1]");
  if (val_clips < 1) throw std::invalid_argument("config: val_clips must be positive");
  if (param_success_ber < 0.0 || param_success_ber > 1.0)
    throw std::invalid_argument("config: param_success_ber outside [0,1]");
  weights.validate();
  stft.validate();
  generator.validate();
  detector.validate();
  locator.validate();
  discriminator.validate();
  if (generator.n_bits != detector.n_bits)
    throw std::invalid_argument("config: generator/detector n_bits mismatch");
  const long clip_len = std::lround(clip_seconds * sample_rate);
  for (int w : stft.windows)
    if (clip_len < w) throw std::invalid_argument("config: clip shorter than STFT window");
  if (clip_len < std::max(generator.spec_win, generator.total_stride()))
    throw std::invalid_argument("config: clip shorter than the generator receptive field");
  if (clip_len < 16l << (discriminator.scales - 1))
    throw std::invalid_argument("config: clip shorter than the discriminator receptive field");
}

namespace {

std::string fmt_double(double v) {
  char b[64];
  std::snprintf(b, sizeof(b), "%.17g", v);
  return b;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_effect_names(const std::vector<EffectId>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += effect_name(v[i]);
  }
  return out;
}

long parse_long(const std::string& value, const std::string& key) {
  size_t used = 0;
  long out;
  try {
    out = std::stol(value, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": " + value);
  }
  if (used != value.size())
    throw std::invalid_argument("config: bad integer for " + key + ": " + value);
  return out;
}

double parse_num(const std::string& value, const std::string& key) {
  size_t used = 0;
  double out;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": " + value);
  }
  if (used != value.size())
    throw std::invalid_argument("config: bad number for " + key + ": " + value);
  return out;
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + value);
}

std::vector<std::string> split_csv(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : value) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
  std::vector<int> out;
  for (const auto& part : split_csv(value)) out.push_back(int(parse_long(part, key)));
  if (out.empty()) throw std::invalid_argument("config: empty list for " + key);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string dump_training_config(const TrainingConfig& c) {
  std::ostringstream o;
  o << "seed=" << c.seed << "\n";
  o << "batch_size=" << c.batch_size << "\n";
  o << "total_iters=" << c.total_iters << "\n";
  o << "validation_interval=" << c.validation_interval << "\n";
  o << "variants_per_sample=" << c.variants_per_sample << "\n";
  o << "clip_seconds=" << fmt_double(c.clip_seconds) << "\n";
  o << "sample_rate=" << c.sample_rate << "\n";
  o << "augment=" << (c.augment ? 1 : 0) << "\n";
  o << "temporal_prob=" << fmt_double(c.temporal_prob) << "\n";
  o << "val_clips=" << c.val_clips << "\n";
  o << "param_success_ber=" << fmt_double(c.param_success_ber) << "\n";
  o << "stop_ber=" << fmt_double(c.stop_ber) << "\n";
  o << "stop_miou=" << fmt_double(c.stop_miou) << "\n";
  o << "lr=" << fmt_double(c.optimizer.lr) << "\n";
  o << "beta1=" << fmt_double(c.optimizer.beta1) << "\n";
  o << "beta2=" << fmt_double(c.optimizer.beta2) << "\n";
  o << "eps=" << fmt_double(c.optimizer.eps) << "\n";
  o << "weight_decay=" << fmt_double(c.optimizer.weight_decay) << "\n";
  o << "lr_decay=" << fmt_double(c.optimizer.lr_decay) << "\n";
  o << "lambda_wave=" << fmt_double(c.weights.wave) << "\n";
  o << "lambda_spec=" << fmt_double(c.weights.spec) << "\n";
  o << "lambda_mel=" << fmt_double(c.weights.mel) << "\n";
  o << "lambda_det=" << fmt_double(c.weights.det) << "\n";
  o << "lambda_loc=" << fmt_double(c.weights.loc) << "\n";
  o << "lambda_gen=" << fmt_double(c.weights.gen) << "\n";
  o << "lambda_feat=" << fmt_double(c.weights.feat) << "\n";
  o << "stft_windows=" << join_ints(c.stft.windows) << "\n";
  o << "mel_banks=" << join_ints(c.stft.mel_banks) << "\n";
  o << "stft_log_eps=" << fmt_double(c.stft.log_eps) << "\n";
  o << "sched_w1=" << fmt_double(c.scheduler.w1) << "\n";
  o << "sched_w2=" << fmt_double(c.scheduler.w2) << "\n";
  o << "sched_ema_beta=" << fmt_double(c.scheduler.ema_beta) << "\n";
  o << "sched_laplace_alpha=" << fmt_double(c.scheduler.laplace_alpha) << "\n";
  o << "sched_laplace_beta=" << fmt_double(c.scheduler.laplace_beta) << "\n";
  o << "sched_t_initial=" << fmt_double(c.scheduler.t_initial) << "\n";
  o << "sched_t_final=" << fmt_double(c.scheduler.t_final) << "\n";
  o << "sched_switch_fraction=" << fmt_double(c.scheduler.switch_fraction) << "\n";
  o << "sched_anneal_fraction=" << fmt_double(c.scheduler.anneal_fraction) << "\n";
  o << "sched_total_iters=" << c.scheduler.total_iters << "\n";
  o << "effects=" << join_effect_names(c.effects) << "\n";
  o << "n_bits=" << c.generator.n_bits << "\n";
  o << "gen_channels=" << join_ints(c.generator.channels) << "\n";
  o << "gen_strides=" << join_ints(c.generator.strides) << "\n";
  o << "gen_kernel=" << c.generator.kernel << "\n";
  o << "gen_bands=" << c.generator.bands << "\n";
  o << "gen_mlp_hidden=" << c.generator.mlp_hidden << "\n";
  o << "gen_norm_groups=" << c.generator.norm_groups << "\n";
  o << "gen_spec_win=" << c.generator.spec_win << "\n";
  o << "gen_residual_gain=" << fmt_double(c.generator.residual_gain) << "\n";
  o << "det_channels=" << join_ints(c.detector.channels) << "\n";
  o << "det_strides=" << join_ints(c.detector.strides) << "\n";
  o << "det_kernel=" << c.detector.kernel << "\n";
  o << "det_experts=" << c.detector.experts << "\n";
  o << "det_expert_kernel=" << c.detector.expert_kernel << "\n";
  o << "det_norm_groups=" << c.detector.norm_groups << "\n";
  o << "det_per_timestep_gates=" << (c.detector.per_timestep_gates ? 1 : 0) << "\n";
  o << "loc_channels=" << c.locator.channels << "\n";
  o << "loc_kernel=" << c.locator.kernel << "\n";
  o << "loc_up_kernel=" << c.locator.up_kernel << "\n";
  o << "loc_norm_groups=" << c.locator.norm_groups << "\n";
  o << "disc_scales=" << c.discriminator.scales << "\n";
  o << "disc_channels=" << join_ints(c.discriminator.channels) << "\n";
  o << "disc_kernel=" << c.discriminator.kernel << "\n";
  o << "seg_len_s=" << fmt_double(c.temporal.segment_len_s) << "\n";
  o << "seg_modify_fraction=" << fmt_double(c.temporal.modify_fraction) << "\n";
  o << "seq_shuffle_len_s=" << fmt_double(c.temporal.shuffle_len_s) << "\n";
  o << "model_id=" << c.model_id << "\n";
  o << "trace_path=" << c.trace_path << "\n";
  o << "checkpoint_out=" << c.checkpoint_out << "\n";
  o << "corpus_dir=" << c.corpus_dir << "\n";
  o << "pools=" << c.pools << "\n";
  o << "val_dir=" << c.val_dir << "\n";
  return o.str();
}

TrainingConfig parse_training_config(const std::string& text) {
  TrainingConfig c;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> seen;
  int n_bits = 0;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value, got: " + line);
    const std::string k = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), k) != seen.end())
      throw std::invalid_argument("config: duplicate key " + k);
    seen.push_back(k);

    if (k == "seed") c.seed = uint64_t(parse_long(val, k));
    else if (k == "batch_size") c.batch_size = int(parse_long(val, k));
    else if (k == "total_iters") c.total_iters = int(parse_long(val, k));
    else if (k == "validation_interval") c.validation_interval = int(parse_long(val, k));
    else if (k == "variants_per_sample") c.variants_per_sample = int(parse_long(val, k));
    else if (k == "clip_seconds") c.clip_seconds = parse_num(val, k);
    else if (k == "sample_rate") c.sample_rate = int(parse_long(val, k));
    else if (k == "augment") c.augment = parse_bool(val, k);
    else if (k == "temporal_prob") c.temporal_prob = parse_num(val, k);
    else if (k == "val_clips") c.val_clips = int(parse_long(val, k));
    else if (k == "param_success_ber") c.param_success_ber = parse_num(val, k);
    else if (k == "stop_ber") c.stop_ber = parse_num(val, k);
    else if (k == "stop_miou") c.stop_miou = parse_num(val, k);
    else if (k == "lr") c.optimizer.lr = parse_num(val, k);
    else if (k == "beta1") c.optimizer.beta1 = parse_num(val, k);
    else if (k == "beta2") c.optimizer.beta2 = parse_num(val, k);
    else if (k == "eps") c.optimizer.eps = parse_num(val, k);
    else if (k == "weight_decay") c.optimizer.weight_decay = parse_num(val, k);
    else if (k == "lr_decay") c.optimizer.lr_decay = parse_num(val, k);
    else if (k == "lambda_wave") c.weights.wave = parse_num(val, k);
    else if (k == "lambda_spec") c.weights.spec = parse_num(val, k);
    else if (k == "lambda_mel") c.weights.mel = parse_num(val, k);
    else if (k == "lambda_det") c.weights.det = parse_num(val, k);
    else if (k == "lambda_loc") c.weights.loc = parse_num(val, k);
    else if (k == "lambda_gen") c.weights.gen = parse_num(val, k);
    else if (k == "lambda_feat") c.weights.feat = parse_num(val, k);
    else if (k == "stft_windows") c.stft.windows = parse_int_list(val, k);
    else if (k == "mel_banks") c.stft.mel_banks = parse_int_list(val, k);
    else if (k == "stft_log_eps") c.stft.log_eps = parse_num(val, k);
    else if (k == "sched_w1") c.scheduler.w1 = parse_num(val, k);
    else if (k == "sched_w2") c.scheduler.w2 = parse_num(val, k);
    else if (k == "sched_ema_beta") c.scheduler.ema_beta = parse_num(val, k);
    else if (k == "sched_laplace_alpha") c.scheduler.laplace_alpha = parse_num(val, k);
    else if (k == "sched_laplace_beta") c.scheduler.laplace_beta = parse_num(val, k);
    else if (k == "sched_t_initial") c.scheduler.t_initial = parse_num(val, k);
    else if (k == "sched_t_final") c.scheduler.t_final = parse_num(val, k);
    else if (k == "sched_switch_fraction") c.scheduler.switch_fraction = parse_num(val, k);
    else if (k == "sched_anneal_fraction") c.scheduler.anneal_fraction = parse_num(val, k);
    else if (k == "sched_total_iters") c.scheduler.total_iters = size_t(parse_long(val, k));
    else if (k == "effects") {
      c.effects.clear();
      if (!val.empty())
        for (const auto& name : split_csv(val)) c.effects.push_back(effect_from_name(trim(name)));
    } else if (k == "n_bits") n_bits = int(parse_long(val, k));
    else if (k == "gen_channels") c.generator.channels = parse_int_list(val, k);
    else if (k == "gen_strides") c.generator.strides = parse_int_list(val, k);
    else if (k == "gen_kernel") c.generator.kernel = int(parse_long(val, k));
    else if (k == "gen_bands") c.generator.bands = int(parse_long(val, k));
    else if (k == "gen_mlp_hidden") c.generator.mlp_hidden = int(parse_long(val, k));
    else if (k == "gen_norm_groups") c.generator.norm_groups = int(parse_long(val, k));
    else if (k == "gen_spec_win") c.generator.spec_win = int(parse_long(val, k));
    else if (k == "gen_residual_gain") c.generator.residual_gain = parse_num(val, k);
    else if (k == "det_channels") c.detector.channels = parse_int_list(val, k);
    else if (k == "det_strides") c.detector.strides = parse_int_list(val, k);
    else if (k == "det_kernel") c.detector.kernel = int(parse_long(val, k));
    else if (k == "det_experts") c.detector.experts = int(parse_long(val, k));
    else if (k == "det_expert_kernel") c.detector.expert_kernel = int(parse_long(val, k));
    else if (k == "det_norm_groups") c.detector.norm_groups = int(parse_long(val, k));
    else if (k == "det_per_timestep_gates") c.detector.per_timestep_gates = parse_bool(val, k);
    else if (k == "loc_channels") c.locator.channels = int(parse_long(val, k));
    else if (k == "loc_kernel") c.locator.kernel = int(parse_long(val, k));
    else if (k == "loc_up_kernel") c.locator.up_kernel = int(parse_long(val, k));
    else if (k == "loc_norm_groups") c.locator.norm_groups = int(parse_long(val, k));
    else if (k == "disc_scales") c.discriminator.scales = int(parse_long(val, k));
    else if (k == "disc_channels") c.discriminator.channels = parse_int_list(val, k);
    else if (k == "disc_kernel") c.discriminator.kernel = int(parse_long(val, k));
    else if (k == "seg_len_s") c.temporal.segment_len_s = parse_num(val, k);
    else if (k == "seg_modify_fraction") c.temporal.modify_fraction = parse_num(val, k);
    else if (k == "seq_shuffle_len_s") c.temporal.shuffle_len_s = parse_num(val, k);
    else if (k == "model_id") c.model_id = val;
    else if (k == "trace_path") c.trace_path = val;
    else if (k == "checkpoint_out") c.checkpoint_out = val;
    else if (k == "corpus_dir") c.corpus_dir = val;
    else if (k == "pools") c.pools = val;
    else if (k == "val_dir") c.val_dir = val;
    else throw std::invalid_argument("config: unknown key " + k);
  }
  if (n_bits > 0) {
    c.generator.n_bits = n_bits;
    c.detector.n_bits = n_bits;
  }
  return c;
}

TrainingConfig load_training_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_training_config(buf.str());
}

void Corpus::validate() const {
  if (pools.empty()) throw std::invalid_argument("corpus: no pools");
  double sum = 0.0;
  for (const auto& p : pools) {
    if (p.clips.empty()) throw std::invalid_argument("corpus: empty pool " + p.name);
    if (!(p.weight > 0.0)) throw std::invalid_argument("corpus: nonpositive weight for " + p.name);
    sum += p.weight;
    for (const auto& clip : p.clips) clip.validate();
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("corpus: pool weights must sum to 1");
  for (const auto& clip : val) clip.validate();
}

Corpus Corpus::from_clips(std::vector<AudioClip> clips, std::vector<AudioClip> val) {
  Corpus c;
  c.pools.push_back({"default", 1.0, std::move(clips)});
  c.val = std::move(val);
  return c;
}

namespace {

std::vector<AudioClip> load_wav_dir(const std::string& dir, int expected_rate) {
  namespace fs = std::filesystem;
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav")
      paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  std::vector<AudioClip> clips;
  for (const auto& p : paths) clips.push_back(load_wav(p, expected_rate));
  return clips;
}

}  // namespace

Corpus load_corpus(const CorpusSpec& spec, int expected_rate) {
  if (spec.pools.empty()) throw std::invalid_argument("corpus spec: no pools");
  Corpus c;
  for (const auto& p : spec.pools)
    c.pools.push_back({p.name, p.weight, load_wav_dir(p.dir, expected_rate)});
  if (!spec.val_dir.empty()) c.val = load_wav_dir(spec.val_dir, expected_rate);
  c.validate();
  return c;
}

AudioClip sample_training_clip(const Corpus& corpus, size_t samples, RandomSource& rng) {
  if (samples == 0) throw std::invalid_argument("sample_training_clip: zero length");
  size_t pool_idx = corpus.pools.size() - 1;
  double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < corpus.pools.size(); ++i) {
    acc += corpus.pools[i].weight;
    if (u < acc) {
      pool_idx = i;
      break;
    }
  }
  const auto& pool = corpus.pools[pool_idx];
  const AudioClip& src = pool.clips[rng.uniform_int(pool.clips.size())];
  AudioClip out;
  out.sample_rate = src.sample_rate;
  out.samples.resize(samples);
  if (src.length() >= samples) {
    const size_t start = rng.uniform_int(src.length() - samples + 1);
    std::copy(src.samples.begin() + long(start), src.samples.begin() + long(start + samples),
              out.samples.begin());
  } else {
    for (size_t i = 0; i < samples; ++i) out.samples[i] = src.samples[i % src.length()];
  }
  return out;
}

std::string step_metrics_json(const StepMetrics& m) {
  nlohmann::json j;
  j["kind"] = "step";
  j["iter"] = m.iteration;
  j["loss"] = m.loss_total;
  j["rec"] = m.loss_rec;
  j["adv"] = m.loss_adv;
  j["det"] = m.loss_det;
  j["loc"] = m.loss_loc;
  j["disc"] = m.loss_disc;
  j["ber"] = m.ber;
  j["miou"] = m.miou;
  j["lr"] = m.lr;
  if (!m.effects.empty()) {
    nlohmann::json fx = nlohmann::json::object();
    for (const auto& e : m.effects) fx[e.effect] = {{"ber", e.ber}, {"miou", e.miou}};
    j["effects"] = std::move(fx);
  }
  return j.dump();
}

std::string validation_metrics_json(const ValidationMetrics& v) {
  nlohmann::json j;
  j["kind"] = "val";
  j["iter"] = v.iteration;
  j["ber"] = v.ber;
  j["miou"] = v.miou;
  j["score"] = v.score;
  return j.dump();
}

TrainerState::TrainerState(const TrainingConfig& config) : cfg(config) {
  cfg.validate();
  RandomSource root(cfg.seed);
  RandomSource gen_rng = root.child(101);
  RandomSource det_rng = root.child(102);
  RandomSource loc_rng = root.child(103);
  RandomSource disc_rng = root.child(104);
  gen.init(cfg.generator, gen_rng);
  det.init(cfg.detector, det_rng);
  loc.init(cfg.locator, loc_rng);
  disc.init(cfg.discriminator, disc_rng);
  gen.register_params(gen_side, "gen");
  det.register_params(gen_side, "det");
  loc.register_params(gen_side, "loc");
  disc.register_params(disc_side, "disc");
  opt_gen.cfg = cfg.optimizer;
  opt_disc.cfg = cfg.optimizer;
  SchedulerConfig sc = cfg.scheduler;
  if (sc.total_iters == 0) sc.total_iters = size_t(cfg.total_iters);
  scheduler = init_scheduler(cfg.effects.empty() ? default_training_effects() : cfg.effects, sc);
}

Checkpoint make_checkpoint(const TrainerState& s) {
  Checkpoint ck;
  ck.config = s.cfg;
  ck.iteration = s.iteration;
  for (const auto& e : s.gen_side.entries) ck.tensors[e.name] = *e.value;
  for (const auto& e : s.disc_side.entries) ck.tensors[e.name] = *e.value;
  ck.opt_gen.steps = s.opt_gen.steps;
  for (size_t i = 0; i < s.opt_gen.m.size(); ++i) {
    ck.opt_gen.m[s.gen_side.entries[i].name] = s.opt_gen.m[i];
    ck.opt_gen.v[s.gen_side.entries[i].name] = s.opt_gen.v[i];
  }
  ck.opt_disc.steps = s.opt_disc.steps;
  for (size_t i = 0; i < s.opt_disc.m.size(); ++i) {
    ck.opt_disc.m[s.disc_side.entries[i].name] = s.opt_disc.m[i];
    ck.opt_disc.v[s.disc_side.entries[i].name] = s.opt_disc.v[i];
  }
  ck.scheduler_json = scheduler_to_json(s.scheduler);
  ck.trace = s.trace;
  ck.best_val_score = s.best_val_score;
  ck.best_val_iter = s.best_val_iter;
  return ck;
}

namespace {

void restore_registry(nn::ParamRegistry<float>& reg,
                      const std::map<std::string, Eigen::MatrixXf>& tensors) {
  for (auto& e : reg.entries) {
    auto it = tensors.find(e.name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + e.name);
    if (it->second.rows() != e.value->rows() || it->second.cols() != e.value->cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + e.name);
    *e.value = it->second;
  }
}

void restore_optimizer(AdamW& opt, const nn::ParamRegistry<float>& reg, const OptStateBlob& blob) {
  opt.steps = blob.steps;
  opt.m.clear();
  opt.v.clear();
  if (blob.m.empty()) return;
  opt.m.resize(reg.entries.size());
  opt.v.resize(reg.entries.size());
  for (size_t i = 0; i < reg.entries.size(); ++i) {
    const auto& name = reg.entries[i].name;
    auto mi = blob.m.find(name);
    auto vi = blob.v.find(name);
    if (mi == blob.m.end() || vi == blob.v.end())
      throw std::runtime_error("checkpoint: missing optimizer state for " + name);
    opt.m[i] = mi->second;
    opt.v[i] = vi->second;
  }
}

}  // namespace

void restore_state(TrainerState& s, const Checkpoint& ck) {
  restore_registry(s.gen_side, ck.tensors);
  restore_registry(s.disc_side, ck.tensors);
  restore_optimizer(s.opt_gen, s.gen_side, ck.opt_gen);
  restore_optimizer(s.opt_disc, s.disc_side, ck.opt_disc);
  s.scheduler = scheduler_from_json(ck.scheduler_json);
  s.iteration = ck.iteration;
  s.trace = ck.trace;
  s.best_val_score = ck.best_val_score;
  s.best_val_iter = ck.best_val_iter;
}

std::unique_ptr<TrainerState> state_from_checkpoint(const Checkpoint& ck) {
  auto s = std::make_unique<TrainerState>(ck.config);
  restore_state(*s, ck);
  return s;
}

namespace {

constexpr char kCkptMagic[8] = {'W', 'V', 'C', 'K', 'P', 'T', '0', '1'};

struct ByteWriter {
  std::string out;

  void raw(const void* p, size_t n) { out.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void i64(int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void matf(const Eigen::MatrixXf& m) {
    u32(uint32_t(m.rows()));
    u32(uint32_t(m.cols()));
    raw(m.data(), sizeof(float) * size_t(m.size()));
  }
};

struct ByteReader {
  const std::string& in;
  size_t pos = 0;

  explicit ByteReader(const std::string& s) : in(s) {}
  void need(size_t n) const {
    if (pos + n > in.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  void raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, in.data() + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  int64_t i64() {
    int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const uint64_t n = u64();
    need(size_t(n));
    std::string s(in.data() + pos, size_t(n));
    pos += size_t(n);
    return s;
  }
  Eigen::MatrixXf matf() {
    const uint32_t r = u32();
    const uint32_t c = u32();
    Eigen::MatrixXf m(r, c);
    raw(m.data(), sizeof(float) * size_t(m.size()));
    return m;
  }
};

void write_opt_blob(ByteWriter& w, const OptStateBlob& blob) {
  if (blob.m.size() != blob.v.size())
    throw std::logic_error("checkpoint: optimizer moment maps out of sync");
  w.i64(blob.steps);
  w.u64(blob.m.size());
  for (const auto& [name, m] : blob.m) {
    w.str(name);
    w.matf(m);
    w.matf(blob.v.at(name));
  }
}

OptStateBlob read_opt_blob(ByteReader& r) {
  OptStateBlob blob;
  blob.steps = r.i64();
  const uint64_t n = r.u64();
  for (uint64_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    blob.m[name] = r.matf();
    blob.v[name] = r.matf();
  }
  return blob;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.raw(kCkptMagic, sizeof(kCkptMagic));
  w.str(dump_training_config(ck.config));
  w.u64(uint64_t(ck.iteration));
  w.i64(ck.best_val_iter);
  w.f64(ck.best_val_score);
  w.str(ck.scheduler_json);
  w.u64(ck.tensors.size());
  for (const auto& [name, m] : ck.tensors) {
    w.str(name);
    w.matf(m);
  }
  write_opt_blob(w, ck.opt_gen);
  write_opt_blob(w, ck.opt_disc);
  w.u64(ck.trace.size());
  for (const auto& line : ck.trace) w.str(line);
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  ByteReader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  Checkpoint ck;
  ck.config = parse_training_config(r.str());
  ck.iteration = int64_t(r.u64());
  ck.best_val_iter = r.i64();
  ck.best_val_score = r.f64();
  ck.scheduler_json = r.str();
  const uint64_t n_tensors = r.u64();
  for (uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    ck.tensors[name] = r.matf();
  }
  ck.opt_gen = read_opt_blob(r);
  ck.opt_disc = read_opt_blob(r);
  const uint64_t n_trace = r.u64();
  for (uint64_t i = 0; i < n_trace; ++i) ck.trace.push_back(r.str());
  if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return deserialize_checkpoint(buf.str());
}

StepMetrics train_step(TrainerState& s, const std::vector<AudioClip>& batch,
                       const std::vector<MessageBits>& messages, RandomSource& rng,
                       const EffectContext& ctx) {
  const auto& cfg = s.cfg;
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (messages.size() != batch.size())
    throw std::invalid_argument("train_step: one message per clip required");
  const size_t len = batch[0].length();
  for (const auto& clip : batch)
    if (clip.length() != len) throw std::invalid_argument("train_step: unequal clip lengths");

  EffectContext fx_ctx = ctx;
  fx_ctx.sample_rate = cfg.sample_rate;
  const int B = int(batch.size());
  const int V = cfg.augment ? cfg.variants_per_sample : 1;
  const double inv_b = 1.0 / double(B);
  const double pre_lr = s.opt_gen.current_lr();

  s.gen_side.zero_grads();
  StepMetrics out;
  out.iteration = s.iteration + 1;
  out.lr = pre_lr;
  double ber_sum = 0.0, miou_sum = 0.0;
  std::map<EffectId, std::array<double, 3>> fx_stats;  // ber sum, miou sum, count
  std::vector<ad::Mat<float>> wm_values(static_cast<size_t>(B));

  for (int b = 0; b < B; ++b) {
    ad::Tape<float> t;
    auto x = t.constant(clip_to_row<float>(batch[size_t(b)]));
    auto msg_col = t.constant(message_to_pm1<float>(messages[size_t(b)]));
    auto eo = s.gen.embed(t, x, msg_col, /*trainable=*/true);
    wm_values[size_t(b)] = t.val(eo.watermarked);

    auto rec = loss_reconstruction(t, x, eo.watermarked, cfg.weights, cfg.stft,
                                   double(cfg.sample_rate));
    nn::VarT<float> adv;
    if (cfg.weights.gen > 0.0 || cfg.weights.feat > 0.0)
      adv = adv_generator_loss(t, s.disc, x, eo.watermarked, cfg.weights);
    else
      adv = t.constant(ad::Mat<float>::Zero(1, 1));

    std::vector<nn::VarT<float>> det_losses, loc_losses;
    for (int vi = 0; vi < V; ++vi) {
      RandomSource vr = rng.child(uint64_t(b) * 64 + uint64_t(vi));
      std::vector<double> mask(len, 1.0);
      auto y = eo.watermarked;
      bool effected = false;
      EffectId eff = EffectId::kIdentity;
      EffectParams params;
      if (cfg.augment) {
        const double u = vr.uniform();
        if (u < cfg.temporal_prob / 2.0) {
          const auto& alt = batch[size_t((b + 1) % B)].samples;
          y = segment_augment_tape(t, y, batch[size_t(b)].samples, alt, mask, cfg.temporal, vr,
                                   cfg.sample_rate);
        } else if (u < cfg.temporal_prob) {
          TemporalAugSpec ts = cfg.temporal;
          const SequenceKind kinds[3] = {SequenceKind::kReverse, SequenceKind::kRotate,
                                         SequenceKind::kShuffle};
          ts.sequence_kind = kinds[vr.uniform_int(3)];
          y = sequence_augment_tape(t, y, mask, ts, vr, cfg.sample_rate);
        }
        auto picks = sample_effects(s.scheduler, 1, vr);
        eff = picks[0].first;
        params = picks[0].second;
        y = effect_signal_tape(t, y, mask, eff, params, vr, fx_ctx);
        effected = true;
      }

      auto dout = s.det.forward(t, y, /*trainable=*/true);
      det_losses.push_back(loss_detection(t, dout.probs, messages[size_t(b)], mask));
      auto lout = s.loc.forward(t, y, /*trainable=*/true);
      loc_losses.push_back(loss_localization(t, lout, mask));

      const DecodedBits decoded = decode_bit_probs(t.val(dout.probs), &mask);
      const double v_ber = ber(decoded.bits, messages[size_t(b)]);
      PresenceMask pred;
      pred.hard = false;
      const auto& lp = t.val(lout);
      pred.values.resize(size_t(lp.cols()));
      for (Eigen::Index i = 0; i < lp.cols(); ++i) pred.values[size_t(i)] = double(lp(0, i));
      PresenceMask truth;
      truth.values = mask;
      const double v_miou = miou(pred, truth);
      ber_sum += v_ber;
      miou_sum += v_miou;
      if (effected) {
        auto& st = fx_stats[eff];
        st[0] += v_ber;
        st[1] += v_miou;
        st[2] += 1.0;
        record_param_outcome(s.scheduler, eff, params, v_ber <= cfg.param_success_ber);
      }
    }

    auto item_total = loss_total(t, rec, adv, det_losses, loc_losses, cfg.weights);
    out.loss_total += double(t.val(item_total)(0, 0)) * inv_b;
    out.loss_rec += double(t.val(rec)(0, 0)) * inv_b;
    out.loss_adv += double(t.val(adv)(0, 0)) * inv_b;
    for (const auto& d : det_losses) out.loss_det += double(t.val(d)(0, 0)) * inv_b / V;
    for (const auto& l : loc_losses) out.loss_loc += double(t.val(l)(0, 0)) * inv_b / V;
    t.backward(t.scale(item_total, inv_b));
  }
  out.ber = ber_sum / double(B * V);
  out.miou = miou_sum / double(B * V);

  if (!std::isfinite(out.loss_total) || !std::isfinite(out.loss_rec) ||
      !std::isfinite(out.loss_adv) || !std::isfinite(out.loss_det) ||
      !std::isfinite(out.loss_loc)) {
    char msg[256];
    std::snprintf(msg, sizeof(msg),
                  "train_step: non-finite loss at iter %lld (total=%g rec=%g adv=%g det=%g "
                  "loc=%g lr=%g)",
                  static_cast<long long>(s.iteration + 1), out.loss_total, out.loss_rec,
                  out.loss_adv, out.loss_det, out.loss_loc, pre_lr);
    throw std::runtime_error(msg);
  }
  s.opt_gen.step(s.gen_side);

  s.disc_side.zero_grads();
  for (int b = 0; b < B; ++b) {
    ad::Tape<float> td;
    auto x = td.constant(clip_to_row<float>(batch[size_t(b)]));
    auto xh = td.constant(wm_values[size_t(b)]);
    auto dl = adv_discriminator_loss(td, s.disc, x, xh);
    out.loss_disc += double(td.val(dl)(0, 0)) * inv_b;
    td.backward(td.scale(dl, inv_b));
  }
  if (!std::isfinite(out.loss_disc)) {
    char msg[128];
    std::snprintf(msg, sizeof(msg), "train_step: non-finite discriminator loss at iter %lld (%g)",
                  static_cast<long long>(s.iteration + 1), out.loss_disc);
    throw std::runtime_error(msg);
  }
  s.opt_disc.step(s.disc_side);

  if (cfg.augment) {
    std::vector<EffectFeedback> feedback;
    for (const auto& [eff, st] : fx_stats) {
      feedback.push_back({eff, st[0] / st[2], st[1] / st[2]});
      out.effects.push_back({effect_name(eff), st[0] / st[2], st[1] / st[2]});
    }
    update_scheduler(s.scheduler, feedback);
  }
  ++s.iteration;
  return out;
}

namespace {

AudioClip crop_clip(const AudioClip& src, size_t samples) {
  AudioClip out;
  out.sample_rate = src.sample_rate;
  out.samples.resize(samples);
  for (size_t i = 0; i < samples; ++i)
    out.samples[i] = src.samples[src.length() >= samples ? i : i % src.length()];
  return out;
}

}  // namespace

ValidationMetrics run_validation(TrainerState& s, const Corpus& corpus, RandomSource& rng) {
  const auto& cfg = s.cfg;
  const size_t clip_len = size_t(std::lround(cfg.clip_seconds * cfg.sample_rate));
  std::vector<AudioClip> clips;
  if (!corpus.val.empty()) {
    const size_t n = std::min(size_t(cfg.val_clips), corpus.val.size());
    for (size_t i = 0; i < n; ++i) clips.push_back(crop_clip(corpus.val[i], clip_len));
  } else {
    for (int i = 0; i < cfg.val_clips; ++i)
      clips.push_back(sample_training_clip(corpus, clip_len, rng));
  }
  ValidationMetrics out;
  out.iteration = s.iteration;
  for (const auto& clip : clips) {
    const MessageBits msg = random_message(size_t(cfg.generator.n_bits), rng);
    const EmbedResult er = embed_clip(s.gen, clip, msg);
    const DecodedBits decoded = detect_clip(s.det, er.watermarked);
    out.ber += ber(decoded.bits, msg);
    const PresenceMask located = locate_clip(s.loc, er.watermarked);
    out.miou += miou(located, mask_full(clip.length(), 1));
  }
  out.ber /= double(clips.size());
  out.miou /= double(clips.size());
  out.score = out.ber + (1.0 - out.miou);
  return out;
}

namespace {

TrainResult train_loop(TrainerState& s, const Corpus& corpus, const EffectContext& ctx) {
  corpus.validate();
  const auto& cfg = s.cfg;
  const size_t clip_len = size_t(std::lround(cfg.clip_seconds * cfg.sample_rate));
  const RandomSource root(cfg.seed);
  Checkpoint best;
  bool have_best = false;
  bool stopped = false;

  // The trace file is written incrementally so long runs can be monitored.
  std::ofstream trace_file;
  if (!cfg.trace_path.empty()) {
    trace_file.open(cfg.trace_path, std::ios::trunc);
    if (!trace_file) throw std::runtime_error("cannot open trace file: " + cfg.trace_path);
    for (const auto& line : s.trace) trace_file << line << "\n";
    trace_file.flush();
  }
  auto emit = [&](const std::string& line) {
    s.trace.push_back(line);
    if (trace_file.is_open()) trace_file << line << "\n";
  };

  for (int64_t k = s.iteration; k < cfg.total_iters && !stopped; ++k) {
    set_scheduler_iter(s.scheduler, size_t(k));
    const RandomSource it = root.child(uint64_t(k));
    RandomSource batch_rng = it.child(0);
    RandomSource msg_rng = it.child(1);
    RandomSource step_rng = it.child(2);
    RandomSource val_rng = it.child(3);

    std::vector<AudioClip> batch;
    std::vector<MessageBits> messages;
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(sample_training_clip(corpus, clip_len, batch_rng));
      messages.push_back(random_message(size_t(cfg.generator.n_bits), msg_rng));
    }
    const StepMetrics m = train_step(s, batch, messages, step_rng, ctx);
    emit(step_metrics_json(m));

    if (cfg.validation_interval > 0 && (k + 1) % cfg.validation_interval == 0) {
      ValidationMetrics v = run_validation(s, corpus, val_rng);
      v.iteration = k + 1;
      emit(validation_metrics_json(v));
      trace_file.flush();
      if (v.score < s.best_val_score) {
        s.best_val_score = v.score;
        s.best_val_iter = v.iteration;
        best = make_checkpoint(s);
        have_best = true;
      }
      if (cfg.stop_ber >= 0.0 && v.ber <= cfg.stop_ber && v.miou >= cfg.stop_miou) stopped = true;
    }
  }

  TrainResult result;
  result.final = make_checkpoint(s);
  result.best = have_best ? std::move(best) : result.final;
  result.trace = s.trace;
  if (!cfg.checkpoint_out.empty()) save_checkpoint(result.best, cfg.checkpoint_out);
  return result;
}

}  // namespace

TrainResult train(const TrainingConfig& cfg, const Corpus& corpus, const EffectContext& ctx) {
  TrainerState s(cfg);
  return train_loop(s, corpus, ctx);
}

TrainResult resume_training(const Checkpoint& ck, const Corpus& corpus, const EffectContext& ctx) {
  auto s = state_from_checkpoint(ck);
  return train_loop(*s, corpus, ctx);
}

}  // namespace waveverify
