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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "waveverify/trainer.hh"
#include "waveverify/wav.hh"

using namespace waveverify;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  std::vector<std::string> full;
  full.push_back("waveverify");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : full) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

const std::string& work_dir() {
  static const std::string dir = [] {
    std::string tmpl = (fs::temp_directory_path() / "wv_cli_XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (mkdtemp(buf.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    return std::string(buf.data());
  }();
  return dir;
}

std::string path_in(const std::string& name) { return work_dir() + "/" + name; }

AudioClip noise_clip(uint64_t seed, size_t len) {
  RandomSource rng(seed);
  AudioClip c;
  c.sample_rate = 16000;
  c.samples.resize(len);
  for (auto& v : c.samples) v = rng.uniform(-0.5, 0.5);
  return c;
}

TrainingConfig cli_cfg() {
  TrainingConfig c;
  c.batch_size = 2;
  c.total_iters = 3;
  c.validation_interval = 3;
  c.variants_per_sample = 1;
  c.clip_seconds = 0.064;  // 1024 samples
  c.seed = 11;
  c.augment = false;
  c.val_clips = 2;
  c.stft.windows = {64, 256};
  c.stft.mel_banks = {8, 12};
  c.generator.n_bits = 4;
  c.generator.channels = {8, 8};
  c.generator.strides = {2, 2};
  c.generator.bands = 4;
  c.generator.mlp_hidden = 16;
  c.generator.norm_groups = 4;
  c.generator.spec_win = 8;
  c.detector.n_bits = 4;
  c.detector.channels = {8, 8};
  c.detector.strides = {2, 2};
  c.detector.experts = 2;
  c.detector.norm_groups = 2;
  c.locator.channels = 8;
  c.locator.norm_groups = 2;
  c.discriminator.channels = {4, 8, 8};
  c.temporal.segment_len_s = 0.016;
  c.temporal.shuffle_len_s = 0.016;
  c.model_id = "cli-test";
  return c;
}

// Trains a tiny model through the CLI once; later tests reuse the artifacts.
const std::string& trained_checkpoint() {
  static const std::string ckpt = [] {
    const std::string corpus = path_in("corpus");
    fs::create_directories(corpus);
    for (int i = 0; i < 6; ++i)
      save_wav(noise_clip(300 + uint64_t(i), 1600), corpus + "/clip" + std::to_string(i) + ".wav");

    TrainingConfig cfg = cli_cfg();
    cfg.corpus_dir = corpus;
    cfg.checkpoint_out = path_in("model.ckpt");
    cfg.trace_path = path_in("trace.jsonl");
    std::ofstream(path_in("run.cfg")) << dump_training_config(cfg);

    REQUIRE(run_cli({"train", "--config", path_in("run.cfg")}) == 0);
    REQUIRE(fs::exists(cfg.checkpoint_out));
    return cfg.checkpoint_out;
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("cli: usage errors exit with 2, help with 0") {
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"frobnicate"}) == 2);
  CHECK(run_cli({"embed"}) == 2);                      // missing required flags
  CHECK(run_cli({"embed", "--bogus-flag", "1"}) == 2);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"attack", "--help"}) == 0);
}

TEST_CASE("cli: attack identity is a lossless wav roundtrip") {
  const std::string in = path_in("atk_in.wav");
  const std::string out = path_in("atk_out.wav");
  save_wav(noise_clip(1, 2000), in);
  CHECK(run_cli({"attack", "--in", in, "--out", out, "--effect", "identity", "--seed", "3"}) == 0);
  const AudioClip a = load_wav(in, 16000);
  const AudioClip b = load_wav(out, 16000);
  REQUIRE(a.length() == b.length());
  for (size_t i = 0; i < a.length(); ++i) CHECK(a.samples[i] == b.samples[i]);
}

TEST_CASE("cli: attack applies parameters and writes the transformed mask") {
  const std::string in = path_in("noise_in.wav");
  const std::string out = path_in("noise_out.wav");
  const std::string mask_out = path_in("noise_mask.json");
  save_wav(noise_clip(2, 2000), in);
  CHECK(run_cli({"attack", "--in", in, "--out", out, "--effect", "gaussian_noise", "--param",
                 "snr_db=20", "--mask-out", mask_out, "--seed", "9"}) == 0);
  const AudioClip a = load_wav(in, 16000);
  const AudioClip b = load_wav(out, 16000);
  REQUIRE(a.length() == b.length());
  double max_diff = 0;
  for (size_t i = 0; i < a.length(); ++i)
    max_diff = std::max(max_diff, std::abs(a.samples[i] - b.samples[i]));
  CHECK(max_diff > 1e-4);
  const PresenceMask mask = load_mask_json(mask_out);
  REQUIRE(mask.length() == a.length());
  for (double v : mask.values) CHECK(v == 1.0);
}

TEST_CASE("cli: attack rejects unknown effects and malformed parameters at runtime") {
  const std::string in = path_in("bad_in.wav");
  save_wav(noise_clip(3, 400), in);
  CHECK(run_cli({"attack", "--in", in, "--out", path_in("x.wav"), "--effect", "reverb"}) == 1);
  CHECK(run_cli({"attack", "--in", in, "--out", path_in("x.wav"), "--effect", "gaussian_noise",
                 "--param", "snr_db=abc"}) == 1);
  CHECK(run_cli({"attack", "--in", in, "--out", path_in("x.wav"), "--effect", "gaussian_noise",
                 "--param", "snr"}) == 1);
  CHECK(run_cli({"attack", "--in", path_in("does_not_exist.wav"), "--out", path_in("x.wav"),
                 "--effect", "identity"}) == 1);
}

TEST_CASE("cli: train produces a checkpoint and a trace file") {
  trained_checkpoint();
  std::ifstream trace(path_in("trace.jsonl"));
  REQUIRE(trace.good());
  int steps = 0, vals = 0;
  std::string line;
  while (std::getline(trace, line)) {
    if (line.find("\"kind\":\"step\"") != std::string::npos) ++steps;
    if (line.find("\"kind\":\"val\"") != std::string::npos) ++vals;
  }
  CHECK(steps == 3);
  CHECK(vals == 1);
}

TEST_CASE("cli: embed preserves duration and detect emits bits with confidences") {
  const std::string& ckpt = trained_checkpoint();
  const std::string in = path_in("corpus/clip0.wav");
  const std::string wm = path_in("wm.wav");
  CHECK(run_cli({"embed", "--in", in, "--bits", "A", "--model", ckpt, "--out", wm}) == 0);
  const AudioClip orig = load_wav(in, 16000);
  const AudioClip marked = load_wav(wm, 16000);
  CHECK(marked.length() == orig.length());
  CHECK(marked.sample_rate == orig.sample_rate);

  const std::string det_json = path_in("det.json");
  CHECK(run_cli({"detect", "--in", wm, "--model", ckpt, "--out", det_json}) == 0);
  std::ifstream f(det_json);
  nlohmann::json j = nlohmann::json::parse(f);
  REQUIRE(j.contains("bits"));
  REQUIRE(j.contains("per_bit_confidence"));
  const std::string bits = j["bits"].get<std::string>();
  CHECK(bits.size() == 1);  // 4 bits, one hex digit
  const std::vector<double> conf = j["per_bit_confidence"].get<std::vector<double>>();
  REQUIRE(conf.size() == 4);
  for (double c : conf) {
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
  CHECK(run_cli({"detect", "--in", wm, "--model", ckpt}) == 0);  // stdout path
}

TEST_CASE("cli: detect accepts a region mask and validates its length") {
  const std::string& ckpt = trained_checkpoint();
  const std::string wm = path_in("wm.wav");
  const AudioClip marked = load_wav(wm, 16000);
  const std::string region = path_in("region.json");
  save_mask_json(mask_full(marked.length(), 1), region);
  CHECK(run_cli({"detect", "--in", wm, "--model", ckpt, "--region", region,
                 "--out", path_in("det_region.json")}) == 0);
  save_mask_json(mask_full(marked.length() / 2, 1), region);
  CHECK(run_cli({"detect", "--in", wm, "--model", ckpt, "--region", region}) == 1);
}

TEST_CASE("cli: locate writes a mask json spanning every input sample") {
  const std::string& ckpt = trained_checkpoint();
  const std::string wm = path_in("wm.wav");
  const std::string out = path_in("loc.json");
  CHECK(run_cli({"locate", "--in", wm, "--model", ckpt, "--out", out}) == 0);
  const PresenceMask mask = load_mask_json(out);
  CHECK(mask.length() == load_wav(wm, 16000).length());
  for (double v : mask.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("cli: scheduler-report dumps the checkpoint scheduler state") {
  const std::string& ckpt = trained_checkpoint();
  const std::string out = path_in("sched.json");
  CHECK(run_cli({"scheduler-report", "--model", ckpt, "--out", out}) == 0);
  std::ifstream f(out);
  nlohmann::json j = nlohmann::json::parse(f);
  CHECK(j.is_object());
  CHECK(!j.empty());
}

TEST_CASE("cli: evaluate writes a per-effect report over the corpus") {
  const std::string& ckpt = trained_checkpoint();
  const std::string report = path_in("report.json");
  CHECK(run_cli({"evaluate", "--config", path_in("run.cfg"), "--model", ckpt, "--effect",
                 "identity", "--effect", "gaussian_noise:snr_db=20", "--out", report, "--clips",
                 "4", "--seed", "5"}) == 0);
  std::ifstream f(report);
  nlohmann::json j = nlohmann::json::parse(f);
  CHECK(j["clip_count"].get<int>() == 4);
  CHECK(j["model_id"].get<std::string>() == "cli-test");
  REQUIRE(j["rows"].size() == 2);
  CHECK(j["rows"][0]["effect"].get<std::string>() == "identity");
  CHECK(j["rows"][1]["effect"].get<std::string>() == "gaussian_noise");
  CHECK(j["rows"][1]["params"]["snr_db"].get<double>() == 20.0);
}

TEST_CASE("cli: train honors --seed and --out overrides") {
  trained_checkpoint();
  const std::string ckpt2 = path_in("model2.ckpt");
  CHECK(run_cli({"train", "--config", path_in("run.cfg"), "--seed", "12", "--out", ckpt2}) == 0);
  CHECK(fs::exists(ckpt2));
  const Checkpoint a = load_checkpoint(trained_checkpoint());
  const Checkpoint b = load_checkpoint(ckpt2);
  CHECK(a.config.seed == 11);
  CHECK(b.config.seed == 12);
}

TEST_CASE("cli: embed rejects malformed payloads and missing models") {
  const std::string& ckpt = trained_checkpoint();
  const std::string in = path_in("corpus/clip1.wav");
  CHECK(run_cli({"embed", "--in", in, "--bits", "XYZ", "--model", ckpt,
                 "--out", path_in("y.wav")}) == 1);
  CHECK(run_cli({"embed", "--in", in, "--bits", "A", "--model", path_in("nope.ckpt"),
                 "--out", path_in("y.wav")}) == 1);
}
