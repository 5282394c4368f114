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

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "waveverify/audio.hh"
#include "waveverify/rng.hh"
#include "waveverify/wav.hh"

using namespace waveverify;

namespace {

std::string tmp_path(const char* name) { return std::string("/tmp/waveverify_test_") + name; }

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

// Minimal PCM16 writer used to craft files the library writer cannot
// produce (stereo, odd rates).
void write_raw_wav(const std::string& path, int rate, int channels,
                   const std::vector<int16_t>& interleaved) {
  std::vector<uint8_t> b;
  const uint32_t data_bytes = static_cast<uint32_t>(interleaved.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);
  put_u16(b, static_cast<uint16_t>(channels));
  put_u32(b, static_cast<uint32_t>(rate));
  put_u32(b, static_cast<uint32_t>(rate * channels * 2));
  put_u16(b, static_cast<uint16_t>(channels * 2));
  put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (int16_t s : interleaved) put_u16(b, static_cast<uint16_t>(s));
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("message_from_hex extracts most significant bits first") {
  MessageBits m = message_from_hex("A5", 8);
  CHECK(m.bits == std::vector<uint8_t>{1, 0, 1, 0, 0, 1, 0, 1});

  MessageBits all_ones = message_from_hex("FFFF", 16);
  CHECK(all_ones.n() == 16);
  for (uint8_t b : all_ones.bits) CHECK(b == 1);

  MessageBits zeros = message_from_hex("0", 4);
  CHECK(zeros.bits == std::vector<uint8_t>{0, 0, 0, 0});

  CHECK(message_from_hex("a5", 8) == message_from_hex("A5", 8));
  // extra digits beyond n are ignored
  CHECK(message_from_hex("A5FF", 8) == message_from_hex("A5", 8));
}

TEST_CASE("message_from_hex rejects bad input") {
  CHECK_THROWS_AS(message_from_hex("A", 8), std::invalid_argument);
  CHECK_THROWS_AS(message_from_hex("XY", 8), std::invalid_argument);
  CHECK_THROWS_AS(message_from_hex("FF", 0), std::invalid_argument);
}

TEST_CASE("message_to_hex round trips") {
  CHECK(message_to_hex(message_from_hex("A5", 8)) == "A5");
  CHECK(message_to_hex(message_from_hex("DEADBEEF", 32)) == "DEADBEEF");
  // non-multiple-of-4 lengths pad the final digit with zeros
  MessageBits m(std::vector<uint8_t>{1, 0, 1});
  CHECK(message_to_hex(m) == "A");
}

TEST_CASE("mask_full and PresenceMask invariants") {
  PresenceMask ones = mask_full(5, 1);
  CHECK(ones.length() == 5);
  CHECK(ones.count_ones() == 5);
  CHECK(ones.hard);

  PresenceMask zeros = mask_full(3, 0);
  CHECK(zeros.count_ones() == 0);

  CHECK_THROWS_AS(mask_full(0, 1), std::invalid_argument);
  CHECK_THROWS_AS(mask_full(4, 2), std::invalid_argument);
  CHECK_THROWS_AS(PresenceMask({0.0, 0.5, 1.0}, true), std::invalid_argument);
  CHECK_THROWS_AS(PresenceMask({-0.1}, false), std::invalid_argument);

  PresenceMask soft({0.1, 0.5, 0.9}, false);
  PresenceMask hard = soft.binarized();
  CHECK(hard.hard);
  CHECK(hard.values == std::vector<double>{0.0, 1.0, 1.0});
}

TEST_CASE("require_paired rejects length mismatch") {
  AudioClip clip(std::vector<double>(100, 0.0), 16000);
  CHECK_NOTHROW(require_paired(clip, mask_full(100, 1)));
  CHECK_THROWS_AS(require_paired(clip, mask_full(99, 1)), std::invalid_argument);
}

TEST_CASE("mask json round trips") {
  const std::string path = tmp_path("mask.json");
  PresenceMask m({1, 1, 0, 0, 1}, true);
  save_mask_json(m, path);
  PresenceMask back = load_mask_json(path);
  CHECK(back.hard);
  CHECK(back.values == m.values);

  PresenceMask soft({0.25, 0.75}, false);
  save_mask_json(soft, path);
  PresenceMask back2 = load_mask_json(path);
  CHECK_FALSE(back2.hard);
  CHECK(back2.values[0] == doctest::Approx(0.25));
  std::remove(path.c_str());
}

TEST_CASE("RandomSource is deterministic per seed") {
  RandomSource a(1234), b(1234), c(99);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    uint64_t va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
    all_equal = all_equal && (va == vb);
    any_diff = any_diff || (va != vc);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("RandomSource distributions behave") {
  RandomSource rng(7);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(sum / 20000.0 == doctest::Approx(0.5).epsilon(0.02));

  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) counts[rng.uniform_int(7)]++;
  for (int k = 0; k < 7; ++k) CHECK(counts[k] > 700);

  double m = 0, m2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    m += z;
    m2 += z * z;
  }
  CHECK(m / n == doctest::Approx(0.0).epsilon(0.05));
  CHECK(m2 / n == doctest::Approx(1.0).epsilon(0.05));

  double lo = rng.uniform(10.0, 30.0);
  CHECK(lo >= 10.0);
  CHECK(lo < 30.0);
}

TEST_CASE("RandomSource child streams are independent and stable") {
  RandomSource root(42);
  RandomSource c0 = root.child(0);
  RandomSource c0_again = RandomSource(42).child(0);
  RandomSource c1 = root.child(1);
  CHECK(c0.next_u64() == c0_again.next_u64());
  CHECK(c0.next_u64() != c1.next_u64());
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  RandomSource rng(5);
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  std::vector<int> v2{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  RandomSource rng2(5);
  rng2.shuffle(v2);
  CHECK(v == v2);
}

TEST_CASE("wav round trip stays within one quantization step") {
  const std::string path = tmp_path("rt.wav");
  RandomSource rng(11);
  std::vector<double> s(2048);
  for (auto& v : s) v = rng.uniform(-1.0, 1.0);
  AudioClip clip(s, 16000);
  save_wav(clip, path);
  AudioClip back = load_wav(path, 16000);
  REQUIRE(back.length() == clip.length());
  CHECK(back.sample_rate == 16000);
  double max_err = 0.0;
  for (size_t i = 0; i < s.size(); ++i)
    max_err = std::max(max_err, std::abs(back.samples[i] - s[i]));
  CHECK(max_err <= 1.0 / 32768.0);
  std::remove(path.c_str());
}

TEST_CASE("wav writer clamps out-of-range samples") {
  const std::string path = tmp_path("clamp.wav");
  AudioClip clip({1.5, -1.5, 0.0}, 16000);
  save_wav(clip, path);
  AudioClip back = load_wav(path, 16000);
  CHECK(back.samples[0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(back.samples[1] == doctest::Approx(-1.0));
  CHECK(back.samples[2] == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("wav zero clip stays exactly zero") {
  const std::string path = tmp_path("zero.wav");
  save_wav(AudioClip(std::vector<double>(500, 0.0), 16000), path);
  AudioClip back = load_wav(path, 16000);
  for (double v : back.samples) CHECK(v == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("stereo wav downmixes to channel mean only when allowed") {
  const std::string path = tmp_path("stereo.wav");
  // L = 8192, R = 16384 -> mean 12288
  std::vector<int16_t> inter;
  for (int i = 0; i < 64; ++i) {
    inter.push_back(8192);
    inter.push_back(16384);
  }
  write_raw_wav(path, 16000, 2, inter);
  CHECK_THROWS(load_wav(path, 16000));
  WavLoadOptions opts;
  opts.allow_downmix = true;
  AudioClip back = load_wav(path, 16000, opts);
  REQUIRE(back.length() == 64);
  for (double v : back.samples) CHECK(v == doctest::Approx(12288.0 / 32768.0));
  std::remove(path.c_str());
}

TEST_CASE("rate mismatch resamples only when allowed") {
  const std::string path = tmp_path("rate.wav");
  std::vector<int16_t> mono(800, 1000);
  write_raw_wav(path, 8000, 1, mono);
  CHECK_THROWS(load_wav(path, 16000));
  WavLoadOptions opts;
  opts.allow_resample = true;
  AudioClip back = load_wav(path, 16000, opts);
  CHECK(back.sample_rate == 16000);
  CHECK(back.length() == 1600);
  std::remove(path.c_str());
}

TEST_CASE("AudioClip validate flags bad data") {
  CHECK_THROWS_AS(AudioClip(std::vector<double>{}, 16000).validate(), std::invalid_argument);
  CHECK_THROWS_AS(AudioClip({0.0}, 0).validate(), std::invalid_argument);
  AudioClip nanclip({0.0, std::nan("")}, 16000);
  CHECK_THROWS_AS(nanclip.validate(), std::invalid_argument);
  CHECK_NOTHROW(AudioClip({0.1, -0.2}, 16000).validate());
}
