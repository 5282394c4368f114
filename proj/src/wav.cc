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

#include "waveverify/wav.hh"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "waveverify/dsp.hh"

namespace waveverify {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0]) | (static_cast<uint16_t>(p[1]) << 8);
}

void write_u32(std::ofstream& out, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ofstream& out, uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

AudioClip load_wav(const std::string& path, int expected_rate, WavLoadOptions opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file: " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  uint16_t format_tag = 0, channels = 0, bits_per_sample = 0;
  uint32_t rate = 0;
  size_t data_off = 0, data_len = 0;
  bool have_fmt = false;

  size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const char* id = reinterpret_cast<const char*>(data.data() + pos);
    uint32_t sz = read_u32(data.data() + pos + 4);
    size_t body = pos + 8;
    if (body + sz > data.size()) sz = static_cast<uint32_t>(data.size() - body);
    if (std::memcmp(id, "fmt ", 4) == 0 && sz >= 16) {
      format_tag = read_u16(data.data() + body);
      channels = read_u16(data.data() + body + 2);
      rate = read_u32(data.data() + body + 4);
      bits_per_sample = read_u16(data.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = sz;
    }
    pos = body + sz + (sz & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_off == 0) throw std::runtime_error("missing fmt/data chunk: " + path);
  if (format_tag != 1) throw std::runtime_error("not integer PCM (fmt tag " + std::to_string(format_tag) + "): " + path);
  if (bits_per_sample != 16) throw std::runtime_error("only 16-bit PCM supported: " + path);
  if (channels < 1) throw std::runtime_error("invalid channel count: " + path);
  if (channels > 1 && !opts.allow_downmix)
    throw std::runtime_error("multichannel WAV without downmix enabled: " + path);

  const size_t frame_bytes = 2u * channels;
  const size_t frames = data_len / frame_bytes;
  if (frames == 0) throw std::runtime_error("empty data chunk: " + path);

  std::vector<double> samples(frames);
  const uint8_t* p = data.data() + data_off;
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (uint16_t c = 0; c < channels; ++c) {
      int16_t v = static_cast<int16_t>(read_u16(p + i * frame_bytes + 2u * c));
      acc += static_cast<double>(v) / 32768.0;
    }
    samples[i] = acc / channels;
  }

  AudioClip clip(std::move(samples), static_cast<int>(rate));
  if (expected_rate > 0 && static_cast<int>(rate) != expected_rate) {
    if (!opts.allow_resample)
      throw std::runtime_error("sample rate " + std::to_string(rate) + " != expected " +
                               std::to_string(expected_rate) + " (resample not enabled): " + path);
    clip.samples = resample_to_rate(clip.samples, static_cast<int>(rate), expected_rate);
    clip.sample_rate = expected_rate;
  }
  clip.validate();
  return clip;
}

void save_wav(const AudioClip& clip, const std::string& path) {
  clip.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write WAV file: " + path);

  const uint32_t n = static_cast<uint32_t>(clip.length());
  const uint32_t data_bytes = n * 2;
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<uint32_t>(clip.sample_rate));
  write_u32(out, static_cast<uint32_t>(clip.sample_rate) * 2);
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);

  const double hi = 1.0 - 1.0 / 32768.0;
  for (uint32_t i = 0; i < n; ++i) {
    double v = std::clamp(clip.samples[i], -1.0, hi);
    int16_t q = static_cast<int16_t>(std::lround(v * 32768.0));
    write_u16(out, static_cast<uint16_t>(q));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace waveverify
