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

#include "waveverify/audio.hh"

#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "waveverify/rng.hh"
#include "json.hpp"

namespace waveverify {

void AudioClip::validate() const {
  if (samples.empty()) throw std::invalid_argument("AudioClip: empty clip");
  if (sample_rate <= 0) throw std::invalid_argument("AudioClip: non-positive sample rate");
  for (double s : samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("AudioClip: non-finite sample");
  }
}

MessageBits::MessageBits(std::vector<uint8_t> b) : bits(std::move(b)) {
  if (bits.empty()) throw std::invalid_argument("MessageBits: n must be >= 1");
  for (uint8_t v : bits) {
    if (v > 1) throw std::invalid_argument("MessageBits: bits must be 0 or 1");
  }
}

PresenceMask::PresenceMask(std::vector<double> v, bool is_hard)
    : values(std::move(v)), hard(is_hard) {
  validate();
}

void PresenceMask::validate() const {
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("PresenceMask: value outside [0,1]");
    if (hard && v != 0.0 && v != 1.0)
      throw std::invalid_argument("PresenceMask: hard mask must contain only 0/1");
  }
}

size_t PresenceMask::count_ones() const {
  size_t c = 0;
  for (double v : values)
    if (v >= 0.5) ++c;
  return c;
}

PresenceMask PresenceMask::binarized() const {
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = values[i] >= 0.5 ? 1.0 : 0.0;
  return PresenceMask(std::move(out), true);
}

void require_paired(const AudioClip& clip, const PresenceMask& mask) {
  if (clip.length() != mask.length())
    throw std::invalid_argument("mask length " + std::to_string(mask.length()) +
                                " does not match clip length " + std::to_string(clip.length()));
}

static int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

MessageBits message_from_hex(const std::string& text, size_t n) {
  if (n < 1) throw std::invalid_argument("message_from_hex: n must be >= 1");
  if (text.size() * 4 < n)
    throw std::invalid_argument("message_from_hex: '" + text + "' encodes fewer than " +
                                std::to_string(n) + " bits");
  std::vector<uint8_t> bits;
  bits.reserve(n);
  for (char c : text) {
    int d = hex_digit(c);
    if (d < 0) throw std::invalid_argument(std::string("message_from_hex: non-hex character '") + c + "'");
    for (int k = 3; k >= 0 && bits.size() < n; --k) bits.push_back((d >> k) & 1);
    if (bits.size() >= n) break;
  }
  return MessageBits(std::move(bits));
}

std::string message_to_hex(const MessageBits& m) {
  static const char* digits = "0123456789ABCDEF";
  std::string out;
  size_t i = 0;
  while (i < m.n()) {
    int v = 0;
    for (int k = 0; k < 4; ++k) {
      v <<= 1;
      if (i < m.n()) v |= m.bits[i++];
    }
    out.push_back(digits[v]);
  }
  return out;
}

MessageBits random_message(size_t n, RandomSource& rng) {
  std::vector<uint8_t> bits(n);
  for (auto& b : bits) b = static_cast<uint8_t>(rng.uniform_int(2));
  return MessageBits(std::move(bits));
}

PresenceMask mask_full(size_t length, int value) {
  if (length < 1) throw std::invalid_argument("mask_full: length must be >= 1");
  if (value != 0 && value != 1) throw std::invalid_argument("mask_full: value must be 0 or 1");
  return PresenceMask(std::vector<double>(length, static_cast<double>(value)), true);
}

void save_mask_json(const PresenceMask& mask, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (double v : mask.values) {
    if (mask.hard)
      j.push_back(static_cast<int>(v));
    else
      j.push_back(v);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write mask file: " + path);
  out << j.dump() << "\n";
}

PresenceMask load_mask_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read mask file: " + path);
  nlohmann::json j;
  in >> j;
  if (!j.is_array()) throw std::runtime_error("mask file is not a JSON array: " + path);
  std::vector<double> vals;
  vals.reserve(j.size());
  bool hard = true;
  for (const auto& e : j) {
    double v = e.get<double>();
    if (v != 0.0 && v != 1.0) hard = false;
    vals.push_back(v);
  }
  return PresenceMask(std::move(vals), hard);
}

}  // namespace waveverify
