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

#ifndef WAVEVERIFY_AUDIO_HH
#define WAVEVERIFY_AUDIO_HH

#include <cstdint>
#include <string>
#include <vector>

namespace waveverify {

// Mono waveform in [-1,1].  Amplitudes stay real-valued everywhere inside
// the pipeline; quantization happens only at WAV file boundaries.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;

  AudioClip() = default;
  AudioClip(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {}

  size_t length() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }

  // Throws std::invalid_argument on non-finite samples, empty clip, or
  // non-positive rate.
  void validate() const;
};

// Ordered n-bit watermark payload.
struct MessageBits {
  std::vector<uint8_t> bits;  // each 0 or 1

  MessageBits() = default;
  explicit MessageBits(std::vector<uint8_t> b);

  size_t n() const { return bits.size(); }

  bool operator==(const MessageBits& o) const { return bits == o.bits; }
};

// Per-sample watermark-presence sequence, values in [0,1].  A hard mask is
// restricted to {0,1} and is what ground truth uses; probabilistic masks
// come out of the locator.
struct PresenceMask {
  std::vector<double> values;
  bool hard = true;

  PresenceMask() = default;
  PresenceMask(std::vector<double> v, bool is_hard);

  size_t length() const { return values.size(); }
  size_t count_ones() const;

  // Threshold at 0.5 (>= maps to 1).
  PresenceMask binarized() const;

  void validate() const;
};

// Checked at every (clip, mask) pairing point.
void require_paired(const AudioClip& clip, const PresenceMask& mask);

// Most-significant-bit-first extraction of exactly n bits from a hex string.
MessageBits message_from_hex(const std::string& text, size_t n);
std::string message_to_hex(const MessageBits& m);
MessageBits random_message(size_t n, class RandomSource& rng);

// Constant hard mask of the given length and value (0 or 1).
PresenceMask mask_full(size_t length, int value);

// Mask files are plain JSON arrays of numbers in [0,1].
void save_mask_json(const PresenceMask& mask, const std::string& path);
PresenceMask load_mask_json(const std::string& path);

}  // namespace waveverify

#endif  // WAVEVERIFY_AUDIO_HH
