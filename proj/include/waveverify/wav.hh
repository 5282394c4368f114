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

#ifndef WAVEVERIFY_WAV_HH
#define WAVEVERIFY_WAV_HH

#include <string>

#include "waveverify/audio.hh"

namespace waveverify {

struct WavLoadOptions {
  bool allow_resample = false;  // resample to expected_rate on mismatch
  bool allow_downmix = false;   // per-sample mean over channels
};

// Reads a 16-bit PCM WAV file.  Integer samples map to [-1,1) by division
// by 32768.  Rate mismatch and multichannel input are errors unless the
// corresponding option is set; expected_rate <= 0 accepts any rate.
AudioClip load_wav(const std::string& path, int expected_rate, WavLoadOptions opts = {});

// Writes a 16-bit PCM mono WAV at the clip's sample rate.  Samples are
// clamped to [-1, 1 - 1/32768] before quantization.
void save_wav(const AudioClip& clip, const std::string& path);

}  // namespace waveverify

#endif  // WAVEVERIFY_WAV_HH
