// Copyright 2026 The Respira Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// RIFF/WAVE reading and writing. Reads PCM 8/16/24/32-bit integer and
// 32/64-bit IEEE float, including WAVE_FORMAT_EXTENSIBLE. Samples are
// returned interleaved and scaled to [-1, 1).

#pragma once

#include <string>
#include <vector>

namespace respira {

struct WavData {
  std::vector<float> samples;  // interleaved
  int channels = 1;
  double sample_rate = 0.0;

  std::size_t frames() const { return channels > 0 ? samples.size() / static_cast<std::size_t>(channels) : 0; }
};

WavData read_wav(const std::string& path);

/// Duration in seconds from the header chunks only.
double wav_duration(const std::string& path);

enum class WavEncoding { kPcm16, kFloat32 };

void write_wav(const std::string& path, const WavData& wav, WavEncoding encoding = WavEncoding::kPcm16);

}  // namespace respira
