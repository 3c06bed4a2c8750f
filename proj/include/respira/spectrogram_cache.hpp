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

// Versioned binary cache of spectrograms keyed by clip id and the hash of
// the frontend configuration that produced them.
//
// Layout (little-endian):
//   "RSPRSPEC" | u32 version | str config_hash | u64 n
//   | (str id, str patient, str split, i64 label, f64 age, i64 frames,
//      i64 bands, f64 hop, u64 nc, f64 centers[nc], u64 nv, f32 values[nv])*

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "respira/audio.hpp"

namespace respira {

inline constexpr std::uint32_t kSpectrogramCacheVersion = 1;

struct SpectrogramCache {
  std::string config_hash;
  std::vector<Spectrogram> items;

  const Spectrogram* find(const std::string& id) const;
};

void save_spectrogram_cache(const std::string& path, const SpectrogramCache& cache);
SpectrogramCache load_spectrogram_cache(const std::string& path);
/// Reads only the header; nullopt when the file is missing or unreadable.
std::optional<std::string> peek_cache_hash(const std::string& path);

}  // namespace respira
