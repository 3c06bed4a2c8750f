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

// Binary frequency masks and their physical application.
//
// Applying a mask removes the dropped Mel rows and compacts the survivors in
// their original order, so a masked model really sees F' < F rows.

#pragma once

#include <string>
#include <vector>

#include "respira/audio.hpp"

namespace respira {

enum class MaskOrigin { kFull, kImportance, kBackward };

std::string mask_origin_name(MaskOrigin o);
MaskOrigin parse_mask_origin(const std::string& name);

inline constexpr int kMinKeptBands = 8;
inline constexpr int kMaskFileVersion = 1;

struct FrequencyMask {
  std::vector<bool> keep;
  MaskOrigin origin = MaskOrigin::kFull;
  /// Original band indices removed at each iteration, in order.
  std::vector<std::vector<int>> history;
  std::string config_hash;

  static FrequencyMask full(int bands);

  int bands() const { return static_cast<int>(keep.size()); }
  int kept() const;
  std::vector<int> kept_indices() const;
  /// Copy with the given original indices removed and one history entry added.
  FrequencyMask without(const std::vector<int>& removed) const;
  /// Kept-band bitstring, e.g. "1101".
  std::string bits() const;
  /// Throws ConfigError if history does not partition the removed bands.
  void validate() const;
};

Spectrogram apply_mask(const Spectrogram& spec, const FrequencyMask& mask);
std::vector<Spectrogram> apply_mask(const std::vector<Spectrogram>& specs, const FrequencyMask& mask);

/// Text format:
///   respira-mask <version>
///   bands <F>
///   origin <full|importance|backward>
///   config_hash <hex or ->
///   keep <bitstring>
///   removed <i,j,...>   (one line per iteration)
void save_mask(const std::string& path, const FrequencyMask& mask);
FrequencyMask load_mask(const std::string& path);

}  // namespace respira
