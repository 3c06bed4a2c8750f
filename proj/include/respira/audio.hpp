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

// Audio frontend: resampling to 16 kHz mono, duration fitting, log-Mel
// spectrograms and SpecAugment.
//
// Mel scale is HTK: mel(f) = 2595 * log10(1 + f / 700). Filters are
// unnormalized triangles (peak 1) between n_mels + 2 points spaced evenly
// in mel over [f_min, f_max]; band i is centered on point i + 1. Frames use a
// periodic Hann window without centering, so
// T = floor((len - win) / hop) + 1.

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "respira/random.hpp"

namespace respira {

struct AudioClip {
  std::vector<float> samples;  // interleaved when channels > 1
  int channels = 1;
  double sample_rate = 0.0;
  std::string source_id;
  std::string patient_id;
  double age_years = std::numeric_limits<double>::quiet_NaN();

  std::size_t frames() const { return channels > 0 ? samples.size() / static_cast<std::size_t>(channels) : 0; }
};

enum class PadMode { kCircular, kRepeatFade };

const char* pad_mode_name(PadMode mode);
PadMode parse_pad_mode(const std::string& name);

struct FrontendConfig {
  double sample_rate = 16000.0;
  double target_seconds = 8.0;
  PadMode pad_mode = PadMode::kCircular;
  double fade_seconds = 0.1;
  int n_mels = 64;
  int win = 1024;
  int hop = 512;
  double f_min = 50.0;
  double f_max = 2000.0;
  double log_floor = 1e-10;

  /// Canonical text of every field; hashed to key spectrogram caches.
  std::string canonical() const;
  std::string hash() const;
};

/// T x F log-Mel matrix plus band metadata and the provenance of its cycle.
struct Spectrogram {
  std::int64_t frames = 0;
  std::int64_t bands = 0;
  std::vector<float> values;  // row-major [frames][bands]
  std::vector<double> band_centers;
  double hop_seconds = 0.0;
  int label = -1;
  std::string id;
  std::string patient_id;
  double age_years = std::numeric_limits<double>::quiet_NaN();
  std::string split;

  float at(std::int64_t t, std::int64_t f) const { return values[static_cast<std::size_t>(t * bands + f)]; }
  float& at(std::int64_t t, std::int64_t f) { return values[static_cast<std::size_t>(t * bands + f)]; }
  double mean() const;
};

/// Resamples to target_rate, mono. Channels are averaged; resampling uses a
/// Kaiser-windowed sinc with the cutoff at the lower Nyquist frequency.
AudioClip standardize(const AudioClip& clip, double target_rate = 16000.0);

/// Exactly round(target_seconds * rate) samples. Longer clips keep their
/// start. Circular mode wraps; repeat-fade repeats the clip and fades each
/// copy out linearly over its last fade_seconds where another copy follows.
AudioClip fit_duration(const AudioClip& clip, double target_seconds = 8.0, PadMode mode = PadMode::kCircular,
                       double fade_seconds = 0.1);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;  // win / 2 + 1
  std::vector<float> weights;  // [n_mels][n_bins]
  std::vector<double> centers;
  std::vector<double> bin_hz;

  float weight(int band, int bin) const { return weights[static_cast<std::size_t>(band) * n_bins + bin]; }
};

MelFilterbank mel_filterbank(int n_mels, int win, double sample_rate, double f_min, double f_max);

/// Log-Mel spectrogram of a mono clip. Throws DataError when the clip is
/// shorter than one window.
Spectrogram mel_spectrogram(const AudioClip& clip, const FrontendConfig& cfg = {});

/// standardize -> fit_duration -> mel_spectrogram.
Spectrogram preprocess_clip(const AudioClip& clip, const FrontendConfig& cfg = {});

struct SpecAugmentConfig {
  int time_masks = 2;
  int freq_masks = 2;
  int max_time_width = 20;
  int max_freq_width = 8;
};

/// Fills frames [t0, t0 + width) with fill.
void mask_time(Spectrogram& spec, std::int64_t t0, std::int64_t width, float fill);
/// Fills bands [f0, f0 + width) with fill.
void mask_freq(Spectrogram& spec, std::int64_t f0, std::int64_t width, float fill);

/// Returns a masked copy. Widths are drawn uniformly from [0, max] and
/// offsets uniformly over valid positions; the fill is the input's mean.
Spectrogram spec_augment(const Spectrogram& spec, const SpecAugmentConfig& cfg, Rng& rng);

}  // namespace respira
