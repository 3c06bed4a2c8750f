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

#include "respira/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

#include "respira/error.hpp"

namespace respira {

namespace {

constexpr int kSincZeros = 16;
constexpr double kKaiserBeta = 8.6;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double r = 1.0 - x * x;
  if (r <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(r)) / std::cyl_bessel_i(0.0, beta);
}

// fftwf planning is not thread-safe; execution on fresh buffers is.
std::mutex g_plan_mutex;

struct R2CPlan {
  int n = 0;
  fftwf_plan plan = nullptr;
};

fftwf_plan plan_for(int n) {
  static std::vector<R2CPlan> plans;
  std::lock_guard lock(g_plan_mutex);
  for (const auto& p : plans)
    if (p.n == n) return p.plan;
  float* in = fftwf_alloc_real(static_cast<std::size_t>(n));
  fftwf_complex* out = fftwf_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  fftwf_plan plan = fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  fftwf_free(in);
  fftwf_free(out);
  plans.push_back({n, plan});
  return plan;
}

}  // namespace

const char* pad_mode_name(PadMode mode) { return mode == PadMode::kCircular ? "circular" : "repeat_fade"; }

PadMode parse_pad_mode(const std::string& name) {
  if (name == "circular") return PadMode::kCircular;
  if (name == "repeat_fade") return PadMode::kRepeatFade;
  throw ConfigError("unknown pad mode '" + name + "' (expected circular or repeat_fade)");
}

std::string FrontendConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "sr=" << sample_rate << ";dur=" << target_seconds << ";pad=" << pad_mode_name(pad_mode)
     << ";fade=" << fade_seconds << ";mels=" << n_mels << ";win=" << win << ";hop=" << hop << ";fmin=" << f_min
     << ";fmax=" << f_max << ";floor=" << log_floor;
  return os.str();
}

std::string FrontendConfig::hash() const { return hex64(fnv1a64(canonical())); }

double Spectrogram::mean() const {
  if (values.empty()) return 0.0;
  double acc = 0.0;
  for (float v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

AudioClip standardize(const AudioClip& clip, double target_rate) {
  if (clip.samples.empty() || clip.frames() == 0) throw DataError("standardize: empty audio in " + clip.source_id);
  if (clip.channels < 1) throw DataError("standardize: invalid channel count in " + clip.source_id);
  if (clip.sample_rate < 4000.0) {
    throw DataError("standardize: sample rate " + std::to_string(clip.sample_rate) + " below 4 kHz in " +
                    clip.source_id);
  }
  AudioClip out = clip;
  out.channels = 1;
  const auto frames = clip.frames();
  std::vector<float> mono(frames);
  if (clip.channels == 1) {
    mono.assign(clip.samples.begin(), clip.samples.begin() + static_cast<std::ptrdiff_t>(frames));
  } else {
    for (std::size_t i = 0; i < frames; ++i) {
      double acc = 0.0;
      for (int c = 0; c < clip.channels; ++c) acc += clip.samples[i * clip.channels + c];
      mono[i] = static_cast<float>(acc / clip.channels);
    }
  }
  if (clip.sample_rate == target_rate) {
    out.samples = std::move(mono);
    return out;
  }

  const double ratio = target_rate / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // fraction of the input Nyquist
  const double half_width = kSincZeros / cutoff;  // in input samples
  const auto n_out = static_cast<std::size_t>(std::floor(static_cast<double>(frames) * ratio));
  out.samples.assign(std::max<std::size_t>(n_out, 1), 0.0f);
  const auto n_in = static_cast<std::int64_t>(frames);
  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    const double pos = static_cast<double>(n) / ratio;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(pos - half_width)));
    const auto hi = std::min<std::int64_t>(n_in - 1, static_cast<std::int64_t>(std::floor(pos + half_width)));
    double acc = 0.0;
    for (auto k = lo; k <= hi; ++k) {
      const double d = pos - static_cast<double>(k);
      acc += mono[k] * cutoff * sinc(cutoff * d) * kaiser(d / half_width, kKaiserBeta);
    }
    out.samples[n] = static_cast<float>(acc);
  }
  out.sample_rate = target_rate;
  return out;
}

AudioClip fit_duration(const AudioClip& clip, double target_seconds, PadMode mode, double fade_seconds) {
  if (clip.channels != 1) throw DataError("fit_duration expects mono audio; standardize first");
  if (clip.samples.empty()) throw DataError("fit_duration: empty audio in " + clip.source_id);
  const auto target = static_cast<std::size_t>(std::llround(target_seconds * clip.sample_rate));
  if (target == 0) throw ConfigError("fit_duration: target duration must be positive");
  AudioClip out = clip;
  const auto len = clip.samples.size();
  if (len >= target) {
    out.samples.resize(target);
    return out;
  }
  out.samples.resize(target);
  for (std::size_t k = 0; k < target; ++k) out.samples[k] = clip.samples[k % len];
  if (mode == PadMode::kRepeatFade) {
    const auto fade = std::min(static_cast<std::size_t>(std::llround(fade_seconds * clip.sample_rate)), len / 2);
    if (fade > 0) {
      // Each copy that is followed by another copy fades to zero at the seam.
      for (std::size_t seam = len; seam < target; seam += len) {
        for (std::size_t j = 0; j < fade; ++j) {
          const float gain = static_cast<float>(fade - 1 - j) / static_cast<float>(fade);
          out.samples[seam - fade + j] *= gain;
        }
      }
    }
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(int n_mels, int win, double sample_rate, double f_min, double f_max) {
  if (n_mels < 1) throw ConfigError("mel_filterbank: n_mels must be >= 1");
  if (win < 2) throw ConfigError("mel_filterbank: window must be >= 2");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw ConfigError("mel_filterbank: need 0 <= f_min < f_max <= sample_rate / 2");
  }
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = win / 2 + 1;
  fb.weights.assign(static_cast<std::size_t>(n_mels) * fb.n_bins, 0.0f);
  fb.bin_hz.resize(static_cast<std::size_t>(fb.n_bins));
  for (int k = 0; k < fb.n_bins; ++k) fb.bin_hz[k] = k * sample_rate / win;

  const double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
  std::vector<double> pts(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  pts.front() = f_min;
  pts.back() = f_max;
  fb.centers.assign(pts.begin() + 1, pts.end() - 1);
  for (int m = 0; m < n_mels; ++m) {
    const double left = pts[m], center = pts[m + 1], right = pts[m + 2];
    for (int k = 0; k < fb.n_bins; ++k) {
      const double f = fb.bin_hz[k];
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb.weights[static_cast<std::size_t>(m) * fb.n_bins + k] = static_cast<float>(w);
    }
  }
  return fb;
}

Spectrogram mel_spectrogram(const AudioClip& clip, const FrontendConfig& cfg) {
  if (clip.channels != 1) throw DataError("mel_spectrogram expects mono audio; standardize first");
  if (cfg.hop < 1) throw ConfigError("mel_spectrogram: hop must be >= 1");
  const auto len = static_cast<std::int64_t>(clip.samples.size());
  if (len < cfg.win) {
    throw DataError("mel_spectrogram: clip " + clip.source_id + " has " + std::to_string(len) +
                    " samples, shorter than one window of " + std::to_string(cfg.win));
  }
  const auto fb = mel_filterbank(cfg.n_mels, cfg.win, clip.sample_rate, cfg.f_min, cfg.f_max);
  const auto frames = (len - cfg.win) / cfg.hop + 1;

  std::vector<float> window(static_cast<std::size_t>(cfg.win));
  for (int i = 0; i < cfg.win; ++i) {
    window[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.win));
  }
  // Only bins that some filter touches contribute.
  int bin_lo = fb.n_bins, bin_hi = -1;
  for (int m = 0; m < fb.n_mels; ++m) {
    for (int k = 0; k < fb.n_bins; ++k) {
      if (fb.weight(m, k) > 0.0f) {
        bin_lo = std::min(bin_lo, k);
        bin_hi = std::max(bin_hi, k);
      }
    }
  }

  Spectrogram spec;
  spec.frames = frames;
  spec.bands = cfg.n_mels;
  spec.values.resize(static_cast<std::size_t>(frames * cfg.n_mels));
  spec.band_centers = fb.centers;
  spec.hop_seconds = cfg.hop / clip.sample_rate;
  spec.id = clip.source_id;
  spec.patient_id = clip.patient_id;
  spec.age_years = clip.age_years;

  const fftwf_plan plan = plan_for(cfg.win);
  float* in = fftwf_alloc_real(static_cast<std::size_t>(cfg.win));
  fftwf_complex* out = fftwf_alloc_complex(static_cast<std::size_t>(fb.n_bins));
  std::vector<double> power(static_cast<std::size_t>(fb.n_bins));
  for (std::int64_t t = 0; t < frames; ++t) {
    const float* src = clip.samples.data() + t * cfg.hop;
    for (int i = 0; i < cfg.win; ++i) in[i] = src[i] * window[i];
    fftwf_execute_dft_r2c(plan, in, out);
    for (int k = bin_lo; k <= bin_hi; ++k) {
      power[k] = static_cast<double>(out[k][0]) * out[k][0] + static_cast<double>(out[k][1]) * out[k][1];
    }
    for (int m = 0; m < fb.n_mels; ++m) {
      double e = 0.0;
      for (int k = bin_lo; k <= bin_hi; ++k) e += fb.weight(m, k) * power[k];
      spec.at(t, m) = static_cast<float>(std::log(e + cfg.log_floor));
    }
  }
  fftwf_free(in);
  fftwf_free(out);
  return spec;
}

Spectrogram preprocess_clip(const AudioClip& clip, const FrontendConfig& cfg) {
  const auto mono = standardize(clip, cfg.sample_rate);
  const auto fitted = fit_duration(mono, cfg.target_seconds, cfg.pad_mode, cfg.fade_seconds);
  return mel_spectrogram(fitted, cfg);
}

void mask_time(Spectrogram& spec, std::int64_t t0, std::int64_t width, float fill) {
  if (t0 < 0 || width < 0 || t0 + width > spec.frames) throw ConfigError("mask_time: range outside spectrogram");
  for (auto t = t0; t < t0 + width; ++t)
    for (std::int64_t f = 0; f < spec.bands; ++f) spec.at(t, f) = fill;
}

void mask_freq(Spectrogram& spec, std::int64_t f0, std::int64_t width, float fill) {
  if (f0 < 0 || width < 0 || f0 + width > spec.bands) throw ConfigError("mask_freq: range outside spectrogram");
  for (std::int64_t t = 0; t < spec.frames; ++t)
    for (auto f = f0; f < f0 + width; ++f) spec.at(t, f) = fill;
}

Spectrogram spec_augment(const Spectrogram& spec, const SpecAugmentConfig& cfg, Rng& rng) {
  if (cfg.max_time_width < 0 || cfg.max_time_width > spec.frames || cfg.max_freq_width < 0 ||
      cfg.max_freq_width > spec.bands) {
    throw ConfigError("spec_augment: mask widths must lie within the spectrogram dimensions");
  }
  Spectrogram out = spec;
  const auto fill = static_cast<float>(spec.mean());
  for (int i = 0; i < cfg.time_masks; ++i) {
    const auto w = rng.range(0, cfg.max_time_width);
    const auto t0 = rng.range(0, spec.frames - w);
    mask_time(out, t0, w, fill);
  }
  for (int i = 0; i < cfg.freq_masks; ++i) {
    const auto w = rng.range(0, cfg.max_freq_width);
    const auto f0 = rng.range(0, spec.bands - w);
    mask_freq(out, f0, w, fill);
  }
  return out;
}

}  // namespace respira
