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

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "respira/audio.hpp"
#include "respira/error.hpp"
#include "respira/spectrogram_cache.hpp"
#include "respira/wav.hpp"

using namespace respira;

namespace {

AudioClip tone(double hz, double rate, double seconds, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::llround(rate * seconds)));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  }
  c.source_id = "tone";
  return c;
}

// Index of the largest |DFT| bin among 1..n/2 of the first n samples.
std::size_t dft_peak(const std::vector<float>& x, std::size_t n) {
  std::size_t best = 1;
  double best_mag = -1.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += static_cast<double>(x[i]) * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(i) / double(n));
    }
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  return best;
}

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / "respira_test_audio";
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Standardize, SixteenKiloHertzMonoIsUnchanged) {
  auto c = tone(440, 16000, 0.5);
  auto s = standardize(c);
  EXPECT_EQ(s.samples, c.samples);
  EXPECT_EQ(s.sample_rate, 16000);
}

TEST(Standardize, DownsampledToneKeepsItsFrequency) {
  auto s = standardize(tone(440, 32000, 1.0));
  ASSERT_EQ(s.sample_rate, 16000);
  ASSERT_EQ(s.samples.size(), 16000u);
  const std::size_t n = 4096;
  const double bin_hz = 16000.0 / n;
  std::vector<float> mid(s.samples.begin() + 4000, s.samples.begin() + 4000 + n);
  const auto peak = dft_peak(mid, n);
  EXPECT_LE(std::abs(peak * bin_hz - 440.0), bin_hz);
}

TEST(Standardize, AmplitudeSurvivesResampling) {
  auto s = standardize(tone(300, 44100, 1.0, 0.5));
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 2000; i + 2000 < s.samples.size(); ++i, ++n) acc += double(s.samples[i]) * s.samples[i];
  EXPECT_NEAR(std::sqrt(acc / n), 0.5 / std::sqrt(2.0), 0.01);
}

TEST(Standardize, StereoIsAveraged) {
  AudioClip c;
  c.sample_rate = 16000;
  c.channels = 2;
  c.samples = {1.0f, 0.0f, 0.5f, -0.5f, -1.0f, 0.25f};
  auto s = standardize(c);
  EXPECT_EQ(s.channels, 1);
  EXPECT_EQ(s.samples, (std::vector<float>{0.5f, 0.0f, -0.375f}));
}

TEST(Standardize, RejectsEmptyAndLowRateAudio) {
  AudioClip c;
  c.sample_rate = 16000;
  EXPECT_THROW(standardize(c), DataError);
  auto low = tone(100, 2000, 0.1);
  EXPECT_THROW(standardize(low), DataError);
}

TEST(FitDuration, EightSecondsUnchangedAndIdempotent) {
  auto c = tone(200, 16000, 8.0);
  auto once = fit_duration(c);
  EXPECT_EQ(once.samples, c.samples);
  EXPECT_EQ(fit_duration(once).samples, once.samples);
}

TEST(FitDuration, CircularWraps) {
  auto c = tone(123, 16000, 2.0);
  auto out = fit_duration(c, 8.0, PadMode::kCircular);
  ASSERT_EQ(out.samples.size(), 128000u);
  for (std::size_t k = 0; k < out.samples.size(); k += 997) EXPECT_EQ(out.samples[k], c.samples[k % 32000]);
}

TEST(FitDuration, LongClipKeepsStart) {
  auto c = tone(123, 16000, 10.0);
  auto out = fit_duration(c, 8.0);
  ASSERT_EQ(out.samples.size(), 128000u);
  EXPECT_TRUE(std::equal(out.samples.begin(), out.samples.end(), c.samples.begin()));
}

TEST(FitDuration, RepeatFadeRampsToZeroAtEachSeam) {
  AudioClip c;
  c.sample_rate = 16000;
  c.samples.assign(16000 * 3, 1.0f);
  auto out = fit_duration(c, 8.0, PadMode::kRepeatFade, 0.1);
  ASSERT_EQ(out.samples.size(), 128000u);
  const std::size_t fade = 1600;
  for (std::size_t seam : {48000u, 96000u}) {
    EXPECT_FLOAT_EQ(out.samples[seam - 1], 0.0f);
    EXPECT_FLOAT_EQ(out.samples[seam - fade], static_cast<float>(fade - 1) / fade);
    EXPECT_FLOAT_EQ(out.samples[seam - fade - 1], 1.0f);
    EXPECT_FLOAT_EQ(out.samples[seam], 1.0f);
    for (std::size_t j = seam - fade + 1; j < seam; ++j) EXPECT_LE(out.samples[j], out.samples[j - 1]);
  }
  // No fade at the truncated end.
  EXPECT_FLOAT_EQ(out.samples.back(), 1.0f);
}

TEST(MelFilterbank, CentersIncreaseWithinRangeAndRowsArePositive) {
  auto fb = mel_filterbank(64, 1024, 16000, 50, 2000);
  ASSERT_EQ(fb.centers.size(), 64u);
  for (std::size_t i = 0; i < fb.centers.size(); ++i) {
    EXPECT_GT(fb.centers[i], 50.0);
    EXPECT_LT(fb.centers[i], 2000.0);
    if (i) EXPECT_GT(fb.centers[i], fb.centers[i - 1]);
    double row = 0.0;
    for (int k = 0; k < fb.n_bins; ++k) row += fb.weight(static_cast<int>(i), k);
    EXPECT_GT(row, 0.0);
  }
}

TEST(MelFilterbank, EveryBinInsideTheRangeIsCovered) {
  auto fb = mel_filterbank(64, 1024, 16000, 50, 2000);
  int inside = 0;
  for (int k = 0; k < fb.n_bins; ++k) {
    if (fb.bin_hz[k] <= 50.0 || fb.bin_hz[k] >= 2000.0) continue;
    ++inside;
    double col = 0.0;
    for (int m = 0; m < 64; ++m) col += fb.weight(m, k);
    EXPECT_GT(col, 0.0) << "bin " << k;
  }
  EXPECT_GT(inside, 100);
}

TEST(MelFilterbank, MatchesHtkFormula) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-9);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  auto fb = mel_filterbank(4, 1024, 16000, 50, 2000);
  const double step = (hz_to_mel(2000) - hz_to_mel(50)) / 5.0;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(fb.centers[i], mel_to_hz(hz_to_mel(50) + step * (i + 1)), 1e-9);
}

TEST(MelSpectrogram, EightSecondClipHas249Frames) {
  auto spec = preprocess_clip(tone(500, 16000, 8.0));
  EXPECT_EQ(spec.frames, 249);
  EXPECT_EQ(spec.bands, 64);
  EXPECT_DOUBLE_EQ(spec.hop_seconds, 512.0 / 16000.0);
}

TEST(MelSpectrogram, SilenceIsTheLogFloor) {
  AudioClip c;
  c.sample_rate = 16000;
  c.samples.assign(20000, 0.0f);
  auto spec = mel_spectrogram(c);
  const float floor = static_cast<float>(std::log(1e-10));
  for (float v : spec.values) EXPECT_EQ(v, floor);
}

TEST(MelSpectrogram, OneKiloHertzToneLandsInNearestBand) {
  auto spec = mel_spectrogram(tone(1000, 16000, 1.0));
  std::size_t nearest = 0;
  for (std::size_t i = 1; i < spec.band_centers.size(); ++i) {
    if (std::abs(spec.band_centers[i] - 1000) < std::abs(spec.band_centers[nearest] - 1000)) nearest = i;
  }
  for (std::int64_t t = 0; t < spec.frames; ++t) {
    std::int64_t best = 0;
    for (std::int64_t f = 1; f < spec.bands; ++f)
      if (spec.at(t, f) > spec.at(t, best)) best = f;
    EXPECT_EQ(best, static_cast<std::int64_t>(nearest)) << "frame " << t;
  }
}

TEST(MelSpectrogram, LouderAudioNeverLowersEnergy) {
  auto c = tone(700, 16000, 0.5, 0.2);
  for (std::size_t i = 0; i < c.samples.size(); i += 7) c.samples[i] += 0.05f;
  auto quiet = mel_spectrogram(c);
  for (auto& s : c.samples) s *= 3.0f;
  auto loud = mel_spectrogram(c);
  for (std::size_t i = 0; i < quiet.values.size(); ++i) EXPECT_GE(loud.values[i], quiet.values[i]);
}

TEST(MelSpectrogram, DeterministicAndRejectsShortClips) {
  auto c = tone(321, 22050, 1.3);
  EXPECT_EQ(preprocess_clip(c).values, preprocess_clip(c).values);
  AudioClip shorty;
  shorty.sample_rate = 16000;
  shorty.samples.assign(1000, 0.1f);
  EXPECT_THROW(mel_spectrogram(shorty), DataError);
}

TEST(SpecAugment, ZeroMasksIsIdentity) {
  auto spec = mel_spectrogram(tone(440, 16000, 1.0));
  Rng rng(1);
  auto out = spec_augment(spec, {0, 0, 20, 8}, rng);
  EXPECT_EQ(out.values, spec.values);
}

TEST(SpecAugment, FullWidthTimeMaskIsTheMean) {
  auto spec = mel_spectrogram(tone(440, 16000, 1.0));
  const auto mean = static_cast<float>(spec.mean());
  auto copy = spec;
  mask_time(copy, 0, spec.frames, mean);
  for (float v : copy.values) EXPECT_EQ(v, mean);
  EXPECT_NE(copy.values, spec.values);
}

TEST(SpecAugment, MaskedCellsHoldTheMeanAndSeedsRepeat) {
  auto spec = mel_spectrogram(tone(440, 16000, 2.0));
  const auto mean = static_cast<float>(spec.mean());
  Rng a(7), b(7);
  auto x = spec_augment(spec, {}, a);
  auto y = spec_augment(spec, {}, b);
  EXPECT_EQ(x.values, y.values);
  int changed = 0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    if (x.values[i] != spec.values[i]) {
      EXPECT_EQ(x.values[i], mean);
      ++changed;
    }
  }
  EXPECT_GT(changed, 0);
  Rng c(1);
  EXPECT_THROW(spec_augment(spec, {1, 1, 1000, 8}, c), ConfigError);
}

TEST(Wav, RoundTripsPcm16AndFloat) {
  auto dir = temp_dir();
  WavData w;
  w.channels = 2;
  w.sample_rate = 8000;
  w.samples = {0.0f, 0.5f, -0.5f, 0.25f, 0.999f, -1.0f};
  write_wav((dir / "a.wav").string(), w, WavEncoding::kFloat32);
  auto r = read_wav((dir / "a.wav").string());
  EXPECT_EQ(r.channels, 2);
  EXPECT_EQ(r.sample_rate, 8000);
  EXPECT_EQ(r.samples, w.samples);
  write_wav((dir / "b.wav").string(), w, WavEncoding::kPcm16);
  auto q = read_wav((dir / "b.wav").string());
  ASSERT_EQ(q.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(q.samples[i], w.samples[i], 1.0 / 16384);
}

TEST(Wav, Reads24BitPcm) {
  auto path = (temp_dir() / "c.wav").string();
  std::string b = "RIFF";
  auto put = [&](std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  put(36 + 6, 4);
  b += "WAVEfmt ";
  put(16, 4);
  put(1, 2);
  put(1, 2);
  put(16000, 4);
  put(48000, 4);
  put(3, 2);
  put(24, 2);
  b += "data";
  put(6, 4);
  put(0x400000, 3);  // +0.5
  put(0xC00000, 3);  // -0.5
  std::ofstream(path, std::ios::binary) << b;
  auto r = read_wav(path);
  ASSERT_EQ(r.samples.size(), 2u);
  EXPECT_FLOAT_EQ(r.samples[0], 0.5f);
  EXPECT_FLOAT_EQ(r.samples[1], -0.5f);
  std::ofstream(path, std::ios::binary) << "not a wav";
  EXPECT_THROW(read_wav(path), DataError);
}

TEST(SpectrogramCache, RoundTripAndHashPeek) {
  auto path = (temp_dir() / "cache.bin").string();
  FrontendConfig cfg;
  SpectrogramCache cache;
  cache.config_hash = cfg.hash();
  auto s = mel_spectrogram(tone(440, 16000, 1.0));
  s.id = "rec1";
  s.label = 2;
  s.patient_id = "101";
  s.split = "official_train";
  s.age_years = 3.5;
  cache.items.push_back(s);
  save_spectrogram_cache(path, cache);
  auto back = load_spectrogram_cache(path);
  EXPECT_EQ(back.config_hash, cfg.hash());
  ASSERT_NE(back.find("rec1"), nullptr);
  EXPECT_EQ(back.find("rec1")->values, s.values);
  EXPECT_EQ(back.find("rec1")->band_centers, s.band_centers);
  EXPECT_EQ(back.find("rec1")->label, 2);
  EXPECT_EQ(peek_cache_hash(path), cfg.hash());
  FrontendConfig other = cfg;
  other.n_mels = 32;
  EXPECT_NE(other.hash(), cfg.hash());
  EXPECT_EQ(peek_cache_hash((temp_dir() / "missing.bin").string()), std::nullopt);
}
