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

// Dataset ingestion: ICBHI 2017 cycles, SPRSound events and the synthetic
// planted-band corpus.

#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "respira/audio.hpp"

namespace respira {

struct CycleRecord {
  std::string audio_path;
  std::string recording_id;
  double onset_s = 0.0;
  double offset_s = 0.0;
  int label = 0;
  std::string patient_id;
  double age_years = std::numeric_limits<double>::quiet_NaN();
  std::string device_id;
  /// "train", "test", "test_intra", "test_inter" or "unsplit".
  std::string split = "unsplit";

  std::string id() const;
};

/// Normal, Crackle, Wheeze, Both.
const std::vector<std::string>& icbhi_classes();
/// Normal, Rhonchi, Wheeze, Stridor, Coarse Crackle, Fine Crackle,
/// Wheeze and Crackle.
const std::vector<std::string>& sprsound_classes();

/// (crackles, wheezes) flags to the 4-class label.
int icbhi_label(int crackles, int wheezes);
/// Throws DataError listing the offending string for unknown types.
int sprsound_label(const std::string& type);

struct ParseResult {
  std::vector<CycleRecord> records;
  std::vector<std::string> warnings;
};

/// Expects <patient>_<rec>_<loc>_<mode>_<device>.wav with a same-stem .txt
/// annotation, an optional *train_test*.txt split list and an optional
/// *demographic*.txt file. Records are ordered by recording path, then onset.
ParseResult parse_icbhi(const std::string& root);

enum class SprEdition { k2022, k2023 };
SprEdition parse_spr_edition(const std::string& s);

/// WAV files with same-stem .json ("event_annotation": [{start, end, type}],
/// times in ms) or .txt ("start end type" per line) annotations. Split tags
/// come from the directory names (train / test, intra / inter).
ParseResult parse_sprsound(const std::string& root, SprEdition edition);

/// Cuts each record out of its recording and runs the frontend. Each WAV is
/// read once.
std::vector<Spectrogram> records_to_spectrograms(const std::vector<CycleRecord>& records,
                                                 const FrontendConfig& cfg);

void write_records_csv(const std::string& path, const std::vector<CycleRecord>& records);

struct SynthSpec {
  int n_classes = 2;
  /// Band indices carrying each class's signal; a class may have none.
  /// Empty selects the default layout: class 0 is background only and the
  /// other classes share 8 bands, class c's bands c apart.
  std::vector<std::vector<int>> planted;
  double snr_db = 10.0;
  int n_per_class = 200;
  int frames = 249;
  int bands = 64;
  int n_patients = 20;
  bool disjoint = true;
  std::uint64_t seed = 0;

  /// Planted sets after defaulting.
  std::vector<std::vector<int>> planted_bands() const;
  std::vector<int> all_planted() const;
};

struct SynthCorpus {
  std::vector<Spectrogram> items;
  /// Accuracy of the band-energy oracle classifier on the generated data.
  double oracle_accuracy = 0.0;
};

/// Background is exponential noise of power 10^(-snr/10) in every band; each
/// sample adds unit-power signal, modulated by slow pulses, in its class's
/// planted bands. Values are log(power + 1e-10). snr = inf gives a noiseless
/// background at exactly log(1e-10).
SynthCorpus synth_corpus(const SynthSpec& spec);

/// Mean log energy over each class's planted bands; predicts the argmax. A
/// class without planted bands scores a threshold between the background
/// and signal levels.
int synth_oracle_predict(const Spectrogram& s, const std::vector<std::vector<int>>& planted, double snr_db);

}  // namespace respira
