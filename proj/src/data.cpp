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

#include "respira/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "respira/error.hpp"
#include "respira/random.hpp"
#include "respira/wav.hpp"

namespace fs = std::filesystem;

namespace respira {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_char(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream is(s);
  while (std::getline(is, tok, sep)) out.push_back(tok);
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::optional<double> to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::vector<fs::path> files_with_ext(const std::string& root, const std::string& ext) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && lower(e.path().extension().string()) == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void check_interval(const CycleRecord& r, double duration, const std::string& where) {
  if (!(r.onset_s >= 0.0 && r.onset_s < r.offset_s)) {
    throw DataError(where + ": interval [" + std::to_string(r.onset_s) + ", " + std::to_string(r.offset_s) +
                    "] is empty or negative");
  }
  // annotations are rounded to the millisecond
  if (r.offset_s > duration + 1e-3) {
    throw DataError(where + ": interval ends at " + std::to_string(r.offset_s) + " s, recording is " +
                    std::to_string(duration) + " s");
  }
}

}  // namespace

std::string CycleRecord::id() const {
  std::ostringstream os;
  os << recording_id << '@' << std::fixed << std::setprecision(3) << onset_s << '-' << offset_s;
  return os.str();
}

const std::vector<std::string>& icbhi_classes() {
  static const std::vector<std::string> names{"Normal", "Crackle", "Wheeze", "Both"};
  return names;
}

const std::vector<std::string>& sprsound_classes() {
  static const std::vector<std::string> names{"Normal",         "Rhonchi",      "Wheeze", "Stridor",
                                              "Coarse Crackle", "Fine Crackle", "Wheeze and Crackle"};
  return names;
}

int icbhi_label(int crackles, int wheezes) {
  if ((crackles != 0 && crackles != 1) || (wheezes != 0 && wheezes != 1)) {
    throw DataError("crackle/wheeze flags must be 0 or 1");
  }
  return crackles + 2 * wheezes;
}

int sprsound_label(const std::string& type) {
  std::string t = lower(trim(type));
  const auto amp = t.find(" & ");
  if (amp != std::string::npos) t.replace(amp, 3, " and ");
  const auto& names = sprsound_classes();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (lower(names[i]) == t) return static_cast<int>(i);
  std::string known;
  for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
  throw DataError("unknown SPRSound event type '" + type + "' (known: " + known + ")");
}

ParseResult parse_icbhi(const std::string& root) {
  ParseResult res;
  std::map<std::string, std::string> split_of;
  std::map<std::string, double> age_of;
  for (const auto& p : files_with_ext(root, ".txt")) {
    const auto name = lower(p.filename().string());
    if (name.find("train_test") != std::string::npos) {
      std::ifstream is(p);
      std::string line;
      while (std::getline(is, line)) {
        const auto tok = split_ws(line);
        if (tok.size() >= 2) split_of[tok[0]] = lower(tok[1]);
      }
    } else if (name.find("demographic") != std::string::npos) {
      std::ifstream is(p);
      std::string line;
      while (std::getline(is, line)) {
        const auto tok = split_ws(line);
        if (tok.size() >= 2) {
          if (auto a = to_double(tok[1])) age_of[tok[0]] = *a;
        }
      }
    }
  }
  for (const auto& wav : files_with_ext(root, ".wav")) {
    const auto stem = wav.stem().string();
    auto ann = wav;
    ann.replace_extension(".txt");
    if (!fs::exists(ann)) {
      res.warnings.push_back(wav.string() + ": no annotation file, skipped");
      continue;
    }
    const auto parts = split_char(stem, '_');
    if (parts.size() != 5) throw DataError(wav.string() + ": expected <patient>_<rec>_<loc>_<mode>_<device>.wav");
    const double duration = wav_duration(wav.string());
    std::string split = "unsplit";
    if (auto it = split_of.find(stem); it != split_of.end()) {
      split = it->second;
    } else if (!split_of.empty()) {
      res.warnings.push_back(stem + ": not listed in the split file, marked unsplit");
    }
    std::ifstream is(ann);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      const std::string where = ann.string() + ":" + std::to_string(line_no);
      const auto tok = split_ws(line);
      std::optional<double> b, e, c, w;
      if (tok.size() == 4) {
        b = to_double(tok[0]);
        e = to_double(tok[1]);
        c = to_double(tok[2]);
        w = to_double(tok[3]);
      }
      if (!b || !e || !c || !w || (*c != 0 && *c != 1) || (*w != 0 && *w != 1)) {
        throw DataError(where + ": malformed annotation line '" + trim(line) +
                        "' (expected: begin end crackles wheezes)");
      }
      CycleRecord r;
      r.audio_path = wav.string();
      r.recording_id = stem;
      r.onset_s = *b;
      r.offset_s = *e;
      r.label = icbhi_label(static_cast<int>(*c), static_cast<int>(*w));
      r.patient_id = parts[0];
      r.device_id = parts[4];
      r.split = split;
      if (auto it = age_of.find(parts[0]); it != age_of.end()) r.age_years = it->second;
      check_interval(r, duration, where);
      res.records.push_back(std::move(r));
    }
  }
  return res;
}

SprEdition parse_spr_edition(const std::string& s) {
  if (s == "2022") return SprEdition::k2022;
  if (s == "2023") return SprEdition::k2023;
  throw ConfigError("unknown SPRSound edition '" + s + "' (2022, 2023)");
}

namespace {

double json_ms(const nlohmann::json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    if (auto d = to_double(trim(v.get<std::string>()))) return *d;
  }
  throw DataError(where + ": event time must be a number of milliseconds");
}

/// `path` is relative to the corpus root, so directories above it never count.
std::string spr_split(const fs::path& path, SprEdition edition) {
  std::string split = edition == SprEdition::k2023 ? "test" : "unsplit";
  for (const auto& part : path.parent_path()) {
    const auto p = lower(part.string());
    if (p.find("train") != std::string::npos) split = "train";
    if (p.find("test") != std::string::npos || p.find("valid") != std::string::npos) split = "test";
  }
  if (split == "test") {
    for (const auto& part : path.parent_path()) {
      const auto p = lower(part.string());
      if (p.find("intra") != std::string::npos) return "test_intra";
      if (p.find("inter") != std::string::npos) return "test_inter";
    }
  }
  return split;
}

}  // namespace

ParseResult parse_sprsound(const std::string& root, SprEdition edition) {
  ParseResult res;
  std::map<std::string, fs::path> wav_of;
  for (const auto& w : files_with_ext(root, ".wav")) wav_of[w.stem().string()] = w;
  std::vector<fs::path> annotations = files_with_ext(root, ".json");
  for (const auto& t : files_with_ext(root, ".txt"))
    if (wav_of.count(t.stem().string())) annotations.push_back(t);
  std::sort(annotations.begin(), annotations.end());
  for (const auto& ann : annotations) {
    const auto stem = ann.stem().string();
    const auto wit = wav_of.find(stem);
    if (wit == wav_of.end()) {
      res.warnings.push_back(ann.string() + ": no matching WAV, skipped");
      continue;
    }
    const double duration = wav_duration(wit->second.string());
    const auto parts = split_char(stem, '_');
    CycleRecord base;
    base.audio_path = wit->second.string();
    base.recording_id = stem;
    base.patient_id = parts.empty() ? stem : parts[0];
    if (parts.size() > 1) {
      if (auto a = to_double(parts[1])) base.age_years = *a;
    }
    base.split = spr_split(fs::relative(wit->second, root), edition);
    std::vector<std::tuple<double, double, std::string, std::string>> events;  // ms, ms, type, where
    if (lower(ann.extension().string()) == ".json") {
      std::ifstream is(ann);
      nlohmann::json j;
      try {
        is >> j;
      } catch (const nlohmann::json::exception& e) {
        throw DataError(ann.string() + ": invalid JSON: " + e.what());
      }
      if (!j.contains("event_annotation") || !j["event_annotation"].is_array()) {
        throw DataError(ann.string() + ": missing event_annotation list");
      }
      int k = 0;
      for (const auto& ev : j["event_annotation"]) {
        const std::string where = ann.string() + " event " + std::to_string(k++);
        if (!ev.contains("start") || !ev.contains("end") || !ev.contains("type") || !ev["type"].is_string()) {
          throw DataError(where + ": events need start, end and type");
        }
        events.emplace_back(json_ms(ev["start"], where), json_ms(ev["end"], where), ev["type"].get<std::string>(),
                            where);
      }
    } else {
      std::ifstream is(ann);
      std::string line;
      int line_no = 0;
      while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = ann.string() + ":" + std::to_string(line_no);
        std::istringstream ls(line);
        std::string s, e, type;
        ls >> s >> e;
        std::getline(ls, type);
        auto sv = to_double(s), ev = to_double(e);
        if (!sv || !ev || trim(type).empty()) throw DataError(where + ": expected 'start_ms end_ms type'");
        events.emplace_back(*sv, *ev, trim(type), where);
      }
    }
    for (const auto& [s, e, type, where] : events) {
      CycleRecord r = base;
      r.onset_s = s / 1000.0;
      r.offset_s = e / 1000.0;
      try {
        r.label = sprsound_label(type);
      } catch (const DataError& err) {
        throw DataError(where + ": " + err.what());
      }
      check_interval(r, duration, where);
      res.records.push_back(std::move(r));
    }
  }
  return res;
}

std::vector<Spectrogram> records_to_spectrograms(const std::vector<CycleRecord>& records,
                                                 const FrontendConfig& cfg) {
  std::vector<Spectrogram> out;
  out.reserve(records.size());
  std::string loaded_path;
  WavData wav;
  for (const auto& r : records) {
    if (r.audio_path != loaded_path) {
      wav = read_wav(r.audio_path);
      loaded_path = r.audio_path;
    }
    const auto frames = static_cast<std::int64_t>(wav.frames());
    const auto b = std::clamp<std::int64_t>(std::llround(r.onset_s * wav.sample_rate), 0, frames);
    const auto e = std::clamp<std::int64_t>(std::llround(r.offset_s * wav.sample_rate), 0, frames);
    if (e <= b) throw DataError(r.id() + ": cycle lies outside its recording");
    AudioClip clip;
    clip.channels = wav.channels;
    clip.sample_rate = wav.sample_rate;
    clip.samples.assign(wav.samples.begin() + b * wav.channels, wav.samples.begin() + e * wav.channels);
    clip.source_id = r.id();
    clip.patient_id = r.patient_id;
    clip.age_years = r.age_years;
    Spectrogram s = preprocess_clip(clip, cfg);
    s.label = r.label;
    s.id = r.id();
    s.patient_id = r.patient_id;
    s.age_years = r.age_years;
    s.split = r.split;
    out.push_back(std::move(s));
  }
  return out;
}

void write_records_csv(const std::string& path, const std::vector<CycleRecord>& records) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "id,audio_path,onset_s,offset_s,label,patient_id,age_years,device_id,split\n";
  os << std::setprecision(10);
  for (const auto& r : records) {
    os << r.id() << ',' << r.audio_path << ',' << r.onset_s << ',' << r.offset_s << ',' << r.label << ','
       << r.patient_id << ',';
    if (std::isfinite(r.age_years)) os << r.age_years;
    os << ',' << r.device_id << ',' << r.split << '\n';
  }
}

std::vector<std::vector<int>> SynthSpec::planted_bands() const {
  if (!planted.empty()) return planted;
  // class 0 is background only; the other classes share 8 bands, class c
  // spaced c apart and centered in its own slice of the band axis
  constexpr int kTotal = 8;
  const int signal = n_classes - 1;
  const int per = std::max(1, kTotal / std::max(1, signal));
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_classes));
  for (int c = 1; c < n_classes; ++c) {
    const int stride = c;
    const int span = (per - 1) * stride + 1;
    const int start = std::max(0, bands * (2 * c - 1) / (2 * signal) - span / 2);
    for (int j = 0; j < per; ++j) out[c].push_back(start + j * stride);
  }
  return out;
}

std::vector<int> SynthSpec::all_planted() const {
  std::set<int> s;
  for (const auto& c : planted_bands()) s.insert(c.begin(), c.end());
  return {s.begin(), s.end()};
}

int synth_oracle_predict(const Spectrogram& s, const std::vector<std::vector<int>>& planted, double snr_db) {
  // a class without planted bands scores the midpoint between the mean log
  // background (log noise - Euler gamma) and the log signal level
  const double noise = std::isinf(snr_db) && snr_db > 0 ? 0.0 : std::pow(10.0, -snr_db / 10.0);
  const double background = noise > 0.0 ? std::log(noise) - 0.5772156649015329 : std::log(1e-10);
  const double threshold = 0.5 * (background + std::log(1.0 + noise));
  int best = 0;
  double best_e = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < planted.size(); ++c) {
    double e = threshold;
    if (!planted[c].empty()) {
      e = 0.0;
      for (std::int64_t t = 0; t < s.frames; ++t)
        for (int f : planted[c]) e += s.at(t, f);
      e /= static_cast<double>(s.frames * planted[c].size());
    }
    if (e > best_e) {
      best_e = e;
      best = static_cast<int>(c);
    }
  }
  return best;
}

SynthCorpus synth_corpus(const SynthSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synthetic corpus needs at least 2 classes");
  if (spec.n_per_class < 1 || spec.frames < 1 || spec.bands < 1 || spec.n_patients < 1) {
    throw ConfigError("synthetic corpus sizes must be positive");
  }
  const auto planted = spec.planted_bands();
  if (static_cast<int>(planted.size()) != spec.n_classes) throw ConfigError("one planted band set per class");
  std::set<int> used;
  for (const auto& c : planted) {
    for (int f : c) {
      if (f < 0 || f >= spec.bands) throw ConfigError("planted band " + std::to_string(f) + " outside [0,F)");
      if (!used.insert(f).second && spec.disjoint) {
        throw ConfigError("planted band " + std::to_string(f) + " is shared between classes but disjoint sets were requested");
      }
    }
  }
  if (used.empty()) throw ConfigError("synthetic corpus needs at least one planted band");
  const double noise = std::isinf(spec.snr_db) && spec.snr_db > 0 ? 0.0 : std::pow(10.0, -spec.snr_db / 10.0);
  constexpr double kFloor = 1e-10;
  Rng rng(spec.seed);
  SynthCorpus corpus;
  int serial = 0;
  for (int i = 0; i < spec.n_per_class; ++i) {
    for (int c = 0; c < spec.n_classes; ++c) {
      Spectrogram s;
      s.frames = spec.frames;
      s.bands = spec.bands;
      s.values.resize(static_cast<std::size_t>(spec.frames * spec.bands));
      s.hop_seconds = 512.0 / 16000.0;
      for (int f = 0; f < spec.bands; ++f) {
        const double mel = hz_to_mel(50.0) + (hz_to_mel(2000.0) - hz_to_mel(50.0)) * (f + 1) / (spec.bands + 1);
        s.band_centers.push_back(mel_to_hz(mel));
      }
      const double period = 4.0 + 12.0 * rng.uniform();
      const double phase = 2.0 * 3.141592653589793 * rng.uniform();
      std::vector<bool> on(static_cast<std::size_t>(spec.bands), false);
      for (int f : planted[c]) on[f] = true;
      for (int t = 0; t < spec.frames; ++t) {
        const double pulse = 1.0 + 0.5 * std::sin(2.0 * 3.141592653589793 * t / period + phase);
        for (int f = 0; f < spec.bands; ++f) {
          double p = noise > 0.0 ? -std::log(1.0 - rng.uniform()) * noise : 0.0;
          if (on[f]) p += pulse;
          s.at(t, f) = static_cast<float>(std::log(p + kFloor));
        }
      }
      const int patient = serial % spec.n_patients;
      s.label = c;
      s.id = "synth_" + std::to_string(serial);
      s.patient_id = "p" + std::to_string(patient);
      s.age_years = 2.0 + 70.0 * patient / std::max(1, spec.n_patients - 1);
      s.split = "train";
      corpus.items.push_back(std::move(s));
      ++serial;
    }
  }
  int hits = 0;
  for (const auto& s : corpus.items) hits += synth_oracle_predict(s, planted, spec.snr_db) == s.label ? 1 : 0;
  corpus.oracle_accuracy = static_cast<double>(hits) / static_cast<double>(corpus.items.size());
  return corpus;
}

}  // namespace respira
