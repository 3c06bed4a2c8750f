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

#include "respira/mask.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "respira/error.hpp"

namespace respira {

std::string mask_origin_name(MaskOrigin o) {
  switch (o) {
    case MaskOrigin::kFull: return "full";
    case MaskOrigin::kImportance: return "importance";
    case MaskOrigin::kBackward: return "backward";
  }
  return "full";
}

MaskOrigin parse_mask_origin(const std::string& name) {
  if (name == "full") return MaskOrigin::kFull;
  if (name == "importance") return MaskOrigin::kImportance;
  if (name == "backward") return MaskOrigin::kBackward;
  throw ConfigError("unknown mask origin '" + name + "'");
}

FrequencyMask FrequencyMask::full(int bands) {
  if (bands < 1) throw ConfigError("mask needs at least one band");
  FrequencyMask m;
  m.keep.assign(static_cast<std::size_t>(bands), true);
  return m;
}

int FrequencyMask::kept() const {
  int n = 0;
  for (bool k : keep) n += k ? 1 : 0;
  return n;
}

std::vector<int> FrequencyMask::kept_indices() const {
  std::vector<int> out;
  for (int f = 0; f < bands(); ++f)
    if (keep[f]) out.push_back(f);
  return out;
}

FrequencyMask FrequencyMask::without(const std::vector<int>& removed) const {
  FrequencyMask m = *this;
  for (int f : removed) {
    if (f < 0 || f >= bands() || !m.keep[f]) {
      throw ConfigError("band " + std::to_string(f) + " is not a kept band of this mask");
    }
    m.keep[f] = false;
  }
  m.history.push_back(removed);
  return m;
}

std::string FrequencyMask::bits() const {
  std::string s;
  for (bool k : keep) s += k ? '1' : '0';
  return s;
}

void FrequencyMask::validate() const {
  std::set<int> seen;
  for (const auto& step : history) {
    for (int f : step) {
      if (f < 0 || f >= bands()) throw ConfigError("mask history index " + std::to_string(f) + " out of range");
      if (!seen.insert(f).second) throw ConfigError("mask history removes band " + std::to_string(f) + " twice");
      if (keep[f]) throw ConfigError("mask history removes band " + std::to_string(f) + " but it is kept");
    }
  }
  if (static_cast<int>(seen.size()) != bands() - kept()) {
    throw ConfigError("mask history does not account for every removed band");
  }
}

Spectrogram apply_mask(const Spectrogram& spec, const FrequencyMask& mask) {
  if (mask.bands() != spec.bands) {
    throw ShapeError("mask has " + std::to_string(mask.bands()) + " bands, spectrogram " + spec.id + " has " +
                     std::to_string(spec.bands));
  }
  const auto idx = mask.kept_indices();
  Spectrogram out = spec;
  out.bands = static_cast<std::int64_t>(idx.size());
  out.values.resize(static_cast<std::size_t>(spec.frames * out.bands));
  for (std::int64_t t = 0; t < spec.frames; ++t)
    for (std::size_t j = 0; j < idx.size(); ++j) out.values[t * out.bands + j] = spec.at(t, idx[j]);
  if (static_cast<int>(spec.band_centers.size()) == spec.bands) {
    out.band_centers.clear();
    for (int f : idx) out.band_centers.push_back(spec.band_centers[f]);
  }
  return out;
}

std::vector<Spectrogram> apply_mask(const std::vector<Spectrogram>& specs, const FrequencyMask& mask) {
  std::vector<Spectrogram> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(apply_mask(s, mask));
  return out;
}

void save_mask(const std::string& path, const FrequencyMask& mask) {
  mask.validate();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw DataError("cannot write mask file " + path);
    os << "respira-mask " << kMaskFileVersion << '\n';
    os << "bands " << mask.bands() << '\n';
    os << "origin " << mask_origin_name(mask.origin) << '\n';
    os << "config_hash " << (mask.config_hash.empty() ? "-" : mask.config_hash) << '\n';
    os << "keep " << mask.bits() << '\n';
    for (const auto& step : mask.history) {
      os << "removed ";
      for (std::size_t i = 0; i < step.size(); ++i) os << (i ? "," : "") << step[i];
      os << '\n';
    }
    if (!os) throw DataError("failed writing mask file " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

FrequencyMask load_mask(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open mask file " + path);
  FrequencyMask m;
  std::string line;
  int line_no = 0, bands = -1;
  auto fail = [&](const std::string& why) {
    throw DataError(path + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (key == "respira-mask") {
      if (value != std::to_string(kMaskFileVersion)) fail("unsupported mask version " + value);
    } else if (key == "bands") {
      bands = std::atoi(value.c_str());
    } else if (key == "origin") {
      try {
        m.origin = parse_mask_origin(value);
      } catch (const Error& e) {
        fail(e.what());
      }
    } else if (key == "config_hash") {
      m.config_hash = value == "-" ? "" : value;
    } else if (key == "keep") {
      for (char c : value) {
        if (c != '0' && c != '1') fail("keep bitstring must be 0/1");
        m.keep.push_back(c == '1');
      }
    } else if (key == "removed") {
      std::vector<int> step;
      std::istringstream vs(value);
      std::string item;
      while (std::getline(vs, item, ',')) step.push_back(std::atoi(item.c_str()));
      m.history.push_back(step);
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (bands < 1 || m.bands() != bands) throw DataError(path + ": keep bitstring does not match band count");
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
  return m;
}

}  // namespace respira
