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

#include "respira/spectrogram_cache.hpp"

#include <filesystem>

#include "respira/binary_io.hpp"
#include "respira/error.hpp"

namespace respira {

namespace {
constexpr const char* kMagic = "RSPRSPEC";
}

const Spectrogram* SpectrogramCache::find(const std::string& id) const {
  for (const auto& s : items)
    if (s.id == id) return &s;
  return nullptr;
}

void save_spectrogram_cache(const std::string& path, const SpectrogramCache& cache) {
  io::BinaryWriter w(path);
  w.bytes(kMagic, 8);
  w.u32(kSpectrogramCacheVersion);
  w.str(cache.config_hash);
  w.u64(cache.items.size());
  for (const auto& s : cache.items) {
    w.str(s.id);
    w.str(s.patient_id);
    w.str(s.split);
    w.i64(s.label);
    w.f64(s.age_years);
    w.i64(s.frames);
    w.i64(s.bands);
    w.f64(s.hop_seconds);
    w.u64(s.band_centers.size());
    for (double c : s.band_centers) w.f64(c);
    w.floats(s.values);
  }
  w.commit();
}

SpectrogramCache load_spectrogram_cache(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  const auto version = r.u32();
  if (version != kSpectrogramCacheVersion) {
    throw DataError(path + ": unsupported spectrogram cache version " + std::to_string(version));
  }
  SpectrogramCache cache;
  cache.config_hash = r.str();
  const auto n = r.u64();
  cache.items.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 20)));
  for (std::uint64_t i = 0; i < n; ++i) {
    Spectrogram s;
    s.id = r.str();
    s.patient_id = r.str();
    s.split = r.str();
    s.label = static_cast<int>(r.i64());
    s.age_years = r.f64();
    s.frames = r.i64();
    s.bands = r.i64();
    s.hop_seconds = r.f64();
    const auto nc = r.u64();
    if (nc != static_cast<std::uint64_t>(s.bands)) throw DataError(path + ": band metadata length mismatch");
    s.band_centers.resize(static_cast<std::size_t>(nc));
    for (auto& c : s.band_centers) c = r.f64();
    s.values = r.floats();
    if (static_cast<std::int64_t>(s.values.size()) != s.frames * s.bands) {
      throw DataError(path + ": spectrogram " + s.id + " has inconsistent dimensions");
    }
    cache.items.push_back(std::move(s));
  }
  return cache;
}

std::optional<std::string> peek_cache_hash(const std::string& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    io::BinaryReader r(path);
    r.expect_magic(kMagic);
    if (r.u32() != kSpectrogramCacheVersion) return std::nullopt;
    return r.str();
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace respira
