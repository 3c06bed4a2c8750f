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

#include "respira/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "respira/error.hpp"

namespace respira {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}
void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open WAV file " + path);
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw DataError(path + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::size_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, buf.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw DataError(path + ": truncated fmt chunk");
      format = le16(buf.data() + body);
      channels = le16(buf.data() + body + 2);
      rate = le32(buf.data() + body + 4);
      bits = le16(buf.data() + body + 14);
      if (format == kFormatExtensible) {
        if (avail < 26) throw DataError(path + ": truncated extensible fmt chunk");
        format = le16(buf.data() + body + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = buf.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0) throw DataError(path + ": missing or invalid fmt chunk");
  if (!data) throw DataError(path + ": missing data chunk");

  const std::size_t width = bits / 8;
  const bool ok = (format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) ||
                  (format == kFormatFloat && (bits == 32 || bits == 64));
  if (!ok) {
    throw DataError(path + ": unsupported WAV encoding (format " + std::to_string(format) + ", " +
                    std::to_string(bits) + " bits)");
  }
  const std::size_t n = data_size / width;
  WavData wav;
  wav.channels = channels;
  wav.sample_rate = rate;
  wav.samples.resize(n - n % channels);
  for (std::size_t i = 0; i < wav.samples.size(); ++i) {
    const unsigned char* p = data + i * width;
    float v = 0.0f;
    if (format == kFormatFloat) {
      if (bits == 32) {
        std::memcpy(&v, p, 4);
      } else {
        double d;
        std::memcpy(&d, p, 8);
        v = static_cast<float>(d);
      }
    } else {
      switch (bits) {
        case 8: v = (static_cast<float>(p[0]) - 128.0f) / 128.0f; break;
        case 16: v = static_cast<float>(static_cast<std::int16_t>(le16(p))) / 32768.0f; break;
        case 24: {
          std::int32_t s = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
          if (s & 0x800000) s -= 0x1000000;
          v = static_cast<float>(s) / 8388608.0f;
          break;
        }
        default: v = static_cast<float>(static_cast<double>(static_cast<std::int32_t>(le32(p))) / 2147483648.0);
      }
    }
    wav.samples[i] = v;
  }
  return wav;
}

double wav_duration(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open WAV file " + path);
  unsigned char head[12];
  if (!in.read(reinterpret_cast<char*>(head), 12) || std::memcmp(head, "RIFF", 4) != 0 ||
      std::memcmp(head + 8, "WAVE", 4) != 0) {
    throw DataError(path + ": not a RIFF/WAVE file");
  }
  std::uint32_t byte_rate = 0;
  unsigned char chunk[8];
  while (in.read(reinterpret_cast<char*>(chunk), 8)) {
    const std::uint32_t size = le32(chunk + 4);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      unsigned char fmt[16];
      if (size < 16 || !in.read(reinterpret_cast<char*>(fmt), 16)) throw DataError(path + ": truncated fmt chunk");
      byte_rate = le32(fmt + 8);
      in.seekg(static_cast<std::streamoff>(size - 16 + (size & 1)), std::ios::cur);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (byte_rate == 0) throw DataError(path + ": data chunk before a valid fmt chunk");
      const auto start = static_cast<std::uint64_t>(in.tellg());
      in.seekg(0, std::ios::end);
      const auto avail = std::min<std::uint64_t>(size, static_cast<std::uint64_t>(in.tellg()) - start);
      return static_cast<double>(avail) / byte_rate;
    } else {
      in.seekg(static_cast<std::streamoff>(size + (size & 1)), std::ios::cur);
    }
  }
  throw DataError(path + ": missing data chunk");
}

void write_wav(const std::string& path, const WavData& wav, WavEncoding encoding) {
  if (wav.channels < 1 || wav.sample_rate <= 0) throw ConfigError("write_wav: invalid channel count or sample rate");
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint16_t format = encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat;
  const auto block = static_cast<std::uint16_t>(wav.channels * bits / 8);
  const auto rate = static_cast<std::uint32_t>(std::lround(wav.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(wav.samples.size() * bits / 8);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, format);
  put16(out, static_cast<std::uint16_t>(wav.channels));
  put32(out, rate);
  put32(out, rate * block);
  put16(out, block);
  put16(out, bits);
  out += "data";
  put32(out, data_bytes);
  for (float s : wav.samples) {
    if (encoding == WavEncoding::kPcm16) {
      const auto q = static_cast<std::int32_t>(std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f));
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      std::uint32_t u;
      std::memcpy(&u, &s, 4);
      put32(out, u);
    }
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed on " + path);
}

}  // namespace respira
