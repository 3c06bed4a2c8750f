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
#include "respira/binary_io.hpp"

#include <filesystem>

namespace respira::io {

namespace {
constexpr std::uint64_t kMaxBlob = std::uint64_t{1} << 34;
}

BinaryWriter::BinaryWriter(const std::string& path) : path_(path), tmp_path_(path + ".tmp") {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw DataError("cannot open " + tmp_path_ + " for writing");
}

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw DataError("write failed on " + tmp_path_);
}

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  bytes(s.data(), s.size());
}

void BinaryWriter::floats(std::span<const float> v) {
  u64(v.size());
  bytes(v.data(), v.size() * sizeof(float));
}

void BinaryWriter::commit() {
  out_.close();
  if (!out_) throw DataError("closing " + tmp_path_ + " failed");
  std::filesystem::rename(tmp_path_, path_);
  committed_ = true;
}

BinaryWriter::~BinaryWriter() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_path_, ec);
  }
}

BinaryReader::BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw DataError("cannot open " + path);
}

void BinaryReader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in_) throw DataError("unexpected end of file in " + path_);
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}
std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}
std::int64_t BinaryReader::i64() {
  std::int64_t v;
  bytes(&v, sizeof v);
  return v;
}
float BinaryReader::f32() {
  float v;
  bytes(&v, sizeof v);
  return v;
}
double BinaryReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}

std::string BinaryReader::str() {
  const auto n = u64();
  if (n > kMaxBlob) throw DataError("corrupt string length in " + path_);
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

std::vector<float> BinaryReader::floats() {
  const auto n = u64();
  if (n > kMaxBlob) throw DataError("corrupt array length in " + path_);
  std::vector<float> v(n);
  bytes(v.data(), n * sizeof(float));
  return v;
}

void BinaryReader::expect_magic(const std::string& magic) {
  std::string got(magic.size(), '\0');
  bytes(got.data(), got.size());
  if (got != magic) throw DataError(path_ + " is not a " + magic + " file");
}

}  // namespace respira::io
