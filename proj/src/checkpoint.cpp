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
#include "respira/checkpoint.hpp"

#include "respira/binary_io.hpp"
#include "respira/error.hpp"

namespace respira {

namespace {
constexpr const char* kMagic = "RSPRCKPT";
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::BinaryWriter w(path);
  w.bytes(kMagic, 8);
  w.u32(kCheckpointVersion);
  w.u64(ckpt.metadata.size());
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u64(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    const auto& shape = t.value.shape();
    w.u64(shape.size());
    for (auto d : shape) w.i64(d);
    w.floats(t.value.data());
  }
  w.commit();
}

Checkpoint load_checkpoint(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_meta = r.u64();
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    auto key = r.str();
    ckpt.metadata[key] = r.str();
  }
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto rank = r.u64();
    if (rank > 16) throw DataError(path + ": corrupt tensor rank for " + t.name);
    Shape shape(rank);
    for (auto& d : shape) d = r.i64();
    auto values = r.floats();
    t.value = Tensor::from(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace respira
