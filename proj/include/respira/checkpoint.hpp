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
// Weight checkpoints: an ordered name -> tensor table plus string metadata.
//
// Layout (little-endian):
//   "RSPRCKPT" | u32 version | u64 n_meta | (str key, str value)*
//   | u64 n_tensors | (str name, u64 rank, i64 dims[rank], u64 n, f32 data[n])*
// Strings are u64 length + bytes.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "respira/tensor.hpp"

namespace respira {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace respira
