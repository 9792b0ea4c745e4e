// Copyright 2026 The sedtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Binary checkpoint container: magic "SEDTCKPT", u32 format version, u64
// header length, a JSON header (tensor directory + free-form metadata), then
// raw little-endian float64 blobs in directory order.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sedtune/tensor.hpp"

namespace sedtune {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::string meta_json = "{}";  // serialized JSON object
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws ValidationError on a bad magic, unsupported version or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sedtune
