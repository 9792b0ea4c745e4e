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

#include "sedtune/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "sedtune/error.hpp"

namespace sedtune {

namespace {
constexpr char kMagic[8] = {'S', 'E', 'D', 'T', 'C', 'K', 'P', 'T'};
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw ValidationError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["meta"] = nlohmann::json::parse(ckpt.meta_json);
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}});
  const std::string h = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = h.size();
    f.write(kMagic, 8);
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : ckpt.tensors)
      f.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!f) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw ValidationError(path.string() + " is not a sedtune checkpoint");
  if (!f.read(reinterpret_cast<char*>(&version), sizeof version)) throw ValidationError("truncated checkpoint");
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  if (!f.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ull << 32))
    throw ValidationError("truncated checkpoint");
  std::string h(len, '\0');
  if (!f.read(h.data(), static_cast<std::streamsize>(len))) throw ValidationError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  ck.meta_json = header.at("meta").dump();
  for (const auto& t : header.at("tensors")) {
    Tensor v(t.at("shape").get<Shape>());
    if (!f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
      throw ValidationError("truncated checkpoint data for " + t.at("name").get<std::string>());
    ck.tensors.push_back({t.at("name").get<std::string>(), std::move(v)});
  }
  return ck;
}

}  // namespace sedtune
