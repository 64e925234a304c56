/*
 * Copyright 2026 The FreqDebias Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "freqdebias/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace freqdebias::ad {

namespace {

constexpr char kMagic[8] = {'F', 'Q', 'D', 'B', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedArray>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (numel(e.shape) != static_cast<std::size_t>(e.values.size())) {
      throw ShapeError("checkpoint: entry '" + e.name + "' size does not match " +
                       to_string(e.shape));
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(e.values.size()));
    for (Eigen::Index i = 0; i < e.values.size(); ++i) put<double>(os, e.values(i));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::vector<NamedArray> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is);
  std::vector<NamedArray> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    const auto name_len = get<std::uint32_t>(is);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<int>(get<std::uint32_t>(is)));
    const auto n = get<std::uint64_t>(is);
    if (n != numel(e.shape)) {
      throw std::runtime_error("checkpoint: entry '" + e.name + "' has inconsistent size");
    }
    e.values.resize(static_cast<Eigen::Index>(n));
    for (std::uint64_t k = 0; k < n; ++k) e.values(static_cast<Eigen::Index>(k)) = get<double>(is);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<NamedArray> snapshot(const std::vector<Parameter*>& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back({p->name, p->shape, p->value});
  return out;
}

void restore(const std::vector<NamedArray>& entries, const std::vector<Parameter*>& params) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: missing parameter '" + p->name + "'");
    }
    if (it->second->shape != p->shape) {
      throw ShapeError("checkpoint: parameter '" + p->name + "' has shape " +
                       to_string(it->second->shape) + ", expected " + to_string(p->shape));
    }
    p->value = it->second->values;
    p->zero_grad();
  }
}

}  // namespace freqdebias::ad
