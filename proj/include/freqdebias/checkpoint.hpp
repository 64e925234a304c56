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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freqdebias/autodiff.hpp"

// Versioned binary container for named parameter arrays.
//
//   magic   "FQDBCKPT" (8 bytes)
//   version u32 (currently 1)
//   count   u32
//   count x { u32 name length, name bytes, u32 rank, rank x u32 dims,
//             u64 value count, value count x f64 }
//
// All integers and floats are little-endian.

namespace freqdebias::ad {

struct NamedArray {
  std::string name;
  Shape shape;
  Array values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<NamedArray>& entries);
std::vector<NamedArray> load_checkpoint(const std::string& path);

std::vector<NamedArray> snapshot(const std::vector<Parameter*>& params);
// Copies values into matching parameters by name; throws on missing names
// or shape mismatch.
void restore(const std::vector<NamedArray>& entries, const std::vector<Parameter*>& params);

}  // namespace freqdebias::ad
