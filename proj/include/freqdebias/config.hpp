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
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqdebias/dataset.hpp"
#include "freqdebias/probe.hpp"
#include "freqdebias/train.hpp"

namespace freqdebias {

// Everything a run needs, flattened to one key per value. Files use
//   key = value   # comment
// one key per line.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;  // follows seed when unset
  DatasetConfig data;
  TrainConfig train;
  ProbeConfig probe;

  RunConfig();

  // Applies the shared seed and grid to every section and validates.
  void finalize();
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

// Parses the text format; duplicate keys and malformed lines are errors.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "config");
KeyValues read_key_values(const std::string& path);

// Applies keys in the canonical order; unknown keys and unparsable values
// throw ConfigError naming the key.
void apply_config(RunConfig& cfg, const KeyValues& kv);

// Canonical key list and the rendered value of each, 17 significant digits
// for reals.
std::vector<std::string> config_keys();
KeyValues to_key_values(const RunConfig& cfg);
std::string render(const RunConfig& cfg);

}  // namespace freqdebias
