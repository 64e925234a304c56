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

#include "freqdebias/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace freqdebias {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// "50,55+56,60": types separated by commas, segments of one type by '+'.
std::vector<std::vector<int>> parse_bands(const std::string& key, const std::string& v) {
  std::vector<std::vector<int>> out;
  std::stringstream types(v);
  std::string type;
  while (std::getline(types, type, ',')) {
    std::vector<int> segs;
    std::stringstream parts(trim(type));
    std::string seg;
    while (std::getline(parts, seg, '+')) segs.push_back(static_cast<int>(parse_int(key, trim(seg))));
    if (segs.empty()) throw ConfigError(key + ": empty band in '" + v + "'");
    out.push_back(segs);
  }
  if (out.empty()) throw ConfigError(key + ": no bands given");
  return out;
}

std::string render_bands(const DatasetConfig& d) {
  std::string s;
  for (std::size_t i = 0; i < d.types.size(); ++i) {
    if (i) s += ',';
    for (std::size_t j = 0; j < d.types[i].segments.size(); ++j) {
      if (j) s += '+';
      s += std::to_string(d.types[i].segments[j]);
    }
  }
  return s;
}

struct Entry {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define INT_ENTRY(name, field)                                                                         \
  Entry {                                                                                              \
    name, [](const RunConfig& c) { return std::to_string(c.field); },                                 \
        [](RunConfig& c, const std::string& k, const std::string& v) {                                \
          c.field = static_cast<std::decay_t<decltype(c.field)>>(parse_int(k, v));                    \
        }                                                                                              \
  }
#define REAL_ENTRY(name, field)                                                                        \
  Entry {                                                                                              \
    name, [](const RunConfig& c) { return fmt(c.field); },                                            \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_real(k, v); }  \
  }
#define BOOL_ENTRY(name, field)                                                                        \
  Entry {                                                                                              \
    name, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); },                 \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }  \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const long long s = parse_int(k, v);
              if (s < 0) throw ConfigError(k + ": must be non-negative");
              c.seed = static_cast<std::uint64_t>(s);
            }},
      // Synthetic data.
      Entry{"data_seed", [](const RunConfig& c) { return std::to_string(c.data_seed.value_or(c.seed)); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const long long s = parse_int(k, v);
              if (s < 0) throw ConfigError(k + ": must be non-negative");
              c.data_seed = static_cast<std::uint64_t>(s);
            }},
      INT_ENTRY("image_size", data.image_size),
      INT_ENTRY("channels", data.channels),
      INT_ENTRY("n_train", data.n_train),
      INT_ENTRY("n_test", data.n_test),
      Entry{"bands", [](const RunConfig& c) { return render_bands(c.data); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const auto bands = parse_bands(k, v);
              const double amp = c.data.types.empty() ? 0.05 : c.data.types[0].amplitude;
              c.data.types.clear();
              for (std::size_t i = 0; i < bands.size(); ++i)
                c.data.types.push_back(ForgerySpec{static_cast<int>(i), bands[i], amp});
            }},
      Entry{"amplitude",
            [](const RunConfig& c) { return fmt(c.data.types.empty() ? 0.0 : c.data.types[0].amplitude); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const double a = parse_real(k, v);
              for (auto& t : c.data.types) t.amplitude = a;
            }},
      INT_ENTRY("held_out", data.held_out),
      REAL_ENTRY("common_amplitude", data.common_amplitude),
      INT_ENTRY("tones", data.tones),
      INT_ENTRY("region_size", data.region_size),
      REAL_ENTRY("texture_exponent", data.texture_exponent),
      REAL_ENTRY("texture_std", data.texture_std),
      // Grid the band ids above refer to.
      INT_ENTRY("data_n_radial", data.n_radial),
      INT_ENTRY("data_n_angular", data.n_angular),
      // Segment grid, shared by data, Fo-Mixup and the probe.
      INT_ENTRY("n_radial", train.n_radial),
      INT_ENTRY("n_angular", train.n_angular),
      // Fo-Mixup.
      INT_ENTRY("k", train.mix.k),
      INT_ENTRY("t", train.mix.t),
      REAL_ENTRY("xi_min", train.mix.xi_min),
      REAL_ENTRY("xi_max", train.mix.xi_max),
      REAL_ENTRY("sigma", train.mix.sigma),
      REAL_ENTRY("lambda", train.mix.lambda),
      BOOL_ENTRY("invert_mask", train.mix.invert_mask),
      BOOL_ENTRY("ohem_exclude", train.mix.ohem_exclude),
      // Loss weights.
      REAL_ENTRY("tau", train.weights.tau),
      REAL_ENTRY("eta", train.weights.eta),
      REAL_ENTRY("delta", train.weights.delta),
      REAL_ENTRY("mu", train.weights.mu),
      REAL_ENTRY("rho", train.weights.rho),
      // Training.
      Entry{"mode", [](const RunConfig& c) { return to_string(c.train.mode); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              try {
                c.train.mode = parse_mode(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(k + ": " + e.what());
              }
            }},
      INT_ENTRY("epochs", train.epochs),
      INT_ENTRY("batch_size", train.batch_size),
      REAL_ENTRY("lr", train.lr),
      REAL_ENTRY("momentum", train.momentum),
      REAL_ENTRY("clip_norm", train.clip_norm),
      INT_ENTRY("warmup_epochs", train.warmup_epochs),
      REAL_ENTRY("augment_p", train.augment_p),
      INT_ENTRY("k_cam", train.k_cam),
      Entry{"dms_granularity", [](const RunConfig& c) { return to_string(c.train.dms_granularity); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              try {
                c.train.dms_granularity = parse_granularity(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(k + ": " + e.what());
              }
            }},
      // Detector.
      INT_ENTRY("stage1_channels", train.detector.stage_channels[0]),
      INT_ENTRY("stage2_channels", train.detector.stage_channels[1]),
      INT_ENTRY("stage3_channels", train.detector.stage_channels[2]),
      INT_ENTRY("align_channels", train.detector.align_channels),
      INT_ENTRY("embed_dim", train.detector.embed_dim),
      REAL_ENTRY("kappa_init", train.detector.kappa_init),
      REAL_ENTRY("input_std", train.detector.input_std),
      // Probe.
      INT_ENTRY("probe_max_per_type", probe.max_per_type),
      BOOL_ENTRY("probe_subtract_baseline", probe.subtract_baseline),
      INT_ENTRY("probe_top_bands", probe.top_bands),
  };
  return table;
}

#undef INT_ENTRY
#undef REAL_ENTRY
#undef BOOL_ENTRY

}  // namespace

RunConfig::RunConfig() { data = benchmark_config(3, 0); }

void RunConfig::finalize() {
  data.seed = data_seed.value_or(seed);
  train.seed = seed;
  train.mix.seed = seed;
  probe.n_radial = train.n_radial;
  probe.n_angular = train.n_angular;
  train.detector.in_channels = data.channels;
  if (probe.max_per_type < 0) throw ConfigError("probe_max_per_type must be >= 0");
  if (probe.top_bands < 1) throw ConfigError("probe_top_bands must be >= 1");
  if (train.detector.input_std <= 0) throw ConfigError("input_std must be positive");
  for (int c : train.detector.stage_channels)
    if (c < 1) throw ConfigError("stage channels must be positive");
  if (train.detector.align_channels < 1 || train.detector.embed_dim < 2)
    throw ConfigError("align_channels must be >= 1 and embed_dim >= 2");
  try {
    data.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::stringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": empty key or value");
    if (!kv.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_key_values(ss.str(), path);
}

void apply_config(RunConfig& cfg, const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    const auto& table = entries();
    if (std::none_of(table.begin(), table.end(), [&](const Entry& e) { return key == e.key; }))
      throw ConfigError("unknown config key '" + key + "'");
  }
  // Canonical order so that "bands" lands before "amplitude".
  for (const auto& e : entries()) {
    const auto it = kv.find(e.key);
    if (it != kv.end()) e.set(cfg, e.key, it->second);
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.emplace_back(e.key);
  return out;
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues kv;
  for (const auto& e : entries()) kv[e.key] = e.get(cfg);
  return kv;
}

std::string render(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.key) + " = " + e.get(cfg) + "\n";
  return out;
}

}  // namespace freqdebias
