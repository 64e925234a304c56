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

#include "freqdebias/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "freqdebias/image_io.hpp"
#include "freqdebias/parallel.hpp"
#include "freqdebias/random.hpp"

namespace freqdebias {

namespace fs = std::filesystem;

void DatasetConfig::validate() const {
  if (image_size < 8 || image_size % 8) {
    throw std::invalid_argument("image_size must be a positive multiple of 8");
  }
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("sample counts must be >= 1");
  if (types.empty()) throw std::invalid_argument("at least one forgery type is required");
  if (held_out >= 0 && types.size() < 2) {
    throw std::invalid_argument("a held-out split needs at least 2 forgery types");
  }
  if (region_size < 4 || region_size > image_size) {
    throw std::invalid_argument("region_size must lie in [4, image_size]");
  }
  if (tones < 1) throw std::invalid_argument("tones must be >= 1");
  if (!(common_amplitude >= 0) || !(texture_std > 0) || !(texture_exponent >= 0)) {
    throw std::invalid_argument("texture and artifact scales must be non-negative");
  }
  const int total = n_radial * n_angular;
  std::set<int> ids;
  std::map<int, int> owner;
  bool held_found = held_out < 0;
  for (const auto& t : types) {
    if (!ids.insert(t.type_id).second) {
      throw std::invalid_argument("duplicate forgery type id " + std::to_string(t.type_id));
    }
    if (t.type_id == held_out) held_found = true;
    if (t.segments.empty()) throw std::invalid_argument("forgery type " + std::to_string(t.type_id) + " has no band");
    if (!(t.amplitude >= 0)) throw std::invalid_argument("artifact amplitude must be >= 0");
    for (int z : t.segments) {
      if (z <= 0 || z >= total) {
        throw std::invalid_argument("band segment " + std::to_string(z) + " outside (0, " + std::to_string(total) + ")");
      }
      auto [it, fresh] = owner.emplace(z, t.type_id);
      if (!fresh && it->second != t.type_id) {
        throw std::invalid_argument("forgery bands overlap: types " + std::to_string(it->second) + " and " +
                                    std::to_string(t.type_id) + " share segment " + std::to_string(z));
      }
    }
  }
  if (!held_found) throw std::invalid_argument("held-out type " + std::to_string(held_out) + " is not defined");
}

DatasetConfig benchmark_config(int n_types, std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.seed = seed;
  cfg.common_amplitude = 0.02;
  if (n_types < 1 || n_types > 6) throw std::invalid_argument("benchmark supports 1 to 6 types");
  // Training types share radial bin 3; the held-out type sits in bin 1.
  const int angular[] = {2, 7, 12, 4, 9};
  for (int i = 0; i < n_types; ++i) {
    ForgerySpec t;
    t.type_id = i;
    t.amplitude = 0.3;
    const bool held = n_types >= 2 && i == n_types - 1;
    t.segments = {held ? 1 * cfg.n_angular + 12 : 3 * cfg.n_angular + angular[i]};
    cfg.types.push_back(t);
  }
  cfg.held_out = n_types >= 2 ? n_types - 1 : -1;
  return cfg;
}

namespace {

Plane<double> hann(int n) {
  Plane<double> w(1, n);
  for (int i = 0; i < n; ++i) w(0, i) = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (i + 0.5) / n);
  return w;
}

// Window that is a separable Hann taper inside the region and zero outside.
Plane<double> region_window(int size, const Region& r) {
  Plane<double> win = Plane<double>::Zero(size, size);
  const Plane<double> wy = hann(r.h), wx = hann(r.w);
  for (int i = 0; i < r.h; ++i)
    for (int j = 0; j < r.w; ++j) win(r.y + i, r.x + j) = wy(0, i) * wx(0, j);
  return win;
}

// Pixels of the band whose 4-neighbours lie in the band too, falling back
// to all band pixels.
std::vector<std::pair<int, int>> band_pixels(const SegmentGrid& g, const std::vector<int>& segments) {
  std::set<int> band(segments.begin(), segments.end());
  auto in = [&](int u, int v) {
    return u >= 0 && v >= 0 && u < g.height && v < g.width && band.count(g.segment_at(u, v));
  };
  std::vector<std::pair<int, int>> inner, all;
  for (int u = 0; u < g.height; ++u)
    for (int v = 0; v < g.width; ++v) {
      // One representative per mirror pair: the upper half plane.
      if (u > g.height / 2 || (u == g.height / 2 && v < g.width / 2)) continue;
      if (!in(u, v)) continue;
      all.emplace_back(u, v);
      if (in(u - 1, v) && in(u + 1, v) && in(u, v - 1) && in(u, v + 1)) inner.emplace_back(u, v);
    }
  return inner.empty() ? all : inner;
}

std::uint64_t sample_source(const DatasetConfig& cfg, int split, int label, int type, int index) {
  return derive_seed(cfg.seed, kStreamData,
                     (static_cast<std::uint64_t>(split) << 48) ^ (static_cast<std::uint64_t>(label) << 40) ^
                         (static_cast<std::uint64_t>(type + 1) << 32) ^ static_cast<std::uint64_t>(index));
}

}  // namespace

Image render_texture(const DatasetConfig& cfg, std::uint64_t source) {
  const int n = cfg.image_size;
  Rng rng(source);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double mean = std::uniform_real_distribution<double>(0.3, 0.7)(rng);
  Image noise(n, n, cfg.channels);
  for (auto& p : noise.planes)
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = normal(rng);
  Spectrum s = fft2(noise);
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) {
      const double f = std::hypot(u - n / 2, v - n / 2);
      const double gain = f == 0 ? 0.0 : std::pow(1.0 + f, -cfg.texture_exponent);
      for (auto& a : s.amplitude) a(u, v) *= gain;
    }
  Image img = ifft2(s);
  for (auto& p : img.planes) {
    const double sd = std::sqrt((p - p.mean()).square().mean());
    p = (p - p.mean()) * (cfg.texture_std / std::max(sd, 1e-12)) + mean;
  }
  return img;
}

Image render_forgery(const DatasetConfig& cfg, const ForgerySpec& type, std::uint64_t source,
                     std::uint64_t artifact_seed, Region* region_out) {
  const int n = cfg.image_size;
  Image img = render_texture(cfg, source);
  Rng rng(artifact_seed);
  std::uniform_int_distribution<int> pos(0, n - cfg.region_size);
  Region r{pos(rng), pos(rng), cfg.region_size, cfg.region_size};
  if (region_out) *region_out = r;
  const Plane<double> win = region_window(n, r);

  const SegmentGrid grid = make_segment_grid(n, n, cfg.n_radial, cfg.n_angular);
  const auto pixels = band_pixels(grid, type.segments);
  std::uniform_int_distribution<std::size_t> pick(0, pixels.size() - 1);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  Plane<double> artifact = Plane<double>::Zero(n, n);
  for (int k = 0; k < cfg.tones; ++k) {
    const auto [u, v] = pixels[pick(rng)];
    const double fy = double(u - n / 2) / n, fx = double(v - n / 2) / n;
    const double ph = phase(rng), amp = type.amplitude * jitter(rng) / std::sqrt(double(cfg.tones));
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) artifact(y, x) += amp * std::cos(2 * std::numbers::pi * (fy * y + fx * x) + ph);
  }
  if (cfg.common_amplitude > 0) {
    std::normal_distribution<double> normal(0.0, cfg.common_amplitude);
    for (Eigen::Index i = 0; i < artifact.size(); ++i) artifact.data()[i] += normal(rng);
  }
  artifact *= win;
  for (auto& p : img.planes) p += artifact;
  return img;
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;

  struct Job {
    int split, label, type, index;  // type is an index into cfg.types, -1 for real
  };
  std::vector<Job> jobs[3];
  std::vector<int> train_types, held;
  for (int t = 0; t < static_cast<int>(cfg.types.size()); ++t) {
    (cfg.types[static_cast<std::size_t>(t)].type_id == cfg.held_out ? held : train_types).push_back(t);
  }
  auto add_split = [&](int split, int per_class, const std::vector<int>& fake_types) {
    for (int i = 0; i < per_class; ++i) jobs[split].push_back({split, 0, -1, i});
    for (int i = 0; i < per_class; ++i)
      jobs[split].push_back({split, 1, fake_types[static_cast<std::size_t>(i) % fake_types.size()], i});
  };
  add_split(0, cfg.n_train, train_types);
  add_split(1, cfg.n_test, train_types);
  if (!held.empty()) add_split(2, cfg.n_test, held);

  std::vector<Sample>* outs[3] = {&ds.train, &ds.test_in, &ds.test_cross};
  const char* split_names[3] = {"train", "test_in", "test_cross"};
  for (int s = 0; s < 3; ++s) {
    auto& out = *outs[s];
    out.resize(jobs[s].size());
    parallel_for(jobs[s].size(), [&](std::size_t j) {
      const Job& job = jobs[s][j];
      Sample& smp = out[j];
      smp.label = job.label;
      smp.source = sample_source(cfg, job.split, job.label, job.type, job.index);
      char name[64];
      if (job.label == 0) {
        smp.image = quantize8(render_texture(cfg, smp.source));
        std::snprintf(name, sizeof(name), "%s_real_%05d", split_names[s], job.index);
      } else {
        const ForgerySpec& type = cfg.types[static_cast<std::size_t>(job.type)];
        smp.type_id = type.type_id;
        smp.image = quantize8(render_forgery(cfg, type, smp.source, splitmix64(smp.source), &smp.region));
        std::snprintf(name, sizeof(name), "%s_fake%d_%05d", split_names[s], type.type_id, job.index);
      }
      smp.name = name;
    });
  }
  return ds;
}

std::string band_string(const std::vector<int>& segments) {
  std::string s;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(segments[i]);
  }
  return s;
}

std::size_t write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream os(fs::path(dir) / "manifest.csv");
  if (!os) throw std::runtime_error("cannot write manifest in '" + dir + "'");
  os << "path,split,label,type_id,band,region_y,region_x,region_h,region_w,source,held_out\n";
  const char* ext = ds.config.channels == 1 ? ".pgm" : ".ppm";
  std::map<int, std::string> bands;
  for (const auto& t : ds.config.types) bands[t.type_id] = band_string(t.segments);
  std::size_t n = 0;
  auto emit = [&](const std::vector<Sample>& v, const char* split) {
    for (const auto& s : v) {
      const std::string rel = "images/" + s.name + ext;
      write_image((fs::path(dir) / rel).string(), s.image);
      os << rel << ',' << split << ',' << s.label << ',' << s.type_id << ','
         << (s.type_id >= 0 ? bands[s.type_id] : "") << ',' << s.region.y << ',' << s.region.x << ','
         << s.region.h << ',' << s.region.w << ',' << s.source << ',' << ds.config.held_out << '\n';
      ++n;
    }
  };
  emit(ds.train, "train");
  emit(ds.test_in, "test_in");
  emit(ds.test_cross, "test_cross");
  if (!os) throw std::runtime_error("failed writing manifest in '" + dir + "'");
  return n;
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.csv");
  if (!is) throw std::invalid_argument("no manifest.csv in '" + dir + "'");
  std::string line;
  std::getline(is, line);
  Dataset ds;
  ds.config.types.clear();
  std::map<int, std::vector<int>> bands;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 11) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": expected 11 fields");
    }
    Sample s;
    s.image = read_image((fs::path(dir) / f[0]).string());
    s.name = fs::path(f[0]).stem().string();
    s.label = std::stoi(f[2]);
    s.type_id = std::stoi(f[3]);
    s.region = {std::stoi(f[5]), std::stoi(f[6]), std::stoi(f[7]), std::stoi(f[8])};
    s.source = std::stoull(f[9]);
    ds.config.held_out = std::stoi(f[10]);
    if (s.type_id >= 0 && !bands.count(s.type_id)) {
      std::vector<int> segs;
      std::stringstream bs(f[4]);
      for (std::string z; std::getline(bs, z, ';');) segs.push_back(std::stoi(z));
      bands[s.type_id] = segs;
    }
    ds.config.image_size = s.image.height();
    ds.config.channels = s.image.channels();
    if (f[1] == "train") {
      ds.train.push_back(std::move(s));
    } else if (f[1] == "test_in") {
      ds.test_in.push_back(std::move(s));
    } else if (f[1] == "test_cross") {
      ds.test_cross.push_back(std::move(s));
    } else {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": unknown split '" + f[1] + "'");
    }
  }
  for (const auto& [id, segs] : bands) ds.config.types.push_back({id, segs, 0.0});
  return ds;
}

}  // namespace freqdebias
