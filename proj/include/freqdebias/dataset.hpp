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

#include "freqdebias/spectral.hpp"

namespace freqdebias {

struct Region {
  int y = 0, x = 0, h = 0, w = 0;

  bool contains(int r, int c) const { return r >= y && r < y + h && c >= x && c < x + w; }
  bool operator==(const Region&) const = default;
};

// One synthetic forgery family: sinusoidal tones whose frequencies lie in
// `segments` of the segment grid, confined to the tampered region.
struct ForgerySpec {
  int type_id = 0;
  std::vector<int> segments;
  double amplitude = 0.05;
};

struct DatasetConfig {
  int image_size = 64;
  int channels = 1;
  int n_train = 200;  // per class
  int n_test = 100;   // per class and per test split
  std::vector<ForgerySpec> types;
  int held_out = -1;  // type id excluded from training; -1 keeps every type
  double common_amplitude = 0.0;  // std of broadband noise added inside the region
  int tones = 2;
  int region_size = 32;
  int n_radial = 8;
  int n_angular = 16;
  double texture_exponent = 1.5;  // amplitude ~ 1 / (1 + f)^exponent
  double texture_std = 0.1;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument; rejects overlapping bands across types.
  void validate() const;
};

// Benchmark preset: strong narrow-band artifacts plus weak broadband noise.
// The last type is held out and sits at a lower radial bin than the rest.
DatasetConfig benchmark_config(int n_types, std::uint64_t seed);

struct Sample {
  Image image;
  int label = 0;        // 0 real, 1 fake
  int type_id = -1;     // forgery type, -1 for real
  Region region;        // tampered region (empty for real)
  std::uint64_t source = 0;  // seed of the underlying texture
  std::string name;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> train;
  std::vector<Sample> test_in;     // reals + fakes of training types
  std::vector<Sample> test_cross;  // reals + fakes of the held-out type
};

Dataset generate_dataset(const DatasetConfig& cfg);

// Smooth random texture with a power-law spectrum and random mean.
Image render_texture(const DatasetConfig& cfg, std::uint64_t source);
// Forgery of the texture from `source`, before 8-bit quantisation.
Image render_forgery(const DatasetConfig& cfg, const ForgerySpec& type, std::uint64_t source,
                     std::uint64_t artifact_seed, Region* region_out = nullptr);

// Writes <dir>/images/*.pgm|ppm and <dir>/manifest.csv. Returns the number
// of samples written.
std::size_t write_dataset(const Dataset& ds, const std::string& dir);
// Loads a directory written by write_dataset. Only the fields recorded in
// the manifest (image size, channels, forgery bands, held-out type) are
// restored into the configuration.
Dataset read_dataset(const std::string& dir);

std::string band_string(const std::vector<int>& segments);

}  // namespace freqdebias
