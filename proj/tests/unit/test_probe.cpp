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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "freqdebias/probe.hpp"

using namespace freqdebias;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> fakes(const Dataset& ds, int per_type) {
  std::vector<Sample> out;
  std::map<int, int> n;
  for (const auto& s : ds.test_in)
    if (s.label == 1 && n[s.type_id]++ < per_type) out.push_back(s);
  return out;
}

Dataset probe_data() {
  DatasetConfig c = benchmark_config(3, 21);
  c.n_train = 2;
  c.n_test = 6;
  return generate_dataset(c);
}

}  // namespace

TEST_CASE("probe result layout") {
  Detector det(DetectorConfig{}, 4);
  ProbeConfig cfg;
  cfg.n_radial = 4;
  cfg.n_angular = 6;
  const Dataset ds = probe_data();
  const ProbeResult r = spectral_probe(det, ds.test_in, cfg);
  CHECK(r.grid.total() == 24);
  CHECK(r.images == 6);  // forgeries only
  CHECK(r.increase.size() == 24);
  CHECK(r.type_increase.size() == 2);
  std::vector<int> sorted = r.ranking;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 24; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  for (std::size_t i = 1; i < r.ranking.size(); ++i)
    CHECK(r.increase[static_cast<std::size_t>(r.ranking[i - 1])] >= r.increase[static_cast<std::size_t>(r.ranking[i])]);
  for (int s = 0; s < 24; ++s)
    CHECK(r.increase[static_cast<std::size_t>(s)] ==
          doctest::Approx(r.ablated_loss[static_cast<std::size_t>(s)] - r.base_loss));

  ProbeConfig capped = cfg;
  capped.max_per_type = 1;
  CHECK(spectral_probe(det, ds.test_in, capped).images == 2);
  std::vector<Sample> reals;
  for (const auto& s : ds.test_in)
    if (s.label == 0) reals.push_back(s);
  CHECK_THROWS_AS(spectral_probe(det, reals, cfg), std::invalid_argument);
}

TEST_CASE("bands without energy do not move the loss") {
  Detector det(DetectorConfig{}, 5);
  const Dataset ds = probe_data();
  std::vector<Sample> flat = fakes(ds, 2);
  for (auto& s : flat) s.image.planes[0].setConstant(0.4);
  ProbeConfig cfg;
  const ProbeResult r = spectral_probe(det, flat, cfg);
  const int dc = r.grid.segment_at(r.grid.height / 2, r.grid.width / 2);
  for (int s = 0; s < r.grid.total(); ++s)
    if (s != dc) CHECK(std::abs(r.increase[static_cast<std::size_t>(s)]) < 1e-12);
}

TEST_CASE("heatmaps and top-band masks follow the segments") {
  Detector det(DetectorConfig{}, 6);
  ProbeConfig cfg;
  cfg.n_radial = 4;
  cfg.n_angular = 8;
  cfg.top_bands = 2;
  const Dataset ds = probe_data();
  const ProbeResult r = spectral_probe(det, ds.test_in, cfg);
  for (const auto& [type, inc] : r.type_increase) {
    const Plane<double> heat = type_heatmap(r, type, true);
    const Plane<double> raw = type_heatmap(r, type, false);
    for (int u = 0; u < r.grid.height; u += 5)
      for (int v = 0; v < r.grid.width; v += 3) {
        const auto s = static_cast<std::size_t>(r.grid.segment_at(u, v));
        CHECK(heat(u, v) == inc[s]);
        CHECK(raw(u, v) == doctest::Approx(inc[s] + r.type_base.at(type)));
      }
    const auto order = rank_segments(inc);
    const BandMask m = top_band_mask(r, 2, type);
    double on = 0;
    for (int u = 0; u < r.grid.height; ++u)
      for (int v = 0; v < r.grid.width; ++v) {
        const int s = r.grid.segment_at(u, v);
        const bool top = s == order[0] || s == order[1];
        CHECK(m.values(u, v) == (top ? 1.0 : 0.0));
        on += m.values(u, v);
      }
    CHECK(on == r.grid.counts[static_cast<std::size_t>(order[0])] + r.grid.counts[static_cast<std::size_t>(order[1])]);
  }
  CHECK_THROWS_AS(type_heatmap(r, 7, true), std::invalid_argument);

  const fs::path dir = fs::temp_directory_path() / "freqdebias_probe_out";
  fs::remove_all(dir);
  write_probe(r, cfg, dir.string());
  std::ifstream f(dir / "band_loss.csv");
  std::string header;
  std::getline(f, header);
  CHECK(header ==
        "segment,radial_bin,angular_bin,pixels,base_loss,ablated_loss,increase,rank,increase_type0,increase_type1");
  int rows = 0;
  for (std::string line; std::getline(f, line);) ++rows;
  CHECK(rows == 32);
  CHECK(fs::exists(dir / "heatmap_type0.pgm"));
  CHECK(fs::exists(dir / "top_bands_type1.pgm"));
  fs::remove_all(dir);
}

TEST_CASE("null probe statistics") {
  const Dataset ds = probe_data();
  ProbeConfig cfg;
  cfg.n_radial = 2;
  cfg.n_angular = 4;
  const NullProbeResult n = null_probe(DetectorConfig{}, ds.test_in, cfg, {1, 2, 3});
  CHECK(n.band_mean.size() == 8);
  CHECK(n.pooled_std > 0);
  double lo = 1e300, hi = -1e300, lo_std = 0, hi_std = 0;
  for (std::size_t b = 0; b < n.band_mean.size(); ++b) {
    if (n.silent[b]) continue;
    if (n.band_mean[b] < lo) {
      lo = n.band_mean[b];
      lo_std = n.band_std[b];
    }
    if (n.band_mean[b] > hi) {
      hi = n.band_mean[b];
      hi_std = n.band_std[b];
    }
  }
  CHECK(n.range == doctest::Approx(hi - lo));
  CHECK(n.extreme_std == doctest::Approx(std::sqrt(0.5 * (lo_std * lo_std + hi_std * hi_std))));
  CHECK(n.passed == (n.range < 3 * n.extreme_std));
  CHECK_THROWS_AS(null_probe(DetectorConfig{}, ds.test_in, cfg, {1}), std::invalid_argument);
}
