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

#include "freqdebias/probe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "freqdebias/fomixup.hpp"
#include "freqdebias/image_io.hpp"
#include "freqdebias/parallel.hpp"
#include "freqdebias/train.hpp"

namespace freqdebias {

namespace {

std::vector<double> fake_losses(Detector& det, const std::vector<Image>& images) {
  std::vector<double> out;
  out.reserve(images.size());
  for (const auto& p : det.predict(images)) out.push_back(make_score(p[1], kLabelFake).loss);
  return out;
}

}  // namespace

std::vector<int> rank_segments(const std::vector<double>& increase) {
  std::vector<int> order(increase.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return increase[static_cast<std::size_t>(a)] > increase[static_cast<std::size_t>(b)];
  });
  return order;
}

ProbeResult spectral_probe(Detector& det, const std::vector<Sample>& samples, const ProbeConfig& cfg) {
  std::vector<const Sample*> probe;
  std::map<int, int> taken;
  for (const auto& s : samples) {
    if (s.label != kLabelFake) continue;
    if (cfg.max_per_type > 0 && taken[s.type_id] >= cfg.max_per_type) continue;
    ++taken[s.type_id];
    probe.push_back(&s);
  }
  if (probe.empty()) throw std::invalid_argument("spectral_probe: no forgeries to probe");
  const int h = probe[0]->image.height(), w = probe[0]->image.width();

  ProbeResult r;
  r.grid = make_segment_grid(h, w, cfg.n_radial, cfg.n_angular);
  r.images = static_cast<int>(probe.size());
  const int total = r.grid.total();
  const std::size_t n = probe.size();

  std::vector<Spectrum> spectra(n);
  parallel_for(n, [&](std::size_t i) { spectra[i] = fft2(probe[i]->image); });

  const BandMask identity = full_mask(h, w, 1.0);
  std::vector<Image> base(n);
  parallel_for(n, [&](std::size_t i) { base[i] = ifft2(apply_mask(spectra[i], identity)); });
  const std::vector<double> base_loss = fake_losses(det, base);

  // loss[s][i]: image i with segment s removed.
  std::vector<std::vector<double>> loss(static_cast<std::size_t>(total));
  std::vector<bool> selected(static_cast<std::size_t>(total), false);
  for (int s = 0; s < total; ++s) {
    std::fill(selected.begin(), selected.end(), false);
    selected[static_cast<std::size_t>(s)] = true;
    const BandMask keep = complement(mask_from_segments(r.grid, selected));
    std::vector<Image> ablated(n);
    parallel_for(n, [&](std::size_t i) { ablated[i] = ifft2(apply_mask(spectra[i], keep)); });
    loss[static_cast<std::size_t>(s)] = fake_losses(det, ablated);
  }

  // type -1 averages over every probed forgery.
  auto mean_over = [&](const std::vector<double>& v, int type) {
    double sum = 0;
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (type != -1 && probe[i]->type_id != type) continue;
      sum += v[i];
      ++count;
    }
    return count ? sum / count : 0.0;
  };
  r.base_loss = mean_over(base_loss, -1);
  r.ablated_loss.resize(static_cast<std::size_t>(total));
  r.increase.resize(static_cast<std::size_t>(total));
  for (int s = 0; s < total; ++s) {
    r.ablated_loss[static_cast<std::size_t>(s)] = mean_over(loss[static_cast<std::size_t>(s)], -1);
    r.increase[static_cast<std::size_t>(s)] = r.ablated_loss[static_cast<std::size_t>(s)] - r.base_loss;
  }
  r.ranking = rank_segments(r.increase);
  for (const auto& [type, count] : taken) {
    (void)count;
    const double b = mean_over(base_loss, type);
    r.type_base[type] = b;
    auto& abl = r.type_ablated[type];
    auto& inc = r.type_increase[type];
    for (int s = 0; s < total; ++s) {
      abl.push_back(mean_over(loss[static_cast<std::size_t>(s)], type));
      inc.push_back(abl.back() - b);
    }
  }
  return r;
}

Plane<double> type_heatmap(const ProbeResult& r, int type_id, bool subtract_baseline) {
  const auto& src = subtract_baseline ? r.type_increase : r.type_ablated;
  const auto it = src.find(type_id);
  if (it == src.end()) throw std::invalid_argument("type_heatmap: type " + std::to_string(type_id) + " not probed");
  Plane<double> out(r.grid.height, r.grid.width);
  for (int u = 0; u < r.grid.height; ++u)
    for (int v = 0; v < r.grid.width; ++v) out(u, v) = it->second[static_cast<std::size_t>(r.grid.segment_at(u, v))];
  return out;
}

BandMask top_band_mask(const ProbeResult& r, int count, int type_id) {
  std::vector<int> order;
  if (type_id < 0) {
    order = r.ranking;
  } else {
    const auto it = r.type_increase.find(type_id);
    if (it == r.type_increase.end()) throw std::invalid_argument("top_band_mask: type not probed");
    order = rank_segments(it->second);
  }
  std::vector<bool> selected(static_cast<std::size_t>(r.grid.total()), false);
  for (int i = 0; i < count && i < static_cast<int>(order.size()); ++i)
    selected[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  return mask_from_segments(r.grid, selected);
}

void write_band_table(const ProbeResult& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "segment,radial_bin,angular_bin,pixels,base_loss,ablated_loss,increase,rank";
  for (const auto& [type, v] : r.type_increase) f << ",increase_type" << type;
  f << '\n';
  std::vector<int> rank_of(r.ranking.size());
  for (std::size_t i = 0; i < r.ranking.size(); ++i) rank_of[static_cast<std::size_t>(r.ranking[i])] = static_cast<int>(i) + 1;
  for (int s = 0; s < r.grid.total(); ++s) {
    const auto i = static_cast<std::size_t>(s);
    f << s << ',' << r.grid.radial_bin(s) << ',' << r.grid.angular_bin(s) << ',' << r.grid.counts[i] << ','
      << fmt(r.base_loss) << ',' << fmt(r.ablated_loss[i]) << ',' << fmt(r.increase[i]) << ',' << rank_of[i];
    for (const auto& [type, v] : r.type_increase) f << ',' << fmt(v[i]);
    f << '\n';
  }
  if (!f) throw std::runtime_error("failed writing " + path);
}

void write_heatmaps(const ProbeResult& r, const ProbeConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [type, v] : r.type_increase) {
    (void)v;
    const std::string stem = dir + "/heatmap_type" + std::to_string(type);
    const Plane<double> heat = type_heatmap(r, type, cfg.subtract_baseline);
    write_plane_csv(stem + ".csv", heat);
    // Grey-level rendering scaled to the map's own range.
    const double lo = heat.minCoeff(), hi = heat.maxCoeff();
    Image img;
    img.planes.push_back(hi > lo ? Plane<double>((heat - lo) / (hi - lo)) : Plane<double>(Plane<double>::Zero(heat.rows(), heat.cols())));
    write_image(stem + ".pgm", img);
    Image mask;
    mask.planes.push_back(top_band_mask(r, cfg.top_bands, type).values);
    write_image(dir + "/top_bands_type" + std::to_string(type) + ".pgm", mask);
  }
}

void write_probe(const ProbeResult& r, const ProbeConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_band_table(r, dir + "/band_loss.csv");
  write_heatmaps(r, cfg, dir);
}

NullProbeResult null_probe(const DetectorConfig& dcfg, const std::vector<Sample>& samples, const ProbeConfig& cfg,
                           const std::vector<std::uint64_t>& seeds, double factor) {
  if (seeds.size() < 2) throw std::invalid_argument("null_probe: need at least two seeds");
  std::vector<std::vector<double>> runs;
  for (std::uint64_t s : seeds) {
    Detector det(dcfg, s);
    runs.push_back(spectral_probe(det, samples, cfg).increase);
  }
  const std::size_t bands = runs[0].size();
  const double m = static_cast<double>(runs.size());
  NullProbeResult out;
  out.factor = factor;
  out.band_mean.assign(bands, 0.0);
  out.band_std.assign(bands, 0.0);
  out.silent.assign(bands, true);
  double var_sum = 0;
  std::size_t active = 0;
  std::size_t lo = bands, hi = bands;
  for (std::size_t b = 0; b < bands; ++b) {
    double mean = 0;
    for (const auto& r : runs) {
      mean += r[b];
      if (r[b] != 0) out.silent[b] = false;
    }
    mean /= m;
    double var = 0;
    for (const auto& r : runs) var += (r[b] - mean) * (r[b] - mean);
    var /= m - 1;
    out.band_mean[b] = mean;
    out.band_std[b] = std::sqrt(var);
    if (out.silent[b]) continue;
    var_sum += var;
    ++active;
    if (lo == bands || mean < out.band_mean[lo]) lo = b;
    if (hi == bands || mean > out.band_mean[hi]) hi = b;
  }
  if (active == 0) throw std::invalid_argument("null_probe: every band is silent");
  out.pooled_std = std::sqrt(var_sum / static_cast<double>(active));
  out.extreme_std = std::sqrt(0.5 * (out.band_std[lo] * out.band_std[lo] + out.band_std[hi] * out.band_std[hi]));
  out.range = out.band_mean[hi] - out.band_mean[lo];
  out.passed = out.range < factor * out.extreme_std;
  return out;
}

}  // namespace freqdebias
