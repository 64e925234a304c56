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

#include <map>
#include <string>
#include <vector>

#include "freqdebias/dataset.hpp"
#include "freqdebias/detector.hpp"
#include "freqdebias/spectral.hpp"

namespace freqdebias {

struct ProbeConfig {
  int n_radial = 8;
  int n_angular = 16;
  int max_per_type = 0;          // forgeries probed per type; 0 keeps all
  bool subtract_baseline = true; // heatmaps hold loss increases instead of raw losses
  int top_bands = 1;             // segments in each top-band mask
};

// Band ablation: every segment's amplitude is zeroed in turn and the mean
// fake-class cross-entropy over the probe set is re-evaluated. Only
// forgeries are probed.
struct ProbeResult {
  SegmentGrid grid;
  int images = 0;
  double base_loss = 0;                      // mean loss after an identity round trip
  std::vector<double> ablated_loss;          // per segment
  std::vector<double> increase;              // ablated_loss - base_loss
  std::vector<int> ranking;                  // segments by descending increase
  std::map<int, std::vector<double>> type_increase;  // per forgery type
  std::map<int, std::vector<double>> type_ablated;
  std::map<int, double> type_base;
};

ProbeResult spectral_probe(Detector& det, const std::vector<Sample>& samples, const ProbeConfig& cfg);

// Segments of one type ranked by descending increase.
std::vector<int> rank_segments(const std::vector<double>& increase);

// Per-type heatmap on the centred frequency plane: each pixel carries its
// segment's mean increase, or the raw ablated loss when subtract_baseline
// is off.
Plane<double> type_heatmap(const ProbeResult& r, int type_id, bool subtract_baseline);

// Binary mask of the `count` highest-ranked segments.
BandMask top_band_mask(const ProbeResult& r, int count, int type_id = -1);

// One row per segment: geometry, losses, overall rank and the per-type
// increases.
void write_band_table(const ProbeResult& r, const std::string& path);

// heatmap_type<k>.csv, heatmap_type<k>.pgm and top_bands_type<k>.pgm for
// every probed type.
void write_heatmaps(const ProbeResult& r, const ProbeConfig& cfg, const std::string& dir);

// Writes band_loss.csv plus the heatmaps.
void write_probe(const ProbeResult& r, const ProbeConfig& cfg, const std::string& dir);

// Probes untrained detectors initialised from each seed. The probe passes
// when the range of band means is below `factor` times the across-seed
// standard deviation pooled over the two bands that set the range. Band
// variances differ by orders of magnitude between low and high frequencies,
// so a std pooled over every band understates the noise at the extremes.
// Segments whose increase is zero for every seed (empty on the grid) are
// left out.
struct NullProbeResult {
  std::vector<double> band_mean;
  std::vector<double> band_std;
  std::vector<bool> silent;
  double extreme_std = 0;  // pooled over the argmax and argmin bands
  double pooled_std = 0;   // pooled over every non-silent band, for reference
  double range = 0;
  double factor = 3;
  bool passed = false;
};

NullProbeResult null_probe(const DetectorConfig& dcfg, const std::vector<Sample>& samples, const ProbeConfig& cfg,
                           const std::vector<std::uint64_t>& seeds, double factor = 3.0);

}  // namespace freqdebias
