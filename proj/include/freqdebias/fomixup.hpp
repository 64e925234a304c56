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

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "freqdebias/random.hpp"
#include "freqdebias/spectral.hpp"

namespace freqdebias {

constexpr int kLabelReal = 0;
constexpr int kLabelFake = 1;

struct MixConfig {
  int k = 8;             // clusters of segment mean-log-spectrum values
  int t = 3;             // top clusters eligible as the protected mask
  double xi_min = 0.0;   // mixing ratio range
  double xi_max = 1.0;
  double sigma = 0.1;    // std of the multiplicative amplitude perturbation
  double lambda = 0.5;   // confidence-sampling keep fraction
  bool invert_mask = false;  // mix inside the mask instead of outside
  // OHEM scores each image with one cluster removed (the band-exclusion
  // reading); when false only the cluster is kept.
  bool ohem_exclude = true;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate(int total_segments) const;
};

struct Score {
  std::array<double, 2> probs{0.5, 0.5};  // {real, fake}
  double loss = 0;                        // cross-entropy for the given label
};

// Classifier used to rank filtered images.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<Score> score(const std::vector<Image>& images, int label) = 0;
  Score score(const Image& img, int label) { return score(std::vector<Image>{img}, label).at(0); }
};

// Scores looked up by content hash of the 8-bit quantised image. Lines of
// the score file are "hash,p_fake" with the hash in hex; '#' starts a comment.
class ScoreTableScorer : public Scorer {
 public:
  explicit ScoreTableScorer(const std::string& path);
  ScoreTableScorer(std::unordered_map<std::uint64_t, double> table) : table_(std::move(table)) {}

  using Scorer::score;
  std::vector<Score> score(const std::vector<Image>& images, int label) override;

 private:
  std::unordered_map<std::uint64_t, double> table_;
};

// FNV-1a over the 8-bit quantised pixels and the dimensions.
std::uint64_t image_hash(const Image& img);

Score make_score(double p_fake, int label);

struct ClusterMasks {
  std::vector<BandMask> masks;               // descending OHEM loss
  std::vector<std::vector<int>> segments;    // segment ids per mask
  std::vector<double> losses;                // non-increasing
  std::vector<int> cluster_ids;              // k-means cluster behind each mask
  int top = 0;                               // leading masks eligible for selection
  std::string diagnostic;

  int size() const { return static_cast<int>(masks.size()); }
};

// Clusters segments by mean log amplitude, filters img with every cluster
// mask (removing the cluster, or keeping only it), scores the filtered
// images against `label` and orders the masks by descending loss. A scorer failure is rethrown with the mask index.
ClusterMasks dominant_masks(const Image& img, int label, const SegmentGrid& grid, Scorer& scorer,
                            const MixConfig& cfg);

// Checks that the masks are pairwise disjoint and cover the plane.
bool is_partition(const ClusterMasks& masks);

struct MixOutput {
  Image image;          // clamped to [0, 1]
  Image unclamped;      // reconstruction before the pixel clamp
  Spectrum spectrum;    // mixed amplitude with the phase of x_i
};

// Deterministic core: A = A_i * B + ((1 - xi) A_i + xi A_j) * (1 - B), scaled
// by `perturbation` (already symmetric and non-negative, or null for none),
// recombined with the phase of x_i. With invert set, B and 1 - B swap roles.
MixOutput mix_amplitudes(const Image& x_i, const Image& x_j, const BandMask& mask, double xi,
                         const Plane<double>* perturbation, bool invert = false);

// Symmetric, non-negative field with entries drawn from N(1, sigma^2).
Plane<double> amplitude_perturbation(int height, int width, double sigma, Rng& rng);

struct MixResult {
  Image image;
  double xi = 0;
  int mask_index = -1;  // position within ClusterMasks
};

MixResult fo_mixup(const Image& x_i, const Image& x_j, const ClusterMasks& masks,
                   const MixConfig& cfg, Rng& rng);

// Shannon entropy in nats with 0 log 0 = 0.
double entropy(const std::array<double, 2>& p);
double entropy(const std::vector<double>& p);

// Indices of the ceil(lambda * N) lowest-entropy samples, in ascending
// entropy order; ties keep input order.
std::vector<std::size_t> confidence_sample(const std::vector<std::array<double, 2>>& probs,
                                           double lambda);

template <typename T>
std::vector<T> confidence_sample(const std::vector<std::pair<T, std::array<double, 2>>>& batch,
                                 double lambda) {
  std::vector<std::array<double, 2>> probs;
  probs.reserve(batch.size());
  for (const auto& b : batch) probs.push_back(b.second);
  std::vector<T> out;
  for (std::size_t i : confidence_sample(probs, lambda)) out.push_back(batch[i].first);
  return out;
}

// Pixel-space augmentations: contrast stretch about the image mean and 2x2
// block pixelation, each applied with probability p.
Image standard_augment(const Image& img, double p, Rng& rng);

}  // namespace freqdebias
