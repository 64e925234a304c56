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
#include <vector>

#include "freqdebias/autodiff.hpp"
#include "freqdebias/fomixup.hpp"
#include "freqdebias/spectral.hpp"

namespace freqdebias {

struct DetectorConfig {
  int in_channels = 1;
  std::array<int, 3> stage_channels{8, 16, 32};  // psi_1..psi_3
  int align_channels = 16;                       // output of each omega_i
  int embed_dim = 64;                            // d of the vMF head
  double kappa_init = 10.0;
  // Inputs are centred per image and channel, then divided by input_std.
  double input_std = 0.1;
};

// Three-stage convolutional detector. Each stage is conv3x3 -> relu -> 2x2
// average pool. The inference path is the backbone followed by global
// average pooling and a linear head whose weights also produce the CAMs.
// During training, alignment branches bring every stage to the resolution
// of the last one; their concatenation is projected to embed_dim channels,
// pooled and normalised, and fed to a two-class vMF head.
class Detector {
 public:
  Detector() = default;
  Detector(const DetectorConfig& cfg, std::uint64_t seed);

  struct Outputs {
    ad::Tensor logits;     // [N, 2]
    ad::Tensor features;   // F_M, [N, c3, h, w]
    ad::Tensor embedding;  // unit rows, [N, embed_dim]; empty without aux
    ad::Tensor fc_weight;  // W as bound on the tape, [c3, 2]
  };

  // x is [N, in_channels, H, W] with H and W divisible by 8.
  Outputs forward(ad::Tape& tape, const ad::Tensor& x, bool with_aux);

  // vMF head parameters bound on the tape.
  ad::Tensor vmf_directions(ad::Tape& tape) { return tape.parameter(directions_); }
  ad::Tensor vmf_kappa(ad::Tape& tape) { return tape.parameter(kappa_); }

  // Restores the vMF head constraints after an optimiser step: directions
  // back on the unit sphere, kappa within [0, kMaxKappa].
  void project();

  std::vector<ad::Parameter*> parameters();
  // Parameters used by the inference path only.
  std::vector<ad::Parameter*> backbone_parameters();
  ad::Parameter& gamma() { return gamma_; }
  ad::Parameter& beta() { return beta_; }

  const DetectorConfig& config() const { return cfg_; }
  std::size_t parameter_count();

  // Checkpoints carry the architecture as a "detector.config" entry.
  void save(const std::string& path);
  void load(const std::string& path);
  static Detector from_checkpoint(const std::string& path);

  // Class probabilities {real, fake} on the inference path, in chunks.
  std::vector<std::array<double, 2>> predict(const std::vector<Image>& images, int chunk = 64);

 private:
  struct Conv {
    ad::Parameter w, b;
  };
  Conv make_conv(const std::string& name, int out, int in, int k, Rng& rng);
  ad::Tensor apply(ad::Tape& t, Conv& c, const ad::Tensor& x, int stride);
  // relu(x + conv(x)).
  ad::Tensor residual(ad::Tape& t, Conv& c, const ad::Tensor& x);

  DetectorConfig cfg_;
  std::array<Conv, 3> stages_;
  Conv align1a_, align1b_, align1r_;  // omega_1: two stride-2 convs + residual
  Conv align2a_, align2r_;            // omega_2: one stride-2 conv + residual
  Conv align3a_, align3r_;            // omega_3: conv + residual
  Conv project_;                      // 1x1 to embed_dim
  ad::Parameter fc_w_, fc_b_;
  ad::Parameter directions_, kappa_;
  ad::Parameter gamma_, beta_;        // class-wise CAM normalisation affine
};

// Stacks images into an [N, C, H, W] constant.
ad::Tensor batch_tensor(ad::Tape& tape, const std::vector<Image>& images);

// Scorer backed by the detector's inference path.
class DetectorScorer : public Scorer {
 public:
  explicit DetectorScorer(Detector& det) : det_(det) {}
  using Scorer::score;
  std::vector<Score> score(const std::vector<Image>& images, int label) override;

 private:
  Detector& det_;
};

}  // namespace freqdebias
