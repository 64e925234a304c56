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
#include <stdexcept>
#include <string>
#include <vector>

#include "freqdebias/autodiff.hpp"

namespace freqdebias {

struct LossWeights {
  double tau = 4.0;    // softmax temperature for the KL and attention terms
  double eta = 0.5;    // L_CAM
  double delta = 0.1;  // L_att
  double mu = 1.0;     // L_cls_sphere
  double rho = 0.1;    // L_sphere

  void validate() const;
};

// Class activation maps M[i, cls] = sum_ch W[ch, cls] F[i, ch] for
// features [N, c, h, w] and weights [c, n] -> [N, n, h, w].
ad::Tensor compute_cam(const ad::Tensor& features, const ad::Tensor& weights);

struct HighRegion {
  ad::Array mask;          // h*w binary, row-major
  bool single_cluster = false;  // map was constant after pooling
};

// 2x2 average pool, k-means over the pooled values, and the member pixels
// of the highest-mean cluster upsampled back to h x w.
HighRegion high_region(const ad::Array& map, int h, int w, int k_cam = 2, std::uint64_t seed = 0);

struct NormalizedCam {
  ad::Tensor values;             // [N, h*w], zero outside each mask
  std::vector<HighRegion> regions;
  int fallbacks = 0;             // maps that hit the single-cluster path
};

// Picks the ground-truth class channel of every CAM, finds its high region
// (no gradient through the assignment) and applies masked instance
// normalisation with the shared affine parameters gamma and beta.
NormalizedCam classwise_normalize(const ad::Tensor& cam, const std::vector<int>& labels,
                                  const ad::Tensor& gamma, const ad::Tensor& beta, int k_cam = 2,
                                  std::uint64_t seed = 0, double eps = 1e-5);

// Mean over the batch of JSD(softmax(a / tau), softmax(b / tau)) with the
// softmax taken over spatial positions of [N, P] maps.
ad::Tensor attention_loss(const ad::Tensor& a, const ad::Tensor& b, double tau);

// CE(s, y) + CE(t, y) + KL(softmax(s / tau) || softmax(t / tau)), each term
// averaged over the batch.
ad::Tensor cls_consistency_loss(const ad::Tensor& logits_s, const ad::Tensor& logits_t,
                                const std::vector<int>& labels, double tau);

struct LossParts {
  ad::Tensor cls;
  ad::Tensor cam;
  ad::Tensor att;
  ad::Tensor cls_sphere;
  ad::Tensor sphere;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& component)
      : std::runtime_error("non-finite loss component " + component), component_(component) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

// L_cls + eta L_CAM + delta L_att + mu L_cls_sphere + rho L_sphere. Parts
// left empty contribute nothing. Throws NonFiniteLoss naming the first
// non-finite part.
ad::Tensor total_loss(const LossParts& parts, const LossWeights& w);

}  // namespace freqdebias
