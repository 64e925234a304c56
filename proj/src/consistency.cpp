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

#include "freqdebias/consistency.hpp"

#include <cmath>

#include "freqdebias/kmeans.hpp"

namespace freqdebias {

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"eta", eta}, {"delta", delta}, {"mu", mu}, {"rho", rho}};
  for (const auto& [name, v] : fields) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string(name) + " out of range: must be finite and >= 0");
    }
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("tau out of range: must be finite and > 0");
  }
}

ad::Tensor compute_cam(const ad::Tensor& features, const ad::Tensor& weights) {
  if (features.rank() != 4 || weights.rank() != 2 || features.dim(1) != weights.dim(0)) {
    throw ad::ShapeError("compute_cam: incompatible shapes " + ad::to_string(features.shape()) +
                         " and " + ad::to_string(weights.shape()));
  }
  const int c = weights.dim(0), n = weights.dim(1);
  // A 1x1 convolution with kernel W^T and no bias.
  return ad::conv2d(features, ad::reshape(ad::transpose(weights), {n, c, 1, 1}), 1);
}

HighRegion high_region(const ad::Array& map, int h, int w, int k_cam, std::uint64_t seed) {
  if (h % 2 || w % 2 || map.size() != static_cast<Eigen::Index>(h) * w) {
    throw std::invalid_argument("high_region: map must be h x w with even h and w");
  }
  const int ph = h / 2, pw = w / 2;
  Eigen::VectorXd pooled(ph * pw);
  for (int r = 0; r < ph; ++r)
    for (int c = 0; c < pw; ++c) {
      const int i = 2 * r * w + 2 * c;
      pooled(r * pw + c) = 0.25 * (map(i) + map(i + 1) + map(i + w) + map(i + w + 1));
    }
  const KMeansResult km = kmeans_1d(pooled, k_cam, seed);
  HighRegion out;
  out.mask = ad::Array::Zero(map.size());
  out.single_cluster = km.clusters() == 1;
  const int top = km.clusters() - 1;  // labels ascend with the centre
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (km.labels[static_cast<std::size_t>((r / 2) * pw + c / 2)] == top) out.mask(r * w + c) = 1.0;
  return out;
}

NormalizedCam classwise_normalize(const ad::Tensor& cam, const std::vector<int>& labels,
                                  const ad::Tensor& gamma, const ad::Tensor& beta, int k_cam,
                                  std::uint64_t seed, double eps) {
  if (cam.rank() != 4 || static_cast<std::size_t>(cam.dim(0)) != labels.size()) {
    throw ad::ShapeError("classwise_normalize: CAM shape " + ad::to_string(cam.shape()) +
                         " does not match " + std::to_string(labels.size()) + " labels");
  }
  const int n = cam.dim(0), classes = cam.dim(1), h = cam.dim(2), w = cam.dim(3);
  std::vector<int> rows;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) throw std::invalid_argument("classwise_normalize: label out of range");
    rows.push_back(i * classes + y);
  }
  const ad::Tensor selected = ad::take(ad::reshape(cam, {n * classes, h * w}), rows);

  NormalizedCam out;
  ad::Array mask(static_cast<Eigen::Index>(n) * h * w);
  for (int i = 0; i < n; ++i) {
    const ad::Array row = selected.value().segment(static_cast<Eigen::Index>(i) * h * w, h * w);
    out.regions.push_back(high_region(row, h, w, k_cam, seed));
    if (out.regions.back().single_cluster) ++out.fallbacks;
    mask.segment(static_cast<Eigen::Index>(i) * h * w, h * w) = out.regions.back().mask;
  }
  out.values = ad::masked_instance_norm(selected, mask, gamma, beta, eps);
  return out;
}

ad::Tensor attention_loss(const ad::Tensor& a, const ad::Tensor& b, double tau) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw ad::ShapeError("attention_loss: incompatible shapes " + ad::to_string(a.shape()) + " and " +
                         ad::to_string(b.shape()));
  }
  return ad::mean(ad::js_divergence(ad::softmax(a, tau), ad::softmax(b, tau)));
}

ad::Tensor cls_consistency_loss(const ad::Tensor& logits_s, const ad::Tensor& logits_t,
                                const std::vector<int>& labels, double tau) {
  return ad::cross_entropy(logits_s, labels) + ad::cross_entropy(logits_t, labels) +
         ad::mean(ad::kl_softmax(logits_s, logits_t, tau));
}

ad::Tensor total_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  const std::pair<const char*, std::pair<const ad::Tensor*, double>> terms[] = {
      {"L_cls", {&parts.cls, 1.0}},
      {"L_CAM", {&parts.cam, w.eta}},
      {"L_att", {&parts.att, w.delta}},
      {"L_cls_sphere", {&parts.cls_sphere, w.mu}},
      {"L_sphere", {&parts.sphere, w.rho}},
  };
  ad::Tensor total;
  for (const auto& [name, term] : terms) {
    const ad::Tensor& t = *term.first;
    if (!t.valid()) continue;
    if (t.size() != 1) throw ad::ShapeError(std::string(name) + " is not a scalar");
    if (!std::isfinite(t.item())) throw NonFiniteLoss(name);
    const ad::Tensor weighted = ad::scale(t, term.second);
    total = total.valid() ? total + weighted : weighted;
  }
  if (!total.valid()) throw std::invalid_argument("total_loss: no loss components");
  return total;
}

}  // namespace freqdebias
