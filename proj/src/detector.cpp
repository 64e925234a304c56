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

#include "freqdebias/detector.hpp"

#include <cmath>

#include "freqdebias/checkpoint.hpp"
#include "freqdebias/vmf.hpp"

namespace freqdebias {

namespace {

ad::Array he_normal(std::size_t count, int fan_in, Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in));
  ad::Array v(static_cast<Eigen::Index>(count));
  for (auto& x : v) x = n(rng);
  return v;
}

// (x - per-plane mean) / scale for [N, C, H, W].
ad::Tensor standardize(ad::Tape& t, const ad::Tensor& x, double scale) {
  const int planes = x.dim(0) * x.dim(1), pixels = x.dim(2) * x.dim(3);
  const ad::Tensor rows = ad::reshape(x, {planes, pixels});
  const ad::Tensor means = ad::reshape(ad::mean_axis(rows, 1), {planes, 1});
  const ad::Tensor centred = rows - ad::matmul(means, t.constant({1, pixels}, 1.0));
  return ad::reshape(ad::scale(centred, 1.0 / scale), x.shape());
}

}  // namespace

Detector::Conv Detector::make_conv(const std::string& name, int out, int in, int k, Rng& rng) {
  Conv c;
  c.w = ad::Parameter(name + ".w", {out, in, k, k},
                      he_normal(static_cast<std::size_t>(out) * in * k * k, in * k * k, rng));
  c.b = ad::Parameter(name + ".b", {out}, ad::Array::Zero(out));
  return c;
}

Detector::Detector(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.in_channels < 1 || cfg.align_channels < 1 || cfg.embed_dim < 2) {
    throw std::invalid_argument("detector: channel counts must be positive and embed_dim >= 2");
  }
  if (!(cfg.input_std > 0)) throw std::invalid_argument("detector: input_std must be positive");
  for (int c : cfg.stage_channels)
    if (c < 1) throw std::invalid_argument("detector: stage channels must be positive");
  Rng rng = make_rng(seed, kStreamInit);
  const auto& sc = cfg.stage_channels;
  const int a = cfg.align_channels;
  int in = cfg.in_channels;
  for (int i = 0; i < 3; ++i) {
    stages_[static_cast<std::size_t>(i)] = make_conv("psi" + std::to_string(i + 1), sc[i], in, 3, rng);
    in = sc[static_cast<std::size_t>(i)];
  }
  align1a_ = make_conv("omega1.a", a, sc[0], 3, rng);
  align1b_ = make_conv("omega1.b", a, a, 3, rng);
  align1r_ = make_conv("omega1.res", a, a, 3, rng);
  align2a_ = make_conv("omega2.a", a, sc[1], 3, rng);
  align2r_ = make_conv("omega2.res", a, a, 3, rng);
  align3a_ = make_conv("omega3.a", a, sc[2], 3, rng);
  align3r_ = make_conv("omega3.res", a, a, 3, rng);
  project_ = make_conv("fcat", cfg.embed_dim, 3 * a, 1, rng);
  // Residual branches start near identity.
  for (Conv* c : {&align1r_, &align2r_, &align3r_}) c->w.value *= 0.1;

  fc_w_ = ad::Parameter("fc.w", {sc[2], 2}, he_normal(static_cast<std::size_t>(sc[2]) * 2, sc[2], rng));
  fc_b_ = ad::Parameter("fc.b", {2}, ad::Array::Zero(2));

  // Two random orthogonal unit directions (Gram-Schmidt).
  std::normal_distribution<double> n(0.0, 1.0);
  const int d = cfg.embed_dim;
  Eigen::VectorXd u(d), v(d);
  for (int i = 0; i < d; ++i) u(i) = n(rng);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  u.normalize();
  v -= u * u.dot(v);
  v.normalize();
  ad::Array dirs(2 * d);
  dirs << u.array(), v.array();
  directions_ = ad::Parameter("vmf.mu", {2, d}, dirs);
  kappa_ = ad::Parameter("vmf.kappa", {2}, ad::Array::Constant(2, cfg.kappa_init));
  gamma_ = ad::Parameter("cam.gamma", {1}, ad::Array::Ones(1));
  beta_ = ad::Parameter("cam.beta", {1}, ad::Array::Zero(1));
  for (auto* p : parameters()) p->zero_grad();
}

ad::Tensor Detector::apply(ad::Tape& t, Conv& c, const ad::Tensor& x, int stride) {
  return ad::conv2d(x, t.parameter(c.w), t.parameter(c.b), stride);
}

ad::Tensor Detector::residual(ad::Tape& t, Conv& c, const ad::Tensor& x) {
  return ad::relu(x + apply(t, c, x, 1));
}

Detector::Outputs Detector::forward(ad::Tape& t, const ad::Tensor& x, bool with_aux) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) % 8 || x.dim(3) % 8) {
    throw ad::ShapeError("detector: expected [N, " + std::to_string(cfg_.in_channels) +
                         ", H, W] with H, W divisible by 8, got " + ad::to_string(x.shape()));
  }
  std::array<ad::Tensor, 3> stage;
  ad::Tensor h = standardize(t, x, cfg_.input_std);
  for (std::size_t i = 0; i < 3; ++i) {
    h = ad::avg_pool2(ad::relu(apply(t, stages_[i], h, 1)));
    stage[i] = h;
  }
  Outputs out;
  out.features = stage[2];
  out.fc_weight = t.parameter(fc_w_);
  const ad::Tensor pooled = ad::global_avg_pool(out.features);
  out.logits = ad::matmul(pooled, out.fc_weight) + ad::expand(t.parameter(fc_b_), x.dim(0));
  if (!with_aux) return out;

  ad::Tensor f1 = ad::relu(apply(t, align1a_, stage[0], 2));
  f1 = residual(t, align1r_, ad::relu(apply(t, align1b_, f1, 2)));
  const ad::Tensor f2 = residual(t, align2r_, ad::relu(apply(t, align2a_, stage[1], 2)));
  const ad::Tensor f3 = residual(t, align3r_, ad::relu(apply(t, align3a_, stage[2], 1)));
  if (f1.shape() != f2.shape() || f2.shape() != f3.shape()) {
    throw ad::ShapeError("detector: aligned features disagree: " + ad::to_string(f1.shape()) + ", " +
                         ad::to_string(f2.shape()) + ", " + ad::to_string(f3.shape()));
  }
  const ad::Tensor cat = ad::conv1x1(ad::concat_channels({f1, f2, f3}), t.parameter(project_.w),
                                     t.parameter(project_.b));
  out.embedding = ad::l2_normalize(ad::global_avg_pool(cat));
  return out;
}

void Detector::project() {
  const int d = cfg_.embed_dim;
  for (int r = 0; r < 2; ++r) {
    auto row = directions_.value.segment(r * d, d);
    const double norm = std::sqrt(row.square().sum());
    if (norm > 0) row /= norm;
  }
  kappa_.value = kappa_.value.max(0.0).min(kMaxKappa);
}

std::vector<ad::Parameter*> Detector::backbone_parameters() {
  std::vector<ad::Parameter*> ps;
  for (auto& s : stages_) {
    ps.push_back(&s.w);
    ps.push_back(&s.b);
  }
  ps.push_back(&fc_w_);
  ps.push_back(&fc_b_);
  return ps;
}

std::vector<ad::Parameter*> Detector::parameters() {
  auto ps = backbone_parameters();
  for (Conv* c : {&align1a_, &align1b_, &align1r_, &align2a_, &align2r_, &align3a_, &align3r_, &project_}) {
    ps.push_back(&c->w);
    ps.push_back(&c->b);
  }
  for (ad::Parameter* p : {&directions_, &kappa_, &gamma_, &beta_}) ps.push_back(p);
  return ps;
}

std::size_t Detector::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

namespace {

constexpr const char* kConfigEntry = "detector.config";

ad::NamedArray encode(const DetectorConfig& c) {
  ad::Array v(8);
  v << c.in_channels, c.stage_channels[0], c.stage_channels[1], c.stage_channels[2], c.align_channels, c.embed_dim,
      c.kappa_init, c.input_std;
  return {kConfigEntry, {8}, v};
}

DetectorConfig decode(const std::vector<ad::NamedArray>& entries, const std::string& path) {
  for (const auto& e : entries) {
    if (e.name != kConfigEntry) continue;
    if (e.values.size() != 8) throw std::runtime_error(path + ": malformed " + kConfigEntry);
    DetectorConfig c;
    c.in_channels = static_cast<int>(e.values(0));
    for (int i = 0; i < 3; ++i) c.stage_channels[static_cast<std::size_t>(i)] = static_cast<int>(e.values(1 + i));
    c.align_channels = static_cast<int>(e.values(4));
    c.embed_dim = static_cast<int>(e.values(5));
    c.kappa_init = e.values(6);
    c.input_std = e.values(7);
    return c;
  }
  throw std::runtime_error(path + ": not a detector checkpoint (no " + kConfigEntry + ")");
}

}  // namespace

void Detector::save(const std::string& path) {
  auto entries = ad::snapshot(parameters());
  entries.push_back(encode(cfg_));
  ad::save_checkpoint(path, entries);
}

Detector Detector::from_checkpoint(const std::string& path) {
  const auto entries = ad::load_checkpoint(path);
  Detector det(decode(entries, path), 0);
  ad::restore(entries, det.parameters());
  return det;
}

void Detector::load(const std::string& path) {
  ad::restore(ad::load_checkpoint(path), parameters());
  for (auto* p : parameters()) p->zero_grad();
}

std::vector<std::array<double, 2>> Detector::predict(const std::vector<Image>& images, int chunk) {
  std::vector<std::array<double, 2>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(chunk));
    std::vector<Image> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                            images.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Tape t;
    t.set_recording(false);
    const ad::Tensor p = ad::softmax(forward(t, batch_tensor(t, part), false).logits);
    for (std::size_t i = 0; i < part.size(); ++i)
      out.push_back({p.value()(static_cast<Eigen::Index>(2 * i)), p.value()(static_cast<Eigen::Index>(2 * i + 1))});
  }
  return out;
}

ad::Tensor batch_tensor(ad::Tape& tape, const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("batch_tensor: empty batch");
  const int c = images[0].channels(), h = images[0].height(), w = images[0].width();
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  ad::Array v(static_cast<Eigen::Index>(images.size()) * c * plane);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    if (img.channels() != c || img.height() != h || img.width() != w) {
      throw ad::ShapeError("batch_tensor: image " + std::to_string(i) + " differs in shape");
    }
    for (int ch = 0; ch < c; ++ch)
      v.segment((static_cast<Eigen::Index>(i) * c + ch) * plane, plane) =
          Eigen::Map<const ad::Array>(img[ch].data(), plane);
  }
  return tape.constant({static_cast<int>(images.size()), c, h, w}, std::move(v));
}

std::vector<Score> DetectorScorer::score(const std::vector<Image>& images, int label) {
  std::vector<Score> out;
  for (const auto& p : det_.predict(images)) out.push_back(make_score(p[1], label));
  return out;
}

}  // namespace freqdebias
