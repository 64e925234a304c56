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

#include "freqdebias/fomixup.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "freqdebias/image_io.hpp"
#include "freqdebias/kmeans.hpp"

namespace freqdebias {

void MixConfig::validate(int total_segments) const {
  if (k < 1 || k > total_segments) {
    throw std::invalid_argument("k out of range: need 1 <= k <= " + std::to_string(total_segments) +
                                ", got " + std::to_string(k));
  }
  if (t < 1 || t > k) {
    throw std::invalid_argument("t out of range: need 1 <= t <= k, got " + std::to_string(t));
  }
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("λ out of range: need 0 < λ <= 1, got " + std::to_string(lambda));
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("sigma out of range: need sigma >= 0, got " + std::to_string(sigma));
  }
  if (!(xi_min >= 0.0 && xi_min <= xi_max && xi_max <= 1.0)) {
    throw std::invalid_argument("xi range must satisfy 0 <= xi_min <= xi_max <= 1");
  }
}

// ---------------------------------------------------------------------------
// Scoring

Score make_score(double p_fake, int label) {
  Score s;
  p_fake = std::clamp(p_fake, 0.0, 1.0);
  s.probs = {1.0 - p_fake, p_fake};
  const double p = s.probs[static_cast<std::size_t>(label)];
  s.loss = -std::log(std::max(p, 1e-300));
  return s;
}

std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  for (int v : {img.height(), img.width(), img.channels()})
    for (int b = 0; b < 4; ++b) feed((static_cast<unsigned>(v) >> (8 * b)) & 0xff);
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c)
      for (int ch = 0; ch < img.channels(); ++ch)
        feed(static_cast<std::uint64_t>(std::lround(std::clamp(img[ch](r, c), 0.0, 1.0) * 255.0)));
  return h;
}

ScoreTableScorer::ScoreTableScorer(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open score file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      const std::uint64_t key = std::stoull(line.substr(0, comma), nullptr, 16);
      const double p = std::stod(line.substr(comma + 1));
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability outside [0, 1]");
      table_[key] = p;
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::vector<Score> ScoreTableScorer::score(const std::vector<Image>& images, int label) {
  std::vector<Score> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    const auto it = table_.find(image_hash(img));
    if (it == table_.end()) {
      std::ostringstream os;
      os << "no score for image hash " << std::hex << image_hash(img);
      throw std::runtime_error(os.str());
    }
    out.push_back(make_score(it->second, label));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dominant bands

ClusterMasks dominant_masks(const Image& img, int label, const SegmentGrid& grid, Scorer& scorer,
                            const MixConfig& cfg) {
  cfg.validate(grid.total());
  const Spectrum spec = fft2(img);
  if (spec.height() != grid.height || spec.width() != grid.width) {
    throw std::invalid_argument("dominant_masks: grid does not match image dimensions");
  }
  const MeanLogSpectrum mls = mean_log_spectrum(spec, grid);

  // Empty segments own no pixels; cluster only the populated ones.
  std::vector<int> populated;
  for (int z = 0; z < grid.total(); ++z)
    if (grid.counts[static_cast<std::size_t>(z)] > 0) populated.push_back(z);
  Eigen::VectorXd values(static_cast<Eigen::Index>(populated.size()));
  for (std::size_t i = 0; i < populated.size(); ++i) values(static_cast<Eigen::Index>(i)) = mls.values(populated[i]);
  const int k = std::min<int>(cfg.k, static_cast<int>(populated.size()));
  const KMeansResult km = kmeans_1d(values, k, cfg.seed);

  ClusterMasks out;
  out.diagnostic = km.diagnostic;
  const int n = km.clusters();
  std::vector<std::vector<int>> segs(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < populated.size(); ++i)
    segs[static_cast<std::size_t>(km.labels[i])].push_back(populated[i]);
  // Empty segments ride along with cluster 0 so the masks still partition
  // the segment index space.
  for (int z = 0; z < grid.total(); ++z)
    if (grid.counts[static_cast<std::size_t>(z)] == 0) segs[0].push_back(z);

  std::vector<BandMask> masks;
  std::vector<Image> filtered;
  for (int c = 0; c < n; ++c) {
    std::vector<bool> sel(static_cast<std::size_t>(grid.total()), false);
    for (int z : segs[static_cast<std::size_t>(c)]) sel[static_cast<std::size_t>(z)] = true;
    masks.push_back(mask_from_segments(grid, sel));
    filtered.push_back(ifft2(apply_mask(spec, cfg.ohem_exclude ? complement(masks.back()) : masks.back())));
  }

  std::vector<Score> scores;
  for (int c = 0; c < n; ++c) {
    try {
      scores.push_back(scorer.score(filtered[static_cast<std::size_t>(c)], label));
    } catch (const std::exception& e) {
      throw std::runtime_error("scorer failed on mask " + std::to_string(c) + ": " + e.what());
    }
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)].loss > scores[static_cast<std::size_t>(b)].loss;
  });
  for (int c : order) {
    out.masks.push_back(std::move(masks[static_cast<std::size_t>(c)]));
    out.segments.push_back(segs[static_cast<std::size_t>(c)]);
    out.losses.push_back(scores[static_cast<std::size_t>(c)].loss);
    out.cluster_ids.push_back(c);
  }
  out.top = std::min(cfg.t, n);
  return out;
}

bool is_partition(const ClusterMasks& masks) {
  if (masks.masks.empty()) return false;
  Plane<double> acc = Plane<double>::Zero(masks.masks[0].height(), masks.masks[0].width());
  for (const auto& m : masks.masks) acc += m.values;
  return (acc == 1.0).all();
}

// ---------------------------------------------------------------------------
// Mixing

Plane<double> amplitude_perturbation(int height, int width, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(1.0, sigma);
  Plane<double> p(height, width);
  if (sigma == 0.0) {
    p.setOnes();
    return p;
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = normal(rng);
  return hermitian_symmetrize(p).max(0.0);
}

MixOutput mix_amplitudes(const Image& x_i, const Image& x_j, const BandMask& mask, double xi,
                         const Plane<double>* perturbation, bool invert) {
  validate_image(x_i);
  validate_image(x_j);
  if (x_i.height() != x_j.height() || x_i.width() != x_j.width() || x_i.channels() != x_j.channels()) {
    throw std::invalid_argument("fo-mixup: x_i and x_j differ in dimensions");
  }
  if (mask.height() != x_i.height() || mask.width() != x_i.width()) {
    throw std::invalid_argument("fo-mixup: mask does not match image dimensions");
  }
  const Spectrum si = fft2(x_i);
  const Spectrum sj = fft2(x_j);
  const Plane<double> keep = invert ? Plane<double>(1.0 - mask.values) : mask.values;

  MixOutput out;
  out.spectrum = si;
  for (int c = 0; c < si.channels(); ++c) {
    const auto& ai = si.amplitude[static_cast<std::size_t>(c)];
    const auto& aj = sj.amplitude[static_cast<std::size_t>(c)];
    Plane<double> mixed = ai * keep + ((1.0 - xi) * ai + xi * aj) * (1.0 - keep);
    if (perturbation) mixed *= *perturbation;
    out.spectrum.amplitude[static_cast<std::size_t>(c)] = mixed;
  }
  out.unclamped = ifft2(out.spectrum);
  out.image = out.unclamped;
  for (auto& p : out.image.planes) p = p.max(0.0).min(1.0);
  return out;
}

MixResult fo_mixup(const Image& x_i, const Image& x_j, const ClusterMasks& masks,
                   const MixConfig& cfg, Rng& rng) {
  if (masks.top < 1 || masks.top > masks.size()) {
    throw std::invalid_argument("fo-mixup: cluster masks have no eligible top mask");
  }
  MixResult res;
  res.mask_index = std::uniform_int_distribution<int>(0, masks.top - 1)(rng);
  res.xi = std::uniform_real_distribution<double>(cfg.xi_min, cfg.xi_max)(rng);
  const Plane<double> pert = amplitude_perturbation(x_i.height(), x_i.width(), cfg.sigma, rng);
  res.image = mix_amplitudes(x_i, x_j, masks.masks[static_cast<std::size_t>(res.mask_index)], res.xi,
                             &pert, cfg.invert_mask)
                  .image;
  return res;
}

// ---------------------------------------------------------------------------
// Confidence sampling

double entropy(const std::vector<double>& p) {
  double e = 0;
  for (double v : p)
    if (v > 0) e -= v * std::log(v);
  return e;
}

double entropy(const std::array<double, 2>& p) { return entropy(std::vector<double>(p.begin(), p.end())); }

std::vector<std::size_t> confidence_sample(const std::vector<std::array<double, 2>>& probs,
                                           double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("λ out of range: need 0 < λ <= 1, got " + std::to_string(lambda));
  }
  std::vector<double> e(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) e[i] = entropy(probs[i]);
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return e[a] < e[b]; });
  const auto keep = static_cast<std::size_t>(std::ceil(lambda * static_cast<double>(probs.size()) - 1e-12));
  order.resize(std::min(keep, order.size()));
  return order;
}

// ---------------------------------------------------------------------------
// Pixel-space augmentation

Image standard_augment(const Image& img, double p, Rng& rng) {
  Image out = img;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < p) {
    const double factor = std::uniform_real_distribution<double>(0.8, 1.2)(rng);
    for (auto& plane : out.planes) {
      const double m = plane.mean();
      plane = ((plane - m) * factor + m).max(0.0).min(1.0);
    }
  }
  if (u(rng) < p) {
    for (auto& plane : out.planes) {
      for (Eigen::Index r = 0; r + 1 < plane.rows(); r += 2)
        for (Eigen::Index c = 0; c + 1 < plane.cols(); c += 2) plane.block(r, c, 2, 2).setConstant(plane.block(r, c, 2, 2).mean());
    }
  }
  return out;
}

}  // namespace freqdebias
