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

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "freqdebias/dataset.hpp"
#include "freqdebias/fomixup.hpp"

using namespace freqdebias;

namespace {

Image random_image(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  Image img;
  img.planes.emplace_back(n, n);
  for (Eigen::Index i = 0; i < img[0].size(); ++i) img[0].data()[i] = u(rng);
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (int c = 0; c < a.channels(); ++c) m = std::max(m, (a[c] - b[c]).abs().maxCoeff());
  return m;
}

// Scores by the energy of one segment: more energy, more "fake".
class BandEnergyScorer : public Scorer {
 public:
  BandEnergyScorer(const SegmentGrid& g, int segment, double scale) : grid_(g), segment_(segment), scale_(scale) {}
  using Scorer::score;
  std::vector<Score> score(const std::vector<Image>& images, int label) override {
    std::vector<Score> out;
    for (const auto& img : images) {
      const Spectrum s = fft2(img);
      double e = 0;
      for (int u = 0; u < grid_.height; ++u)
        for (int v = 0; v < grid_.width; ++v)
          if (grid_.segment_at(u, v) == segment_) e += s.amplitude[0](u, v);
      const double p = 1.0 / (1.0 + std::exp(-(scale_ * e - 4.0)));
      out.push_back(make_score(p, label));
    }
    return out;
  }

 private:
  SegmentGrid grid_;
  int segment_;
  double scale_;
};

class FailingScorer : public Scorer {
 public:
  using Scorer::score;
  std::vector<Score> score(const std::vector<Image>&, int) override { throw std::runtime_error("offline"); }
};

ClusterMasks masks_for(const Image& img, int k, int t) {
  const SegmentGrid g = make_segment_grid(img.height(), img.width(), 8, 16);
  MixConfig cfg;
  cfg.k = k;
  cfg.t = t;
  BandEnergyScorer sc(g, 3 * 16 + 2, 0.5);
  return dominant_masks(img, kLabelFake, g, sc, cfg);
}

}  // namespace

TEST_CASE("mix config validation") {
  MixConfig c;
  CHECK_NOTHROW(c.validate(128));
  c.lambda = 1.2;
  CHECK_THROWS_WITH_AS(c.validate(128), doctest::Contains("λ out of range"), std::invalid_argument);
  c.lambda = 0.5;
  c.t = 9;
  CHECK_THROWS_AS(c.validate(128), std::invalid_argument);
  c.t = 3;
  c.k = 200;
  CHECK_THROWS_AS(c.validate(128), std::invalid_argument);
  c.k = 8;
  c.sigma = -1;
  CHECK_THROWS_AS(c.validate(128), std::invalid_argument);
}

TEST_CASE("mix amplitudes closed cases") {
  const Image a = random_image(32, 1), b = random_image(32, 2);
  const BandMask zeros = full_mask(32, 32, 0.0), ones = full_mask(32, 32, 1.0);

  SUBCASE("xi = 0 reproduces x_i for any mask") {
    for (const BandMask* m : {&zeros, &ones}) CHECK(max_abs_diff(mix_amplitudes(a, b, *m, 0.0, nullptr).unclamped, a) < 1e-8);
  }
  SUBCASE("all-ones mask shields x_i") {
    CHECK(max_abs_diff(mix_amplitudes(a, b, ones, 0.5, nullptr).unclamped, a) < 1e-8);
  }
  SUBCASE("xi = 1 with an empty mask swaps the amplitude and keeps the phase") {
    const MixOutput out = mix_amplitudes(a, b, zeros, 1.0, nullptr);
    const Spectrum got = fft2(out.unclamped), sa = fft2(a), sb = fft2(b);
    CHECK((got.amplitude[0] - sb.amplitude[0]).abs().maxCoeff() < 1e-8);
    for (Eigen::Index i = 0; i < got.phase[0].size(); ++i) {
      if (got.amplitude[0].data()[i] <= 1e-12) continue;
      const double d = std::arg(std::polar(1.0, got.phase[0].data()[i] - sa.phase[0].data()[i]));
      CHECK(std::abs(d) < 1e-8);
    }
  }
  SUBCASE("invert swaps the roles of the mask and its complement") {
    const auto x = mix_amplitudes(a, b, ones, 1.0, nullptr, true);
    CHECK((fft2(x.unclamped).amplitude[0] - fft2(b).amplitude[0]).abs().maxCoeff() < 1e-8);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(mix_amplitudes(a, random_image(16, 3), zeros, 0.5, nullptr), std::invalid_argument);
  }
}

TEST_CASE("amplitude perturbation") {
  Rng rng(5);
  const auto flat = amplitude_perturbation(16, 16, 0.0, rng);
  CHECK((flat == 1.0).all());
  const auto p = amplitude_perturbation(16, 16, 0.5, rng);
  CHECK(p.minCoeff() >= 0.0);
  for (int u = 0; u < 16; ++u)
    for (int v = 0; v < 16; ++v) CHECK(p(u, v) == p(mirror_row(u, 16), mirror_col(v, 16)));
  CHECK(std::abs(p.mean() - 1.0) < 0.1);
}

TEST_CASE("dominant masks") {
  const Image img = random_image(32, 9);
  SUBCASE("partition and ordering") {
    const ClusterMasks m = masks_for(img, 8, 3);
    CHECK(is_partition(m));
    CHECK(m.top == 3);
    for (int i = 1; i < m.size(); ++i) CHECK(m.losses[static_cast<std::size_t>(i - 1)] >= m.losses[static_cast<std::size_t>(i)]);
    for (const auto& mask : m.masks) CHECK(is_hermitian(mask));
  }
  SUBCASE("k = 1 is one all-segment mask") {
    const ClusterMasks m = masks_for(img, 1, 1);
    REQUIRE(m.size() == 1);
    CHECK((m.masks[0].values == 1.0).all());
  }
  SUBCASE("scorer failure names the mask") {
    const SegmentGrid g = make_segment_grid(32, 32, 8, 16);
    FailingScorer bad;
    CHECK_THROWS_WITH(dominant_masks(img, kLabelFake, g, bad, MixConfig{}), doctest::Contains("mask 0"));
  }
}

TEST_CASE("evidence band ranks among the top masks") {
  // Class evidence is the energy of one narrow band; removing the cluster
  // holding it must cost the most.
  DatasetConfig dc = benchmark_config(1, 0);
  dc.types[0].amplitude = 0.1;
  const int band = dc.types[0].segments[0];
  const SegmentGrid g = make_segment_grid(64, 64, 8, 16);
  BandEnergyScorer sc(g, band, 0.05);
  int hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image fake = render_forgery(dc, dc.types[0], 1000 + s, 2000 + s, nullptr);
    const ClusterMasks m = dominant_masks(fake, kLabelFake, g, sc, MixConfig{});
    for (int i = 0; i < m.top; ++i) {
      const auto& segs = m.segments[static_cast<std::size_t>(i)];
      if (std::find(segs.begin(), segs.end(), band) != segs.end()) ++hits;
    }
  }
  CHECK(hits >= 19);
}

TEST_CASE("fo-mixup contracts") {
  const Image a = random_image(32, 11), b = random_image(32, 12);
  const ClusterMasks m = masks_for(a, 8, 3);
  MixConfig cfg;

  SUBCASE("deterministic per seed") {
    Rng r1(42), r2(42);
    const MixResult x = fo_mixup(a, b, m, cfg, r1), y = fo_mixup(a, b, m, cfg, r2);
    CHECK(x.image == y.image);
    CHECK(x.xi == y.xi);
    CHECK(x.mask_index == y.mask_index);
    CHECK(x.mask_index < m.top);
  }
  SUBCASE("xi = 0 and sigma = 0 is the identity") {
    cfg.xi_max = 0.0;
    cfg.sigma = 0.0;
    Rng r(3);
    CHECK(max_abs_diff(fo_mixup(a, b, m, cfg, r).image, a) < 1e-8);
  }
  SUBCASE("output stays a valid raster") {
    Rng r(4);
    const Image out = fo_mixup(a, b, m, cfg, r).image;
    CHECK(out[0].minCoeff() >= 0.0);
    CHECK(out[0].maxCoeff() <= 1.0);
  }
}

TEST_CASE("fo-mixup phase preservation with perturbation") {
  const Image a = random_image(32, 21), b = random_image(32, 22);
  Rng rng(8);
  const Plane<double> pert = amplitude_perturbation(32, 32, 0.3, rng);
  BandMask mask = full_mask(32, 32, 0.0);
  const MixOutput out = mix_amplitudes(a, b, mask, 0.7, &pert);
  const Spectrum got = fft2(out.unclamped), sa = fft2(a);
  for (Eigen::Index i = 0; i < got.phase[0].size(); ++i) {
    if (out.spectrum.amplitude[0].data()[i] <= 1e-12) continue;
    const double d = std::arg(std::polar(1.0, got.phase[0].data()[i] - sa.phase[0].data()[i]));
    CHECK(std::abs(d) < 1e-8);
  }
}

TEST_CASE("tampered region stays localised after mixing") {
  // Two forgeries of one texture source differ from it only inside their
  // regions; the mixed image keeps x_i's phase, so its change against the
  // real source concentrates in x_i's region. Pairs drawn from different
  // sources also exchange texture amplitude everywhere and are not covered.
  DatasetConfig dc = benchmark_config(2, 0);
  dc.types[0].amplitude = dc.types[1].amplitude = 0.1;
  dc.common_amplitude = 0.02;
  double inside = 0, total = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Region ri;
    const std::uint64_t src = 50 + s;
    const Image real = render_texture(dc, src);
    const Image xi = render_forgery(dc, dc.types[0], src, 100 + s, &ri);
    const Image xj = render_forgery(dc, dc.types[0], src, 200 + s, nullptr);
    const ClusterMasks m = masks_for(xi, 8, 3);
    MixConfig cfg;
    cfg.sigma = 0.0;
    Rng rng(s);
    const Image mixed = fo_mixup(xi, xj, m, cfg, rng).image;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double d = mixed[0](y, x) - real[0](y, x);
        total += d * d;
        if (ri.contains(y, x)) inside += d * d;
      }
  }
  CHECK(inside >= 0.7 * total);
}

TEST_CASE("entropy and confidence sampling") {
  CHECK(entropy(std::array<double, 2>{0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(entropy(std::array<double, 2>{1.0, 0.0}) == 0.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n : {1, 7, 10, 33}) {
    for (double lambda : {0.1, 0.5, 1.0}) {
      std::vector<std::array<double, 2>> probs;
      for (int i = 0; i < n; ++i) {
        const double p = u(rng);
        probs.push_back({1 - p, p});
      }
      const auto keep = confidence_sample(probs, lambda);
      const auto want = static_cast<std::size_t>(std::ceil(lambda * n - 1e-12));
      CHECK(keep.size() == want);
      std::vector<bool> kept(static_cast<std::size_t>(n), false);
      double worst_kept = 0;
      for (auto i : keep) {
        kept[i] = true;
        worst_kept = std::max(worst_kept, entropy(probs[i]));
      }
      for (int i = 0; i < n; ++i)
        if (!kept[static_cast<std::size_t>(i)]) CHECK(entropy(probs[static_cast<std::size_t>(i)]) >= worst_kept);
    }
  }
  CHECK(confidence_sample(std::vector<std::array<double, 2>>{}, 0.5).empty());
  CHECK_THROWS_AS(confidence_sample(std::vector<std::array<double, 2>>{{0.5, 0.5}}, 0.0), std::invalid_argument);

  // Ties keep input order.
  std::vector<std::pair<int, std::array<double, 2>>> tied{{7, {0.5, 0.5}}, {8, {0.5, 0.5}}, {9, {0.5, 0.5}}};
  CHECK(confidence_sample(tied, 0.5) == std::vector<int>{7, 8});
}

TEST_CASE("score table scorer") {
  const Image a = random_image(16, 1), b = random_image(16, 2);
  const auto path = std::filesystem::temp_directory_path() / "freqdebias_scores.csv";
  {
    std::ofstream f(path);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(image_hash(a)));
    f << "# hash,p_fake\n" << buf << ",0.9\n";
  }
  ScoreTableScorer sc(path.string());
  const Score s = sc.score(a, kLabelFake);
  CHECK(s.probs[1] == doctest::Approx(0.9));
  CHECK(s.probs[0] + s.probs[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.loss == doctest::Approx(-std::log(0.9)));
  CHECK_THROWS(sc.score(b, kLabelFake));
  std::filesystem::remove(path);
}

TEST_CASE("standard augmentation") {
  const Image a = random_image(16, 3);
  Rng r1(1), r2(1);
  CHECK(standard_augment(a, 0.0, r1) == a);
  const Image x = standard_augment(a, 1.0, r1), y = standard_augment(a, 1.0, r2);
  CHECK(x.height() == 16);
  CHECK(x[0].minCoeff() >= 0.0);
  CHECK(x[0].maxCoeff() <= 1.0);
  // With p = 1 the image is pixelated into 2x2 blocks.
  CHECK(x[0](0, 0) == x[0](1, 1));
  (void)y;
}
