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

#include "freqdebias/spectral.hpp"

#include <cstdio>
#include <fstream>

namespace freqdebias {

SegmentGrid make_segment_grid(int height, int width, int n_radial, int n_angular) {
  if (n_radial < 1 || n_angular < 1) {
    throw std::invalid_argument("segment grid needs n_r >= 1 and n_theta >= 1");
  }
  if (height < 2 || width < 2 || height % 2 || width % 2) {
    throw std::invalid_argument("segment grid needs even dimensions");
  }
  SegmentGrid g;
  g.height = height;
  g.width = width;
  g.n_radial = n_radial;
  g.n_angular = n_angular;
  g.index.assign(static_cast<std::size_t>(height) * width, 0);
  g.counts.assign(static_cast<std::size_t>(g.total()), 0);

  const double pi = std::numbers::pi;
  const double half_h = height / 2.0, half_w = width / 2.0;
  std::vector<int> raw(g.index.size());
  for (int u = 0; u < height; ++u) {
    for (int v = 0; v < width; ++v) {
      const double fy = (u - half_h) / half_h;
      const double fx = (v - half_w) / half_w;
      const double r = std::sqrt(fx * fx + fy * fy) / std::numbers::sqrt2;
      int ir = static_cast<int>(r * n_radial);
      ir = std::min(ir, n_radial - 1);
      double theta = std::atan2(fy, fx);
      if (theta < 0) theta += pi;
      if (theta >= pi) theta -= pi;
      int it = static_cast<int>(theta / (pi / n_angular));
      it = std::clamp(it, 0, n_angular - 1);
      raw[static_cast<std::size_t>(u) * width + v] = ir * n_angular + it;
    }
  }
  // The Nyquist row/column wraps onto itself under negation, so fold each
  // pixel onto the lower-indexed member of its mirror pair.
  for (int u = 0; u < height; ++u) {
    for (int v = 0; v < width; ++v) {
      const std::size_t p = static_cast<std::size_t>(u) * width + v;
      const std::size_t m = static_cast<std::size_t>(mirror_row(u, height)) * width + mirror_col(v, width);
      g.index[p] = raw[std::min(p, m)];
      ++g.counts[static_cast<std::size_t>(g.index[p])];
    }
  }
  return g;
}

BandMask full_mask(int height, int width, double fill) {
  return BandMask{Plane<double>::Constant(height, width, fill)};
}

BandMask mask_from_segments(const SegmentGrid& grid, const std::vector<bool>& selected) {
  if (static_cast<int>(selected.size()) != grid.total()) {
    throw std::invalid_argument("mask_from_segments: selection size does not match grid");
  }
  BandMask m{Plane<double>::Zero(grid.height, grid.width)};
  for (int u = 0; u < grid.height; ++u)
    for (int v = 0; v < grid.width; ++v)
      if (selected[static_cast<std::size_t>(grid.segment_at(u, v))]) m.values(u, v) = 1.0;
  return m;
}

BandMask mask_from_labels(const SegmentGrid& grid, const std::vector<int>& labels, int label) {
  std::vector<bool> sel(labels.size());
  for (std::size_t z = 0; z < labels.size(); ++z) sel[z] = labels[z] == label;
  return mask_from_segments(grid, sel);
}

BandMask complement(const BandMask& mask) { return BandMask{1.0 - mask.values}; }

bool is_hermitian(const BandMask& mask) {
  const int h = mask.height(), w = mask.width();
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v)
      if (mask.values(u, v) != mask.values(mirror_row(u, h), mirror_col(v, w))) return false;
  return true;
}

MeanLogSpectrum mean_log_spectrum(const Spectrum& spec, const SegmentGrid& grid) {
  if (spec.height() != grid.height || spec.width() != grid.width) {
    throw std::invalid_argument("mean_log_spectrum: grid does not match spectrum dimensions");
  }
  MeanLogSpectrum out;
  out.values = Eigen::VectorXd::Zero(grid.total());
  for (const auto& a : spec.amplitude) {
    for (int u = 0; u < grid.height; ++u)
      for (int v = 0; v < grid.width; ++v) out.values(grid.segment_at(u, v)) += std::log1p(a(u, v));
  }
  const double channels = spec.channels();
  for (int z = 0; z < grid.total(); ++z) {
    const int n = grid.counts[static_cast<std::size_t>(z)];
    if (n == 0) {
      out.empty_segments.push_back(z);
      out.values(z) = 0.0;
    } else {
      out.values(z) /= channels * n;
    }
  }
  return out;
}

Spectrum apply_mask(const Spectrum& spec, const BandMask& mask) {
  if (spec.height() != mask.height() || spec.width() != mask.width()) {
    throw std::invalid_argument("apply_mask: mask does not match spectrum dimensions");
  }
  Spectrum out = spec;
  for (auto& a : out.amplitude) a *= mask.values;
  return out;
}

Plane<double> hermitian_symmetrize(const Plane<double>& plane) {
  const int h = static_cast<int>(plane.rows()), w = static_cast<int>(plane.cols());
  Plane<double> out = plane;
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      const int mu = mirror_row(u, h), mv = mirror_col(v, w);
      if (static_cast<long>(mu) * w + mv < static_cast<long>(u) * w + v) out(u, v) = out(mu, mv);
    }
  }
  return out;
}

void write_plane_csv(const std::string& path, const Plane<double>& plane) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  char buf[32];
  for (Eigen::Index r = 0; r < plane.rows(); ++r) {
    for (Eigen::Index c = 0; c < plane.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", plane(r, c));
      if (c) os << ',';
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace freqdebias
