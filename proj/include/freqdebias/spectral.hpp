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

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "freqdebias/fft.hpp"

namespace freqdebias {

template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-major H x W x C raster, one plane per channel. Pixel values are
// nominally in [0, 1].
template <typename Scalar>
struct BasicImage {
  std::vector<Plane<Scalar>> planes;

  BasicImage() = default;
  BasicImage(int height, int width, int channels)
      : planes(static_cast<std::size_t>(channels), Plane<Scalar>::Zero(height, width)) {}

  int height() const { return planes.empty() ? 0 : static_cast<int>(planes[0].rows()); }
  int width() const { return planes.empty() ? 0 : static_cast<int>(planes[0].cols()); }
  int channels() const { return static_cast<int>(planes.size()); }

  Plane<Scalar>& operator[](int c) { return planes[static_cast<std::size_t>(c)]; }
  const Plane<Scalar>& operator[](int c) const { return planes[static_cast<std::size_t>(c)]; }

  bool operator==(const BasicImage& o) const {
    if (planes.size() != o.planes.size()) return false;
    for (std::size_t c = 0; c < planes.size(); ++c) {
      if (planes[c].rows() != o.planes[c].rows() || planes[c].cols() != o.planes[c].cols() ||
          !(planes[c] == o.planes[c]).all())
        return false;
    }
    return true;
  }
};

// Per-channel amplitude and phase in DC-centred layout: the zero frequency
// sits at (H/2, W/2).
template <typename Scalar>
struct BasicSpectrum {
  std::vector<Plane<Scalar>> amplitude;
  std::vector<Plane<Scalar>> phase;

  int height() const { return amplitude.empty() ? 0 : static_cast<int>(amplitude[0].rows()); }
  int width() const { return amplitude.empty() ? 0 : static_cast<int>(amplitude[0].cols()); }
  int channels() const { return static_cast<int>(amplitude.size()); }
};

using Image = BasicImage<double>;
using Spectrum = BasicSpectrum<double>;

// Throws std::invalid_argument unless the image has 1 or 3 channels, even
// dimensions of at least 8, and finite pixels.
template <typename Scalar>
void validate_image(const BasicImage<Scalar>& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw std::invalid_argument("image must have 1 or 3 channels, got " +
                                std::to_string(img.channels()));
  }
  const int h = img.height(), w = img.width();
  if (h < 8 || w < 8 || h % 2 || w % 2) {
    throw std::invalid_argument("image dimensions must be even and >= 8, got " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  for (const auto& p : img.planes) {
    if (p.rows() != h || p.cols() != w) throw std::invalid_argument("image planes differ in size");
    if (!p.isFinite().all()) throw std::invalid_argument("image contains non-finite pixels");
  }
}

// Index of the frequency -f in centred layout.
inline int mirror_row(int u, int h) { return (h - u) % h; }
inline int mirror_col(int v, int w) { return (w - v) % w; }

namespace detail {

template <typename T>
Plane<T> shift_centre(const Plane<T>& in) {
  const auto h = in.rows(), w = in.cols();
  Plane<T> out(h, w);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c) out((r + h / 2) % h, (c + w / 2) % w) = in(r, c);
  return out;
}

}  // namespace detail

template <typename Scalar>
BasicSpectrum<Scalar> fft2(const BasicImage<Scalar>& img) {
  validate_image(img);
  BasicSpectrum<Scalar> out;
  for (const auto& plane : img.planes) {
    ComplexPlane<Scalar> data = plane.template cast<std::complex<Scalar>>();
    fft2_inplace<Scalar>(data, false);
    ComplexPlane<Scalar> centred = detail::shift_centre(data);
    out.amplitude.push_back(centred.abs());
    out.phase.push_back(centred.arg());
  }
  return out;
}

template <typename Scalar>
struct InverseResult {
  BasicImage<Scalar> image;
  // Largest imaginary magnitude discarded during reconstruction.
  Scalar max_imag = 0;
};

template <typename Scalar>
InverseResult<Scalar> ifft2_detailed(const BasicSpectrum<Scalar>& spec) {
  if (spec.amplitude.size() != spec.phase.size() || spec.amplitude.empty()) {
    throw std::invalid_argument("spectrum must have matching amplitude and phase planes");
  }
  InverseResult<Scalar> res;
  const auto h = spec.amplitude[0].rows(), w = spec.amplitude[0].cols();
  for (std::size_t c = 0; c < spec.amplitude.size(); ++c) {
    const auto& a = spec.amplitude[c];
    const auto& p = spec.phase[c];
    if (a.rows() != h || a.cols() != w || p.rows() != h || p.cols() != w) {
      throw std::invalid_argument("spectrum planes differ in size");
    }
    if (!a.isFinite().all() || !p.isFinite().all()) {
      throw std::invalid_argument("spectrum contains non-finite values");
    }
    ComplexPlane<Scalar> centred(h, w);
    for (Eigen::Index i = 0; i < a.size(); ++i)
      centred.data()[i] = std::polar(a.data()[i], p.data()[i]);
    // Undo the centring; for even sizes the shift is its own inverse.
    ComplexPlane<Scalar> data = detail::shift_centre(centred);
    fft2_inplace<Scalar>(data, true);
    res.max_imag = std::max(res.max_imag, data.imag().abs().maxCoeff());
    res.image.planes.push_back(data.real());
  }
  return res;
}

// Inverse transform to a real image. Throws std::domain_error if the
// discarded imaginary residue exceeds 1e-8 (relative to max(1, peak)),
// i.e. the spectrum was not Hermitian.
template <typename Scalar>
BasicImage<Scalar> ifft2(const BasicSpectrum<Scalar>& spec) {
  auto res = ifft2_detailed(spec);
  Scalar peak = 1;
  for (const auto& p : res.image.planes) peak = std::max(peak, p.abs().maxCoeff());
  if (res.max_imag > Scalar(1e-8) * peak) {
    throw std::domain_error("ifft2: imaginary residue " + std::to_string(double(res.max_imag)) +
                            " indicates a non-Hermitian spectrum");
  }
  return std::move(res.image);
}

// ---------------------------------------------------------------------------
// Angular-radial segmentation

// Partition of the centred frequency plane into n_r radial x n_theta angular
// segments. Radius is normalised so the corner frequency has r = 1; angle is
// folded onto [0, pi) so a segment always contains its Hermitian mirror.
struct SegmentGrid {
  int height = 0;
  int width = 0;
  int n_radial = 0;
  int n_angular = 0;
  std::vector<int> index;   // H*W segment ids, row-major, centred layout
  std::vector<int> counts;  // pixels per segment

  int total() const { return n_radial * n_angular; }
  int segment_at(int u, int v) const { return index[static_cast<std::size_t>(u) * width + v]; }
  int radial_bin(int segment) const { return segment / n_angular; }
  int angular_bin(int segment) const { return segment % n_angular; }
};

SegmentGrid make_segment_grid(int height, int width, int n_radial, int n_angular);

// Binary H x W frequency mask in centred layout.
struct BandMask {
  Plane<double> values;

  int height() const { return static_cast<int>(values.rows()); }
  int width() const { return static_cast<int>(values.cols()); }
};

BandMask full_mask(int height, int width, double fill);
// Mask selecting every segment z with selected[z] true.
BandMask mask_from_segments(const SegmentGrid& grid, const std::vector<bool>& selected);
BandMask mask_from_labels(const SegmentGrid& grid, const std::vector<int>& labels, int label);
BandMask complement(const BandMask& mask);
bool is_hermitian(const BandMask& mask);

struct MeanLogSpectrum {
  Eigen::VectorXd values;           // one entry per segment
  std::vector<int> empty_segments;  // segments with no pixels (value 0)
};

// Channel-averaged mean of log(1 + A) over each segment.
MeanLogSpectrum mean_log_spectrum(const Spectrum& spec, const SegmentGrid& grid);

// Amplitude multiplied by the mask; phase unchanged.
Spectrum apply_mask(const Spectrum& spec, const BandMask& mask);

// Forces B(u, v) = B(-u, -v) on any plane by copying the canonical partner.
Plane<double> hermitian_symmetrize(const Plane<double>& plane);

// Row-major CSV, one row per line, 17 significant digits.
void write_plane_csv(const std::string& path, const Plane<double>& plane);

}  // namespace freqdebias
