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

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

// Mixed-radix decimation-in-time FFT (radix 4, 2, 3, 5 and a generic odd
// butterfly), templated on the real scalar type.

namespace freqdebias {

template <typename Scalar>
class FftPlan {
 public:
  using Complex = std::complex<Scalar>;

  FftPlan(int n, bool inverse) : n_(n), inverse_(inverse) {
    if (n < 1) throw std::invalid_argument("FftPlan: length must be positive");
    twiddles_.resize(static_cast<std::size_t>(n));
    const long double sign = inverse ? 1.0L : -1.0L;
    for (int i = 0; i < n; ++i) {
      const long double phase = sign * 2.0L * std::numbers::pi_v<long double> * i / n;
      twiddles_[static_cast<std::size_t>(i)] =
          Complex(static_cast<Scalar>(std::cos(phase)), static_cast<Scalar>(std::sin(phase)));
    }
    int rem = n;
    for (int p : {4, 2, 3, 5}) {
      while (rem % p == 0) {
        factors_.push_back(p);
        rem /= p;
      }
    }
    for (int p = 7; rem > 1; p += 2) {
      while (rem % p == 0) {
        factors_.push_back(p);
        rem /= p;
      }
    }
  }

  int size() const { return n_; }
  bool inverse() const { return inverse_; }

  // Unnormalised transform of n strided inputs into n contiguous outputs.
  void run(const Complex* in, Complex* out, int in_stride = 1) const {
    work(out, in, 1, in_stride, 0, n_);
  }

 private:
  void work(Complex* out, const Complex* in, int fstride, int in_stride, std::size_t stage,
            int len) const {
    if (len == 1) {
      out[0] = in[0];
      return;
    }
    const int p = factors_[stage];
    const int m = len / p;
    if (m == 1) {
      for (int j = 0; j < p; ++j) out[j] = in[static_cast<std::ptrdiff_t>(j) * fstride * in_stride];
    } else {
      for (int j = 0; j < p; ++j) {
        work(out + static_cast<std::ptrdiff_t>(j) * m,
             in + static_cast<std::ptrdiff_t>(j) * fstride * in_stride, fstride * p, in_stride,
             stage + 1, m);
      }
    }
    switch (p) {
      case 2: butterfly2(out, fstride, m); break;
      case 4: butterfly4(out, fstride, m); break;
      default: butterfly_generic(out, fstride, p, m); break;
    }
  }

  void butterfly2(Complex* out, int fstride, int m) const {
    for (int k = 0; k < m; ++k) {
      const Complex t = out[k + m] * twiddles_[static_cast<std::size_t>(k) * fstride];
      out[k + m] = out[k] - t;
      out[k] += t;
    }
  }

  void butterfly4(Complex* out, int fstride, int m) const {
    for (int k = 0; k < m; ++k) {
      const Complex s0 = out[k + m] * twiddles_[static_cast<std::size_t>(k) * fstride];
      const Complex s1 = out[k + 2 * m] * twiddles_[static_cast<std::size_t>(2 * k) * fstride];
      const Complex s2 = out[k + 3 * m] * twiddles_[static_cast<std::size_t>(3 * k) * fstride];
      const Complex s5 = out[k] - s1;
      out[k] += s1;
      const Complex s3 = s0 + s2;
      const Complex s4 = s0 - s2;
      out[k + 2 * m] = out[k] - s3;
      out[k] += s3;
      if (inverse_) {
        out[k + m] = Complex(s5.real() - s4.imag(), s5.imag() + s4.real());
        out[k + 3 * m] = Complex(s5.real() + s4.imag(), s5.imag() - s4.real());
      } else {
        out[k + m] = Complex(s5.real() + s4.imag(), s5.imag() - s4.real());
        out[k + 3 * m] = Complex(s5.real() - s4.imag(), s5.imag() + s4.real());
      }
    }
  }

  void butterfly_generic(Complex* out, int fstride, int p, int m) const {
    std::vector<Complex> scratch(static_cast<std::size_t>(p));
    for (int u = 0; u < m; ++u) {
      for (int q = 0, k = u; q < p; ++q, k += m) scratch[static_cast<std::size_t>(q)] = out[k];
      for (int q1 = 0, k = u; q1 < p; ++q1, k += m) {
        std::size_t tw = 0;
        Complex acc = scratch[0];
        for (int q = 1; q < p; ++q) {
          tw += static_cast<std::size_t>(fstride) * k;
          tw %= static_cast<std::size_t>(n_);
          acc += scratch[static_cast<std::size_t>(q)] * twiddles_[tw];
        }
        out[k] = acc;
      }
    }
  }

  int n_;
  bool inverse_;
  std::vector<int> factors_;
  std::vector<Complex> twiddles_;
};

template <typename Scalar>
using ComplexPlane =
    Eigen::Array<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// In-place 2D transform (rows, then columns) in standard (DC at 0,0) layout.
// The inverse is scaled by 1/(rows*cols).
template <typename Scalar>
void fft2_inplace(ComplexPlane<Scalar>& data, bool inverse) {
  using Complex = std::complex<Scalar>;
  const int h = static_cast<int>(data.rows());
  const int w = static_cast<int>(data.cols());
  const FftPlan<Scalar> row_plan(w, inverse);
  const FftPlan<Scalar> col_plan(h, inverse);
  std::vector<Complex> buf(static_cast<std::size_t>(std::max(h, w)));
  for (int r = 0; r < h; ++r) {
    Complex* row = data.data() + static_cast<std::ptrdiff_t>(r) * w;
    row_plan.run(row, buf.data(), 1);
    std::copy(buf.begin(), buf.begin() + w, row);
  }
  for (int c = 0; c < w; ++c) {
    col_plan.run(data.data() + c, buf.data(), w);
    for (int r = 0; r < h; ++r) data(r, c) = buf[static_cast<std::size_t>(r)];
  }
  if (inverse) data /= static_cast<Scalar>(h) * static_cast<Scalar>(w);
}

}  // namespace freqdebias
