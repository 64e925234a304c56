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
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "freqdebias/autodiff.hpp"

namespace freqdebias {

// Supported numeric range for the Bessel-based quantities below.
constexpr double kMaxKappa = 1e4;
constexpr int kMaxDim = 1024;

namespace detail {

inline void check_vmf_range(int d, double kappa, const char* what) {
  if (d < 2) throw std::invalid_argument(std::string(what) + ": dimension must be >= 2");
  if (!(kappa >= 0.0)) throw std::invalid_argument(std::string(what) + ": kappa must be >= 0");
  if (d > kMaxDim || kappa > kMaxKappa) {
    throw std::domain_error(std::string(what) + ": (d=" + std::to_string(d) +
                            ", kappa=" + std::to_string(kappa) + ") outside supported range d <= " +
                            std::to_string(kMaxDim) + ", kappa <= " + std::to_string(kMaxKappa));
  }
}

}  // namespace detail

// A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa), from Gauss's continued
// fraction I_{v+1}/I_v = k / (2(v+1) + k^2 / (2(v+2) + k^2 / ...)) evaluated
// with the modified Lentz method.
template <typename Scalar>
Scalar bessel_ratio(int d, Scalar kappa) {
  detail::check_vmf_range(d, static_cast<double>(kappa), "bessel_ratio");
  if (kappa == Scalar(0)) return Scalar(0);
  const Scalar nu = Scalar(d) / 2 - 1;
  const Scalar tiny = std::numeric_limits<Scalar>::min() * 16;
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar k2 = kappa * kappa;
  Scalar f = 2 * (nu + 1);
  Scalar c = f, dd = 0;
  for (int j = 1; j < 1000000; ++j) {
    const Scalar b = 2 * (nu + 1 + j);
    dd = b + k2 * dd;
    if (std::abs(dd) < tiny) dd = tiny;
    c = b + k2 / c;
    if (std::abs(c) < tiny) c = tiny;
    dd = 1 / dd;
    const Scalar delta = c * dd;
    f *= delta;
    if (std::abs(delta - 1) < eps) break;
  }
  return kappa / f;
}

// dA_d/dkappa = 1 - A^2 - (d - 1) A / kappa, with the limit 1/d at 0.
template <typename Scalar>
Scalar bessel_ratio_derivative(int d, Scalar kappa) {
  if (kappa < Scalar(1e-8)) return Scalar(1) / Scalar(d);
  const Scalar a = bessel_ratio(d, kappa);
  return 1 - a * a - Scalar(d - 1) * a / kappa;
}

// log C_d(kappa) for the vMF density C_d(k) exp(k <x, mu>) on S^{d-1}.
// With v = d/2 - 1 and I_v(k) = (k/2)^v S(k),
//   log C_d = v log 2 - (d/2) log(2 pi) - log S(k),
//   S(k) = sum_m (k^2/4)^m / (m! Gamma(m + v + 1)),
// so the k^v factors cancel and k = 0 needs no special case. The series is
// summed in log space.
template <typename Scalar>
Scalar log_vmf_norm(int d, Scalar kappa) {
  detail::check_vmf_range(d, static_cast<double>(kappa), "log_vmf_norm");
  const Scalar nu = Scalar(d) / 2 - 1;
  const Scalar two_pi = 2 * std::numbers::pi_v<Scalar>;
  Scalar term = -std::lgamma(nu + 1);
  Scalar log_s = term;
  if (kappa > Scalar(0)) {
    const Scalar log_q = 2 * std::log(kappa / 2);
    Scalar acc_max = term, acc = 1;  // log_s = acc_max + log(acc)
    for (int m = 1; m < 10000000; ++m) {
      term += log_q - std::log(Scalar(m)) - std::log(Scalar(m) + nu);
      if (term > acc_max) {
        acc = acc * std::exp(acc_max - term) + 1;
        acc_max = term;
      } else {
        acc += std::exp(term - acc_max);
      }
      // Terms decrease once m exceeds the peak near kappa/2.
      if (term < acc_max - 40 && Scalar(m) > kappa / 2) break;
    }
    log_s = acc_max + std::log(acc);
  }
  return nu * std::log(Scalar(2)) - (Scalar(d) / 2) * std::log(two_pi) - log_s;
}

// Log surface area of S^{d-1}: log(2 pi^{d/2} / Gamma(d/2)).
template <typename Scalar>
Scalar log_sphere_area(int d) {
  return std::log(Scalar(2)) + (Scalar(d) / 2) * std::log(std::numbers::pi_v<Scalar>) -
         std::lgamma(Scalar(d) / 2);
}

template <typename Scalar>
struct BasicVmfParams {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mu;  // unit mean direction
  Scalar kappa = 0;

  int dim() const { return static_cast<int>(mu.size()); }

  void validate() const {
    if (mu.size() < 2) throw std::invalid_argument("vMF mean direction needs dimension >= 2");
    if (std::abs(mu.norm() - 1) > Scalar(1e-9)) {
      throw std::invalid_argument("vMF mean direction is not unit length");
    }
    if (!(kappa >= 0) || !std::isfinite(static_cast<double>(kappa))) {
      throw std::invalid_argument("vMF concentration must be finite and >= 0");
    }
  }
};

using VmfParams = BasicVmfParams<double>;

template <typename Scalar, typename Vec>
Scalar vmf_log_density(const Vec& x, const BasicVmfParams<Scalar>& p) {
  if (x.size() != p.mu.size()) throw std::invalid_argument("vmf_log_density: dimension mismatch");
  if (std::abs(x.norm() - 1) > Scalar(1e-8)) {
    throw std::invalid_argument("vmf_log_density: input is not a unit vector");
  }
  return log_vmf_norm(p.dim(), p.kappa) + p.kappa * x.dot(p.mu);
}

// KL(p || q) = log C(k_p) - log C(k_q) + (k_p - k_q <mu_q, mu_p>) A_d(k_p).
template <typename Scalar>
Scalar vmf_kl(const BasicVmfParams<Scalar>& p, const BasicVmfParams<Scalar>& q) {
  if (p.dim() != q.dim()) throw std::invalid_argument("vmf_kl: dimension mismatch");
  const int d = p.dim();
  const Scalar kl = log_vmf_norm(d, p.kappa) - log_vmf_norm(d, q.kappa) +
                    (p.kappa - q.kappa * q.mu.dot(p.mu)) * bessel_ratio(d, p.kappa);
  return std::max(kl, Scalar(0));
}

struct VmfClassifier {
  std::array<VmfParams, 2> classes;  // {real, fake}
  std::array<double, 2> counts{1, 1};

  int dim() const { return classes[0].dim(); }
  void validate() const;
};

// Posterior class probabilities via log-sum-exp over log n_i + log density.
std::array<double, 2> vmf_posterior(const Eigen::VectorXd& x, const VmfClassifier& clf);

struct VmfFit {
  VmfParams params;
  double rbar = 0;        // length of the mean resultant
  bool capped = false;    // kappa estimate hit kMaxKappa
  bool degenerate = false;  // zero resultant: kappa = 0, mu = e_1
};

// Moment estimate: mu = mean / |mean|, kappa = r (d - r^2) / (1 - r^2),
// capped at kMaxKappa. Rows of `batch` are unit vectors.
VmfFit fit_vmf(const Eigen::MatrixXd& batch);

// ---------------------------------------------------------------------------
// Differentiable building blocks

// Elementwise log C_d(kappa); gradient -A_d(kappa).
ad::Tensor log_vmf_norm(const ad::Tensor& kappa, int d);
// Elementwise A_d(kappa); gradient from bessel_ratio_derivative.
ad::Tensor bessel_ratio(const ad::Tensor& kappa, int d);

// Class logits log n_i + log C_d(kappa_i) + kappa_i <x, mu_i> for [N, d]
// unit embeddings, [2, d] unnormalised directions and [2] concentrations.
ad::Tensor vmf_logits(const ad::Tensor& embeddings, const ad::Tensor& directions,
                      const ad::Tensor& kappa, const std::array<double, 2>& counts);

// Mean cross-entropy of the vMF posterior.
ad::Tensor vmf_ce_loss(const ad::Tensor& embeddings, const ad::Tensor& directions,
                       const ad::Tensor& kappa, const std::array<double, 2>& counts,
                       const std::vector<int>& labels);

struct TensorVmfFit {
  ad::Tensor mu;     // [d]
  ad::Tensor kappa;  // [1]
  bool capped = false;
  bool degenerate = false;
};

// fit_vmf on a [N, d] tensor of unit embeddings, differentiable through the
// mean resultant. Capped or degenerate estimates are constants.
TensorVmfFit fit_vmf(const ad::Tensor& batch);

ad::Tensor vmf_kl(const TensorVmfFit& p, const TensorVmfFit& q);

struct DmsResult {
  ad::Tensor loss;  // 1 - DMS, shape [1]
  double kl = 0;
  double dms = 1;
  bool flagged = false;  // a degenerate fit fell back to kappa = 0
  VmfParams source, target;
};

// 1 - 1 / (1 + KL(fit(source) || fit(target))).
DmsResult dms_loss(const ad::Tensor& source, const ad::Tensor& target);

}  // namespace freqdebias
