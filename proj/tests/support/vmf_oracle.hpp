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
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "freqdebias/vmf.hpp"

namespace freqdebias::testing {

// Uniform unit vector orthogonal to e_1, in R^d.
inline Eigen::VectorXd orthogonal_unit(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::VectorXd v(d);
  v(0) = 0;
  for (int i = 1; i < d; ++i) v(i) = n(rng);
  return v / v.norm();
}

inline Eigen::VectorXd random_unit(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v / v.norm();
}

// Householder reflection taking e_1 to mu.
inline Eigen::VectorXd rotate_from_e1(const Eigen::VectorXd& x, const Eigen::VectorXd& mu) {
  Eigen::VectorXd u = Eigen::VectorXd::Unit(mu.size(), 0) - mu;
  const double nu = u.squaredNorm();
  if (nu < 1e-30) return x;
  return x - 2 * u * (u.dot(x) / nu);
}

// Wood (1994) rejection sampler for vMF(mu, kappa) on S^{d-1}.
class WoodSampler {
 public:
  WoodSampler(VmfParams p) : p_(std::move(p)) {
    const double m = p_.dim();
    const double k = p_.kappa;
    b_ = (-2 * k + std::sqrt(4 * k * k + (m - 1) * (m - 1))) / (m - 1);
    x0_ = (1 - b_) / (1 + b_);
    c_ = k * x0_ + (m - 1) * std::log(1 - x0_ * x0_);
  }

  Eigen::VectorXd operator()(std::mt19937_64& rng) const {
    const int d = p_.dim();
    const double m = d;
    std::gamma_distribution<double> g((m - 1) / 2, 1.0);
    std::uniform_real_distribution<double> u(0, 1);
    double w;
    for (;;) {
      const double a = g(rng), b = g(rng);
      const double z = a / (a + b);
      w = (1 - (1 + b_) * z) / (1 - (1 - b_) * z);
      const double uu = u(rng);
      if (p_.kappa * w + (m - 1) * std::log(1 - x0_ * w) - c_ >= std::log(uu)) break;
    }
    Eigen::VectorXd x = std::sqrt(std::max(0.0, 1 - w * w)) * orthogonal_unit(d, rng);
    x(0) = w;
    return rotate_from_e1(x, p_.mu);
  }

 private:
  VmfParams p_;
  double b_, x0_, c_;
};

// Importance-sampled estimate of the integral of exp(vmf_log_density) over
// S^{d-1}. The proposal for t = <x, mu> is an equal mixture of uniform on
// [-1, 1] and 1 - Gamma((d-1)/2, kappa), which tracks the exact marginal
// exp(kappa t) (1 - t^2)^{(d-3)/2} near t = 1; the orthogonal part is
// uniform on S^{d-2}.
inline double mc_normalization(const VmfParams& p, int samples, std::mt19937_64& rng) {
  const int d = p.dim();
  const double shape = 0.5 * (d - 1);
  const double rate = std::max(p.kappa, 1e-3);
  const double log_area_sub = log_sphere_area<double>(d - 1);
  std::uniform_real_distribution<double> u(0, 1);
  std::gamma_distribution<double> gamma(shape, 1.0 / rate);
  auto log_gamma_pdf = [&](double s) {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1) * std::log(s) - rate * s;
  };
  double acc = 0;
  for (int n = 0; n < samples; ++n) {
    const double t = u(rng) < 0.5 ? 2 * u(rng) - 1 : 1 - gamma(rng);
    if (t <= -1 || t >= 1) continue;  // outside the support: zero integrand
    const double q = 0.25 + 0.5 * std::exp(log_gamma_pdf(1 - t));
    Eigen::VectorXd x = std::sqrt(1 - t * t) * orthogonal_unit(d, rng);
    x(0) = t;
    x = rotate_from_e1(x, p.mu);
    x /= x.norm();
    const double log_jac = 0.5 * (d - 3) * std::log(1 - t * t);
    acc += std::exp(vmf_log_density(x, p) + log_jac + log_area_sub) / q;
  }
  return acc / samples;
}

}  // namespace freqdebias::testing
