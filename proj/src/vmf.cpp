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

#include "freqdebias/vmf.hpp"

#include <algorithm>

namespace freqdebias {

void VmfClassifier::validate() const {
  for (const auto& c : classes) c.validate();
  if (classes[0].dim() != classes[1].dim()) {
    throw std::invalid_argument("vMF classifier: class dimensions differ");
  }
  if (!(counts[0] >= 1 && counts[1] >= 1)) {
    throw std::invalid_argument("vMF classifier: class cardinalities must be >= 1");
  }
}

std::array<double, 2> vmf_posterior(const Eigen::VectorXd& x, const VmfClassifier& clf) {
  std::array<double, 2> logit;
  for (std::size_t i = 0; i < 2; ++i)
    logit[i] = std::log(clf.counts[i]) + vmf_log_density(x, clf.classes[i]);
  const double m = std::max(logit[0], logit[1]);
  const double z = m + std::log(std::exp(logit[0] - m) + std::exp(logit[1] - m));
  return {std::exp(logit[0] - z), std::exp(logit[1] - z)};
}

namespace {

double kappa_estimate(double r, int d) {
  if (r >= 1.0) return kMaxKappa;
  return std::min(kMaxKappa, r * (d - r * r) / (1 - r * r));
}

constexpr double kMinResultant = 1e-9;

}  // namespace

VmfFit fit_vmf(const Eigen::MatrixXd& batch) {
  if (batch.rows() < 2) throw std::invalid_argument("fit_vmf: need at least 2 samples");
  const int d = static_cast<int>(batch.cols());
  if (d < 2) throw std::invalid_argument("fit_vmf: dimension must be >= 2");
  const Eigen::VectorXd mean = batch.colwise().mean().transpose();
  VmfFit fit;
  fit.rbar = mean.norm();
  if (fit.rbar < kMinResultant) {
    fit.degenerate = true;
    fit.params.mu = Eigen::VectorXd::Unit(d, 0);
    fit.params.kappa = 0;
    return fit;
  }
  fit.params.mu = mean / fit.rbar;
  fit.params.kappa = kappa_estimate(fit.rbar, d);
  fit.capped = fit.params.kappa >= kMaxKappa;
  return fit;
}

// ---------------------------------------------------------------------------
// Differentiable pieces

ad::Tensor log_vmf_norm(const ad::Tensor& kappa, int d) {
  ad::Tape& t = *kappa.tape();
  ad::Array v(kappa.value().size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = log_vmf_norm<double>(d, kappa.value()(i));
  const int in = kappa.id();
  return t.record(kappa.shape(), std::move(v), {kappa}, [in, d](ad::Tape& tp, int out) {
    const ad::Array& g = tp.grad_of(out);
    const ad::Array& k = tp.value_of(in);
    ad::Array& gi = tp.grad_buffer(in);
    for (Eigen::Index i = 0; i < k.size(); ++i) gi(i) -= g(i) * bessel_ratio<double>(d, k(i));
  });
}

ad::Tensor bessel_ratio(const ad::Tensor& kappa, int d) {
  ad::Tape& t = *kappa.tape();
  ad::Array v(kappa.value().size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = bessel_ratio<double>(d, kappa.value()(i));
  const int in = kappa.id();
  return t.record(kappa.shape(), std::move(v), {kappa}, [in, d](ad::Tape& tp, int out) {
    const ad::Array& g = tp.grad_of(out);
    const ad::Array& k = tp.value_of(in);
    ad::Array& gi = tp.grad_buffer(in);
    for (Eigen::Index i = 0; i < k.size(); ++i) gi(i) += g(i) * bessel_ratio_derivative<double>(d, k(i));
  });
}

ad::Tensor vmf_logits(const ad::Tensor& embeddings, const ad::Tensor& directions,
                      const ad::Tensor& kappa, const std::array<double, 2>& counts) {
  if (embeddings.rank() != 2 || directions.rank() != 2 || directions.dim(0) != 2 ||
      directions.dim(1) != embeddings.dim(1) || kappa.shape() != ad::Shape{2}) {
    throw ad::ShapeError("vmf_logits: incompatible shapes " + ad::to_string(embeddings.shape()) +
                         ", " + ad::to_string(directions.shape()) + " and " +
                         ad::to_string(kappa.shape()));
  }
  ad::Tape& t = *embeddings.tape();
  const int n = embeddings.dim(0), d = embeddings.dim(1);
  const ad::Tensor mu = ad::l2_normalize(directions);
  const ad::Tensor cosine = ad::matmul(embeddings, ad::transpose(mu));  // [N, 2]
  ad::Array log_n(2);
  log_n << std::log(counts[0]), std::log(counts[1]);
  const ad::Tensor bias = log_vmf_norm(kappa, d) + t.constant({2}, log_n);
  return cosine * ad::expand(kappa, n) + ad::expand(bias, n);
}

ad::Tensor vmf_ce_loss(const ad::Tensor& embeddings, const ad::Tensor& directions,
                       const ad::Tensor& kappa, const std::array<double, 2>& counts,
                       const std::vector<int>& labels) {
  if (embeddings.rank() != 2 || embeddings.dim(0) == 0) {
    throw std::invalid_argument("vmf_ce_loss: empty batch");
  }
  return ad::cross_entropy(vmf_logits(embeddings, directions, kappa, counts), labels);
}

TensorVmfFit fit_vmf(const ad::Tensor& batch) {
  if (batch.rank() != 2 || batch.dim(0) < 2) {
    throw std::invalid_argument("fit_vmf: need a [N >= 2, d] batch, got " + ad::to_string(batch.shape()));
  }
  ad::Tape& t = *batch.tape();
  const int d = batch.dim(1);
  TensorVmfFit fit;
  const ad::Tensor mean = ad::mean_axis(batch, 0);  // [d]
  const double r = std::sqrt((mean.value() * mean.value()).sum());
  if (r < kMinResultant) {
    fit.degenerate = true;
    ad::Array e1 = ad::Array::Zero(d);
    e1(0) = 1;
    fit.mu = t.constant({d}, e1);
    fit.kappa = t.scalar(0.0);
    return fit;
  }
  const ad::Tensor rt = ad::sqrt(ad::dot(mean, mean));  // [1]
  fit.mu = mean * ad::reshape(ad::expand(1.0 / rt, d), {d});
  if (kappa_estimate(r, d) >= kMaxKappa) {
    fit.capped = true;
    fit.kappa = t.scalar(kMaxKappa);
    return fit;
  }
  const ad::Tensor r2 = rt * rt;
  fit.kappa = rt * (static_cast<double>(d) - r2) / (1.0 - r2);
  return fit;
}

ad::Tensor vmf_kl(const TensorVmfFit& p, const TensorVmfFit& q) {
  const int d = p.mu.dim(0);
  if (q.mu.dim(0) != d) throw std::invalid_argument("vmf_kl: dimension mismatch");
  const ad::Tensor kl = log_vmf_norm(p.kappa, d) - log_vmf_norm(q.kappa, d) +
                        (p.kappa - q.kappa * ad::dot(q.mu, p.mu)) * bessel_ratio(p.kappa, d);
  // Rounding can push an exact zero slightly negative.
  return ad::relu(kl);
}

DmsResult dms_loss(const ad::Tensor& source, const ad::Tensor& target) {
  if (source.rank() != 2 || target.rank() != 2 || source.dim(1) != target.dim(1)) {
    throw ad::ShapeError("dms_loss: incompatible shapes " + ad::to_string(source.shape()) + " and " +
                         ad::to_string(target.shape()));
  }
  const TensorVmfFit ps = fit_vmf(source);
  const TensorVmfFit pt = fit_vmf(target);
  const ad::Tensor kl = vmf_kl(ps, pt);
  DmsResult res;
  res.loss = 1.0 - 1.0 / (1.0 + kl);
  res.kl = kl.item();
  res.dms = 1.0 / (1.0 + res.kl);
  res.flagged = ps.degenerate || pt.degenerate;
  auto to_params = [](const TensorVmfFit& f) {
    VmfParams p;
    p.mu = Eigen::Map<const Eigen::VectorXd>(f.mu.value().data(), f.mu.value().size());
    p.kappa = f.kappa.item();
    return p;
  };
  res.source = to_params(ps);
  res.target = to_params(pt);
  return res;
}

}  // namespace freqdebias
