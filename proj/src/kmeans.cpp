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

#include "freqdebias/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace freqdebias {

namespace {

// Optimal contiguous partition of sorted values into k groups; returns the
// group boundaries (start index of every group after the first).
std::vector<int> optimal_splits(const std::vector<double>& v, int k) {
  const int n = static_cast<int>(v.size());
  std::vector<double> s(n + 1, 0.0), s2(n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    s[i + 1] = s[i] + v[i];
    s2[i + 1] = s2[i] + v[i] * v[i];
  }
  auto cost = [&](int a, int b) {  // [a, b)
    const double m = b - a;
    const double sum = s[b] - s[a];
    return std::max(0.0, (s2[b] - s2[a]) - sum * sum / m);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(k + 1, std::vector<double>(n + 1, inf));
  std::vector<std::vector<int>> arg(k + 1, std::vector<int>(n + 1, 0));
  best[0][0] = 0;
  for (int j = 1; j <= k; ++j) {
    for (int i = j; i <= n; ++i) {
      for (int a = j - 1; a < i; ++a) {
        if (best[j - 1][a] == inf) continue;
        const double c = best[j - 1][a] + cost(a, i);
        if (c < best[j][i]) {
          best[j][i] = c;
          arg[j][i] = a;
        }
      }
    }
  }
  std::vector<int> splits;
  for (int j = k, i = n; j > 1; --j) {
    i = arg[j][i];
    splits.push_back(i);
  }
  std::reverse(splits.begin(), splits.end());
  return splits;
}

int nearest(const Eigen::VectorXd& centers, double x) {
  int best = 0;
  double dbest = std::abs(x - centers(0));
  for (int c = 1; c < centers.size(); ++c) {
    const double d = std::abs(x - centers(c));
    if (d < dbest) {
      dbest = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans_1d(const Eigen::VectorXd& values, int k, std::uint64_t /*seed*/,
                       int max_iterations) {
  if (k < 1) throw std::invalid_argument("kmeans_1d: k must be >= 1");
  if (values.size() == 0) throw std::invalid_argument("kmeans_1d: no values");
  if (!values.allFinite()) throw std::invalid_argument("kmeans_1d: non-finite value");

  KMeansResult res;
  const int n = static_cast<int>(values.size());
  std::vector<double> sorted(values.data(), values.data() + n);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> uniq = sorted;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  int kk = k;
  if (static_cast<int>(uniq.size()) < k) {
    kk = static_cast<int>(uniq.size());
    res.diagnostic = "only " + std::to_string(kk) + " distinct values for k=" + std::to_string(k) +
                     "; " + std::to_string(k - kk) + " empty clusters dropped";
  }

  Eigen::VectorXd centers(kk);
  if (kk == static_cast<int>(uniq.size())) {
    for (int c = 0; c < kk; ++c) centers(c) = uniq[static_cast<std::size_t>(c)];
  } else {
    const auto splits = optimal_splits(sorted, kk);
    int start = 0;
    for (int c = 0; c < kk; ++c) {
      const int end = c + 1 < kk ? splits[static_cast<std::size_t>(c)] : n;
      centers(c) = std::accumulate(sorted.begin() + start, sorted.begin() + end, 0.0) / (end - start);
      start = end;
    }
  }

  std::vector<int> labels(n, -1);
  for (res.iterations = 0; res.iterations < max_iterations; ++res.iterations) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const int c = nearest(centers, values(i));
      if (c != labels[i]) {
        labels[i] = c;
        changed = true;
      }
    }
    if (!changed) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(centers.size());
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(centers.size());
    for (int i = 0; i < n; ++i) {
      sum(labels[i]) += values(i);
      cnt(labels[i]) += 1;
    }
    for (int c = 0; c < centers.size(); ++c)
      if (cnt(c) > 0) centers(c) = sum(c) / cnt(c);
  }

  // Drop clusters that ended up empty and renumber by ascending centre.
  std::vector<int> used(centers.size(), 0);
  for (int l : labels) used[static_cast<std::size_t>(l)] = 1;
  std::vector<int> order(centers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return centers(a) < centers(b); });
  std::vector<int> remap(centers.size(), -1);
  std::vector<double> kept;
  for (int c : order) {
    if (!used[static_cast<std::size_t>(c)]) continue;
    remap[static_cast<std::size_t>(c)] = static_cast<int>(kept.size());
    kept.push_back(centers(c));
  }
  if (static_cast<int>(kept.size()) < kk && res.diagnostic.empty()) {
    res.diagnostic = std::to_string(kk - static_cast<int>(kept.size())) + " clusters emptied and dropped";
  }
  for (int& l : labels) l = remap[static_cast<std::size_t>(l)];
  res.labels = std::move(labels);
  res.centers = Eigen::Map<Eigen::VectorXd>(kept.data(), static_cast<Eigen::Index>(kept.size()));
  return res;
}

double within_cluster_ss(const Eigen::VectorXd& values, const std::vector<int>& labels) {
  std::map<int, std::pair<double, int>> acc;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    auto& a = acc[labels[static_cast<std::size_t>(i)]];
    a.first += values(i);
    a.second += 1;
  }
  double ss = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const auto& a = acc[labels[static_cast<std::size_t>(i)]];
    const double d = values(i) - a.first / a.second;
    ss += d * d;
  }
  return ss;
}

}  // namespace freqdebias
