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

#include <random>

#include "doctest.h"
#include "freqdebias/kmeans.hpp"

using namespace freqdebias;

namespace {

// Best within-cluster SS over random-restart Lloyd runs with random seeds.
double restart_baseline(const Eigen::VectorXd& v, int k, int restarts, std::mt19937_64& rng) {
  double best = 1e300;
  const int n = static_cast<int>(v.size());
  for (int r = 0; r < restarts; ++r) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    Eigen::VectorXd c(k);
    for (int j = 0; j < k; ++j) c(j) = v(idx[j]);
    std::vector<int> lab(n, 0);
    for (int it = 0; it < 200; ++it) {
      for (int i = 0; i < n; ++i) {
        Eigen::Index j;
        (c.array() - v(i)).abs().minCoeff(&j);
        lab[i] = static_cast<int>(j);
      }
      Eigen::VectorXd s = Eigen::VectorXd::Zero(k), m = Eigen::VectorXd::Zero(k);
      for (int i = 0; i < n; ++i) {
        s(lab[i]) += v(i);
        m(lab[i]) += 1;
      }
      for (int j = 0; j < k; ++j)
        if (m(j) > 0) c(j) = s(j) / m(j);
    }
    best = std::min(best, within_cluster_ss(v, lab));
  }
  return best;
}

}  // namespace

TEST_CASE("kmeans degenerate inputs") {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(5, 2.5);
  auto r = kmeans_1d(v, 2, 1);
  CHECK(r.clusters() == 1);
  CHECK_FALSE(r.diagnostic.empty());
  for (int l : r.labels) CHECK(l == 0);

  Eigen::VectorXd three(6);
  three << 1, 1, 2, 2, 3, 3;
  auto r3 = kmeans_1d(three, 5, 0);
  CHECK(r3.clusters() == 3);
  CHECK(r3.labels == std::vector<int>{0, 0, 1, 1, 2, 2});
}

TEST_CASE("kmeans separated pairs") {
  Eigen::VectorXd v(4);
  v << 0, 0, 10, 10;
  auto r = kmeans_1d(v, 2, 3);
  CHECK(r.labels == std::vector<int>{0, 0, 1, 1});
  CHECK(r.converged);
  CHECK(r.centers(0) == 0.0);
  CHECK(r.centers(1) == 10.0);
}

TEST_CASE("kmeans is no worse than random restarts") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd v(128);
    for (auto& x : v) x = n(rng) * (1 + trial);
    auto r = kmeans_1d(v, 8, static_cast<std::uint64_t>(trial));
    CHECK(r.clusters() == 8);
    CHECK(within_cluster_ss(v, r.labels) <= restart_baseline(v, 8, 50, rng) + 1e-9);
    for (int c = 1; c < r.clusters(); ++c) CHECK(r.centers(c - 1) < r.centers(c));
  }
}

TEST_CASE("kmeans is deterministic") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::VectorXd v(64);
  for (auto& x : v) x = u(rng);
  CHECK(kmeans_1d(v, 4, 9).labels == kmeans_1d(v, 4, 9).labels);
  CHECK_THROWS_AS(kmeans_1d(v, 0, 0), std::invalid_argument);
}
