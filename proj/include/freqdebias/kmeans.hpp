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

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace freqdebias {

struct KMeansResult {
  // Cluster id per input value; ids are ordered by ascending centre.
  std::vector<int> labels;
  Eigen::VectorXd centers;
  int iterations = 0;
  bool converged = false;
  // Set when fewer than k clusters could be formed.
  std::string diagnostic;

  int clusters() const { return static_cast<int>(centers.size()); }
};

// Lloyd's algorithm on scalars, seeded with the optimal 1-D partition found
// by dynamic programming over the sorted values. The seeded partition is
// already a fixed point in all but tie cases, so the result does not depend
// on `seed`; the argument is kept so callers can thread one RNG seed through
// every stochastic component.
//
// With fewer distinct values than k, each distinct value becomes its own
// cluster and the remaining clusters are dropped.
KMeansResult kmeans_1d(const Eigen::VectorXd& values, int k, std::uint64_t seed = 0,
                       int max_iterations = 100);

double within_cluster_ss(const Eigen::VectorXd& values, const std::vector<int>& labels);

}  // namespace freqdebias
