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
#include <functional>
#include <string>
#include <vector>

#include "freqdebias/autodiff.hpp"

namespace freqdebias::testing {

struct GradCheckReport {
  bool ok = true;
  double worst_error = 0;  // largest |analytic - numeric| beyond tolerance ratio
  std::string detail;
  int checked = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double rel = 1e-4;
  double abs_floor = 1e-7;
};

// Compares reverse-mode gradients of build(tape) with respect to every
// entry of every parameter against central differences. build must read
// parameter values through tape.parameter().
inline GradCheckReport check_gradients(const std::vector<ad::Parameter*>& params,
                                       const std::function<ad::Tensor(ad::Tape&)>& build,
                                       GradCheckOptions opt = {}) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    ad::Tensor loss = build(tape);
    tape.backward(loss);
  }
  GradCheckReport rep;
  auto eval = [&]() {
    ad::Tape tape;
    tape.set_recording(false);
    return build(tape).item();
  };
  for (auto* p : params) {
    const ad::Array analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value(i);
      p->value(i) = saved + opt.eps;
      const double up = eval();
      p->value(i) = saved - opt.eps;
      const double down = eval();
      p->value(i) = saved;
      const double numeric = (up - down) / (2 * opt.eps);
      const double a = analytic(i);
      const double err = std::abs(a - numeric);
      const double tol = std::max(opt.rel * std::max(std::abs(a), std::abs(numeric)), opt.abs_floor);
      ++rep.checked;
      if (err > tol) {
        if (rep.ok) {
          rep.detail = p->name + "[" + std::to_string(i) + "]: analytic " + std::to_string(a) +
                       " numeric " + std::to_string(numeric);
        }
        rep.ok = false;
        rep.worst_error = std::max(rep.worst_error, err / tol);
      }
    }
  }
  return rep;
}

}  // namespace freqdebias::testing
