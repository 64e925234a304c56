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

#include <vector>

namespace freqdebias {

// Area under the ROC curve from the Mann-Whitney U statistic with midranks
// for ties. Labels are 0 (negative) or 1 (positive); higher scores mean
// "more positive". Throws std::invalid_argument unless both classes occur.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels, double threshold = 0.5);

}  // namespace freqdebias
