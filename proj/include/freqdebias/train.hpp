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
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqdebias/consistency.hpp"
#include "freqdebias/dataset.hpp"
#include "freqdebias/detector.hpp"
#include "freqdebias/fomixup.hpp"

namespace freqdebias {

// Training recipes. `baseline` is CE with standard augmentation;
// `fomixup` is CE on originals and Fo-Mixup forgeries without standard
// augmentation; `full` adds every consistency term and confidence
// sampling. The remaining modes drop one ingredient of `full`: no-att
// (L_att), no-sphere (L_sphere), no-cs (confidence sampling) and cr-only
// (Fo-Mixup; the second view is standard augmentation only).
enum class TrainMode { kBaseline, kFoMixup, kFull, kNoAtt, kNoSphere, kNoCs, kCrOnly };

std::string to_string(TrainMode m);
TrainMode parse_mode(const std::string& s);

enum class DmsGranularity { kDomain, kPerClass };

std::string to_string(DmsGranularity g);
DmsGranularity parse_granularity(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kFull;
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-4;
  double momentum = 0.9;
  double clip_norm = 1.0;        // global gradient-norm clip; 0 disables
  int warmup_epochs = 5;        // baseline epochs for the OHEM scorer
  double augment_p = 0.5;       // probability of each standard augmentation
  int k_cam = 2;
  int n_radial = 8;
  int n_angular = 16;
  DmsGranularity dms_granularity = DmsGranularity::kPerClass;
  LossWeights weights;
  MixConfig mix;
  DetectorConfig detector;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  double cls = 0, cam = 0, att = 0, cls_sphere = 0, sphere = 0, total = 0;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;  // mean L_total over the epoch
  double cls = 0, cam = 0, att = 0, cls_sphere = 0, sphere = 0;
  double train_accuracy = 0;    // end-of-epoch model on the unaugmented training split
  double auc_in = 0;
  double auc_cross = 0;  // NaN when the dataset has no held-out split
  double kappa_real = 0, kappa_fake = 0;
  double direction_cosine = 0;  // <mu_real, mu_fake>
  double dms = 0;               // mean DMS over the epoch's steps
  double kept_fraction = 0;     // synthesized forgeries surviving sampling
  double seconds = 0;
};

struct TrainResult {
  Detector detector;
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
};

// Thrown when a loss component turns non-finite; the detector has been
// rolled back to the last completed epoch.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool uses_fomixup(TrainMode m);

// Trains a detector. Modes that use Fo-Mixup need a scorer; when
// `scorer` is null a baseline detector is first trained for
// cfg.warmup_epochs with the same seed. `on_epoch` (optional) observes
// progress.
TrainResult train(const Dataset& data, const TrainConfig& cfg, Detector* scorer = nullptr,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Baseline detector used as the OHEM scorer.
Detector train_warmup(const Dataset& data, const TrainConfig& cfg);

struct Evaluation {
  double auc_in = 0;
  double auc_cross = 0;
  double accuracy_in = 0;
};

Evaluation evaluate(Detector& det, const Dataset& data);
double evaluate_auc(Detector& det, const std::vector<Sample>& samples);

void write_epoch_csv(const std::string& path, TrainMode mode, const std::vector<EpochLog>& epochs);
void write_step_csv(const std::string& path, const std::vector<StepLog>& steps);

// Full 17-significant-digit rendering used by every CSV artifact.
std::string fmt(double v);

}  // namespace freqdebias
