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

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "freqdebias/detector.hpp"
#include "freqdebias/train.hpp"

using namespace freqdebias;
namespace fs = std::filesystem;

namespace {

Dataset small_dataset(std::uint64_t seed, double amplitude, int n_train = 16, int n_test = 8) {
  DatasetConfig c = benchmark_config(3, seed);
  c.n_train = n_train;
  c.n_test = n_test;
  for (auto& t : c.types) t.amplitude = amplitude;
  return generate_dataset(c);
}

TrainConfig small_train(TrainMode mode, int epochs) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = epochs;
  c.batch_size = 8;
  c.lr = 0.01;
  c.warmup_epochs = 1;
  c.seed = 5;
  c.mix.seed = 5;
  return c;
}

std::vector<Image> images_of(const std::vector<Sample>& s, std::size_t n) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < n && i < s.size(); ++i) out.push_back(s[i].image);
  return out;
}

}  // namespace

TEST_CASE("detector shapes and unit embeddings") {
  Detector det(DetectorConfig{}, 3);
  const Dataset ds = small_dataset(1, 0.3, 4, 2);
  const auto images = images_of(ds.train, 5);
  ad::Tape tape;
  const auto x = batch_tensor(tape, images);
  CHECK(x.shape() == ad::Shape{5, 1, 64, 64});
  const auto o = det.forward(tape, x, true);
  CHECK(o.logits.shape() == ad::Shape{5, 2});
  CHECK(o.features.shape() == ad::Shape{5, 32, 8, 8});
  REQUIRE(o.embedding.shape() == ad::Shape{5, 64});
  const auto& e = o.embedding.value();
  for (int i = 0; i < 5; ++i) {
    double norm = 0;
    for (int j = 0; j < 64; ++j) norm += e[i * 64 + j] * e[i * 64 + j];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_FALSE(det.forward(tape, x, false).embedding.valid());
  // Inference depends on the backbone only.
  CHECK(det.backbone_parameters().size() < det.parameters().size());
}

TEST_CASE("detector checkpoint round trip") {
  DetectorConfig cfg;
  cfg.stage_channels = {4, 8, 12};
  cfg.embed_dim = 16;
  cfg.input_std = 0.2;
  Detector a(cfg, 9);
  const fs::path path = fs::temp_directory_path() / "freqdebias_detector.ckpt";
  a.save(path.string());
  Detector b = Detector::from_checkpoint(path.string());
  CHECK(b.config().stage_channels == cfg.stage_channels);
  CHECK(b.config().embed_dim == 16);
  CHECK(b.config().input_std == 0.2);
  const Dataset ds = small_dataset(2, 0.3, 4, 2);
  const auto images = images_of(ds.train, 6);
  const auto pa = a.predict(images), pb = b.predict(images);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  Detector c(DetectorConfig{}, 1);
  CHECK_THROWS(c.load(path.string()));  // architecture mismatch
  fs::remove(path);
}

TEST_CASE("train config validation and mode names") {
  for (TrainMode m : {TrainMode::kBaseline, TrainMode::kFoMixup, TrainMode::kFull, TrainMode::kNoAtt,
                      TrainMode::kNoSphere, TrainMode::kNoCs, TrainMode::kCrOnly})
    CHECK(parse_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_mode("fullest"), std::invalid_argument);
  CHECK(parse_granularity(to_string(DmsGranularity::kDomain)) == DmsGranularity::kDomain);
  CHECK(uses_fomixup(TrainMode::kFull));
  CHECK_FALSE(uses_fomixup(TrainMode::kCrOnly));
  CHECK_FALSE(uses_fomixup(TrainMode::kBaseline));

  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.momentum = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.mix.lambda = 1.2;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("λ out of range"), std::invalid_argument);
}

TEST_CASE("training is deterministic per seed") {
  const Dataset ds = small_dataset(3, 0.3);
  const TrainConfig cfg = small_train(TrainMode::kFull, 1);
  const TrainResult a = train(ds, cfg);
  const TrainResult b = train(ds, cfg);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].total == b.steps[i].total);
  CHECK(a.epochs[0].auc_in == b.epochs[0].auc_in);
  TrainConfig other = cfg;
  other.seed = other.mix.seed = 6;
  CHECK(train(ds, other).steps[0].total != a.steps[0].total);
}

TEST_CASE("loss components per mode") {
  const Dataset ds = small_dataset(4, 0.3);
  SUBCASE("full mode drives every component") {
    const TrainResult r = train(ds, small_train(TrainMode::kFull, 1));
    for (const auto& s : r.steps) {
      for (double v : {s.cls, s.cam, s.att, s.cls_sphere, s.sphere, s.total}) CHECK(std::isfinite(v));
      CHECK(s.cls > 0);
      CHECK(s.cam > 0);
      CHECK(s.att >= 0);
      CHECK(s.att <= std::log(2.0) + 1e-12);
      CHECK(s.cls_sphere > 0);
    }
    const EpochLog& e = r.epochs.back();
    CHECK(e.kept_fraction > 0);
    CHECK(e.kept_fraction < 1);
  }
  SUBCASE("baseline uses cross-entropy only") {
    const TrainResult r = train(ds, small_train(TrainMode::kBaseline, 1));
    for (const auto& s : r.steps) {
      CHECK(s.att == 0);
      CHECK(s.cls_sphere == 0);
      CHECK(s.sphere == 0);
      CHECK(s.cam == 0);
      CHECK(s.total == doctest::Approx(s.cls));
    }
  }
}

TEST_CASE("baseline learns a strong artifact") {
  const Dataset ds = small_dataset(5, 0.5, 150, 40);
  TrainConfig cfg = small_train(TrainMode::kBaseline, 10);
  cfg.batch_size = 32;
  cfg.lr = 0.05;
  cfg.augment_p = 0.1;
  const TrainResult r = train(ds, cfg);
  CHECK(r.epochs.back().train_accuracy >= 0.95);
  CHECK(r.epochs.back().auc_in >= 0.95);
}

TEST_CASE("no signal gives chance AUC") {
  // 800 per class puts the null AUC standard deviation near 0.014.
  const Dataset ds = small_dataset(6, 0.0, 16, 800);
  const TrainResult r = train(ds, small_train(TrainMode::kBaseline, 2));
  Detector det = r.detector;
  const double auc = evaluate(det, ds).auc_in;
  CHECK(auc >= 0.45);
  CHECK(auc <= 0.55);
}

TEST_CASE("non-finite loss aborts") {
  const Dataset ds = small_dataset(7, 0.3);
  TrainConfig cfg = small_train(TrainMode::kBaseline, 3);
  cfg.lr = 1e300;
  cfg.clip_norm = 0;
  cfg.momentum = 0;
  CHECK_THROWS_AS(train(ds, cfg), TrainingAborted);
}

TEST_CASE("epoch csv layout") {
  const fs::path path = fs::temp_directory_path() / "freqdebias_epochs.csv";
  EpochLog e;
  e.epoch = 1;
  e.loss = 0.1;
  write_epoch_csv(path.string(), TrainMode::kNoCs, {e});
  std::ifstream f(path);
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  CHECK(header ==
        "epoch,mode,loss,L_cls,L_CAM,L_att,L_cls_sphere,L_sphere,train_accuracy,auc_in,auc_cross,kappa_real,"
        "kappa_fake,direction_cosine,dms,kept_fraction");
  CHECK(row.rfind("1,no-cs,0.10000000000000001,", 0) == 0);
  fs::remove(path);
}
