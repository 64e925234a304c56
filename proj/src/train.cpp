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

#include "freqdebias/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "freqdebias/checkpoint.hpp"
#include "freqdebias/metrics.hpp"
#include "freqdebias/parallel.hpp"
#include "freqdebias/random.hpp"
#include "freqdebias/vmf.hpp"

namespace freqdebias {

namespace {

struct Recipe {
  bool augment = false;      // standard augmentation of the second view
  bool mix = false;          // Fo-Mixup for forgeries
  bool sample = false;       // confidence sampling of synthesized forgeries
  bool two_view = false;     // L_cls over original and second view
  bool kl = false;           // consistency KL inside L_cls
  bool cam = false;
  bool att = false;
  bool cls_sphere = false;
  bool sphere = false;
};

Recipe recipe(TrainMode m) {
  Recipe r;
  switch (m) {
    case TrainMode::kBaseline:
      r.augment = true;
      break;
    case TrainMode::kFoMixup:
      r.mix = r.two_view = true;
      break;
    case TrainMode::kCrOnly:
      r.augment = r.two_view = r.kl = r.cam = r.att = r.cls_sphere = r.sphere = true;
      break;
    case TrainMode::kFull:
    case TrainMode::kNoAtt:
    case TrainMode::kNoSphere:
    case TrainMode::kNoCs:
      r.augment = r.mix = r.sample = r.two_view = r.kl = r.cam = r.att = r.cls_sphere = r.sphere = true;
      if (m == TrainMode::kNoAtt) r.att = false;
      if (m == TrainMode::kNoSphere) r.sphere = false;
      if (m == TrainMode::kNoCs) r.sample = false;
      break;
  }
  return r;
}

const char* const kModeNames[] = {"baseline", "fomixup", "full", "no-att", "no-sphere", "no-cs", "cr-only"};

class MomentumSgd {
 public:
  MomentumSgd(std::vector<ad::Parameter*> params, double lr, double momentum, double clip_norm)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), clip_(clip_norm) {
    for (auto* p : params_) velocity_.push_back(ad::Array::Zero(p->value.size()));
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  // Returns the gradient norm before clipping.
  double step() {
    double sq = 0;
    for (auto* p : params_)
      if (p->grad.size() == p->value.size()) sq += p->grad.square().sum();
    const double norm = std::sqrt(sq);
    const double factor = clip_ > 0 && norm > clip_ ? clip_ / norm : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ad::Parameter& p = *params_[i];
      if (p.grad.size() != p.value.size()) continue;
      velocity_[i] = momentum_ * velocity_[i] + factor * p.grad;
      p.value -= lr_ * velocity_[i];
    }
    return norm;
  }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Array> velocity_;
  double lr_, momentum_, clip_;
};

double value_or_zero(const ad::Tensor& t) { return t.valid() ? t.item() : 0.0; }

std::vector<int> rows_with_label(const std::vector<int>& labels, int label) {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> gather(const std::vector<int>& v, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

// OHEM masks of every training forgery, keyed by training index.
std::vector<ClusterMasks> precompute_masks(const Dataset& data, const SegmentGrid& grid, Detector& scorer,
                                           const MixConfig& mix) {
  std::vector<ClusterMasks> masks(data.train.size());
  parallel_for(data.train.size(), [&](std::size_t i) {
    const Sample& s = data.train[i];
    if (s.label != kLabelFake) return;
    DetectorScorer sc(scorer);
    masks[i] = dominant_masks(s.image, kLabelFake, grid, sc, mix);
  });
  return masks;
}

// Accuracy of the current model on unaugmented samples.
double split_accuracy(Detector& det, const std::vector<Sample>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& s : samples) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  std::vector<double> scores;
  for (const auto& p : det.predict(images)) scores.push_back(p[1]);
  return accuracy(scores, labels);
}

}  // namespace

std::string to_string(TrainMode m) { return kModeNames[static_cast<int>(m)]; }

TrainMode parse_mode(const std::string& s) {
  for (int i = 0; i < 7; ++i)
    if (s == kModeNames[i]) return static_cast<TrainMode>(i);
  throw std::invalid_argument("unknown training mode '" + s +
                              "' (baseline, fomixup, full, no-att, no-sphere, no-cs, cr-only)");
}

std::string to_string(DmsGranularity g) { return g == DmsGranularity::kDomain ? "domain" : "per-class"; }

DmsGranularity parse_granularity(const std::string& s) {
  if (s == "domain") return DmsGranularity::kDomain;
  if (s == "per-class") return DmsGranularity::kPerClass;
  throw std::invalid_argument("unknown DMS granularity '" + s + "' (domain, per-class)");
}

bool uses_fomixup(TrainMode m) { return recipe(m).mix; }

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(clip_norm >= 0)) throw std::invalid_argument("clip_norm must be >= 0");
  if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
  if (augment_p < 0 || augment_p > 1) throw std::invalid_argument("augment_p must be in [0, 1]");
  if (k_cam < 2) throw std::invalid_argument("k_cam must be >= 2");
  if (n_radial < 1 || n_angular < 1) throw std::invalid_argument("segment grid must be at least 1x1");
  weights.validate();
  mix.validate(n_radial * n_angular);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double evaluate_auc(Detector& det, const std::vector<Sample>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& s : samples) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  std::vector<double> scores;
  for (const auto& p : det.predict(images)) scores.push_back(p[1]);
  return roc_auc(scores, labels);
}

Evaluation evaluate(Detector& det, const Dataset& data) {
  Evaluation e;
  e.auc_in = evaluate_auc(det, data.test_in);
  e.auc_cross = evaluate_auc(det, data.test_cross);
  e.accuracy_in = split_accuracy(det, data.test_in);
  return e;
}

Detector train_warmup(const Dataset& data, const TrainConfig& cfg) {
  TrainConfig w = cfg;
  w.mode = TrainMode::kBaseline;
  w.epochs = cfg.warmup_epochs;
  return train(data, w, nullptr).detector;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, Detector* scorer,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  const Recipe r = recipe(cfg.mode);
  const int channels = data.train[0].image.channels();
  const int height = data.train[0].image.height(), width = data.train[0].image.width();

  std::array<double, 2> counts{0, 0};
  std::vector<int> fake_ids;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const Sample& s = data.train[i];
    if (s.label != kLabelReal && s.label != kLabelFake) throw std::invalid_argument("train: bad label");
    counts[static_cast<std::size_t>(s.label)] += 1;
    if (s.label == kLabelFake) fake_ids.push_back(static_cast<int>(i));
  }
  if (r.mix && fake_ids.size() < 2) throw std::invalid_argument("train: Fo-Mixup needs at least two forgeries");

  DetectorConfig dcfg = cfg.detector;
  dcfg.in_channels = channels;
  TrainResult result{Detector(dcfg, derive_seed(cfg.seed, kStreamInit)), {}, {}};
  Detector& det = result.detector;

  std::vector<ClusterMasks> masks;
  MixConfig mix = cfg.mix;
  if (r.mix) {
    const SegmentGrid grid = make_segment_grid(height, width, cfg.n_radial, cfg.n_angular);
    if (scorer) {
      masks = precompute_masks(data, grid, *scorer, mix);
    } else {
      Detector warm = train_warmup(data, cfg);
      masks = precompute_masks(data, grid, warm, mix);
    }
  }

  MomentumSgd opt(det.parameters(), cfg.lr, cfg.momentum, cfg.clip_norm);
  std::vector<ad::NamedArray> last_good = ad::snapshot(det.parameters());
  const std::size_t n = data.train.size();
  int global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = make_rng(cfg.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle);

    EpochLog log;
    log.epoch = epoch;
    int steps = 0, mixed = 0, kept = 0, dms_steps = 0;
    double dms_sum = 0;

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t b = end - start;
      std::vector<int> labels(b);
      std::vector<Image> view_t(b), view_s(b);
      std::vector<int> batch_fakes;
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t idx = order[start + k];
        labels[k] = data.train[idx].label;
        view_t[k] = data.train[idx].image;
        if (labels[k] == kLabelFake) batch_fakes.push_back(static_cast<int>(idx));
      }

      // Second view, one RNG stream per (epoch, sample).
      std::vector<char> is_mixed(b, 0);
      parallel_for(b, [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        Rng rng = make_rng(cfg.seed, kStreamAugment, static_cast<std::uint64_t>(epoch - 1) * n + idx);
        Image x = view_t[k];
        if (r.mix && labels[k] == kLabelFake) {
          int j = static_cast<int>(idx);
          if (batch_fakes.size() > 1) {
            std::uniform_int_distribution<std::size_t> pick(0, batch_fakes.size() - 2);
            std::size_t p = pick(rng);
            if (batch_fakes[p] == static_cast<int>(idx)) p = batch_fakes.size() - 1;
            j = batch_fakes[p];
          } else {
            std::uniform_int_distribution<std::size_t> pick(0, fake_ids.size() - 2);
            std::size_t p = pick(rng);
            if (fake_ids[p] == static_cast<int>(idx)) p = fake_ids.size() - 1;
            j = fake_ids[p];
          }
          x = fo_mixup(x, data.train[static_cast<std::size_t>(j)].image, masks[idx], mix, rng).image;
          is_mixed[k] = 1;
        }
        if (r.augment) x = standard_augment(x, cfg.augment_p, rng);
        view_s[k] = std::move(x);
      });

      // Rows of the second view that enter the loss.
      std::vector<int> paired;
      std::vector<int> synth;
      for (std::size_t k = 0; k < b; ++k) {
        if (is_mixed[k]) {
          synth.push_back(static_cast<int>(k));
        } else {
          paired.push_back(static_cast<int>(k));
        }
      }
      mixed += static_cast<int>(synth.size());
      if (r.sample && !synth.empty()) {
        std::vector<Image> imgs;
        for (int k : synth) imgs.push_back(view_s[static_cast<std::size_t>(k)]);
        const auto keep = confidence_sample(det.predict(imgs), cfg.mix.lambda);
        std::vector<int> chosen;
        for (std::size_t i : keep) chosen.push_back(synth[i]);
        std::sort(chosen.begin(), chosen.end());
        synth = chosen;
      }
      kept += static_cast<int>(synth.size());
      paired.insert(paired.end(), synth.begin(), synth.end());
      std::sort(paired.begin(), paired.end());

      ad::Tape tape;
      LossParts parts;
      std::vector<int> all_labels;
      ad::Tensor logits_all;
      const bool aux = r.cls_sphere || r.sphere;
      if (!r.two_view) {
        auto out = det.forward(tape, batch_tensor(tape, view_s), aux);
        parts.cls = ad::cross_entropy(out.logits, labels);
        logits_all = out.logits;
        all_labels = labels;
      } else {
        std::vector<Image> stacked = view_t;
        for (int k : paired) stacked.push_back(view_s[static_cast<std::size_t>(k)]);
        auto out = det.forward(tape, batch_tensor(tape, stacked), aux);
        std::vector<int> t_rows(b), s_rows;
        std::iota(t_rows.begin(), t_rows.end(), 0);
        for (std::size_t i = 0; i < paired.size(); ++i) s_rows.push_back(static_cast<int>(b + i));
        const std::vector<int> s_labels = gather(labels, paired);
        all_labels = labels;
        all_labels.insert(all_labels.end(), s_labels.begin(), s_labels.end());

        const ad::Tensor logits_t = ad::take(out.logits, t_rows);
        const ad::Tensor logits_s = ad::take(out.logits, s_rows);
        logits_all = out.logits;
        parts.cls = ad::cross_entropy(logits_t, labels) + ad::cross_entropy(logits_s, s_labels);
        if (r.kl) {
          parts.cls = parts.cls + ad::mean(ad::kl_softmax(logits_s, ad::take(logits_t, paired), cfg.weights.tau));
        }
        if (r.cam) parts.cam = ad::cross_entropy(out.logits, all_labels);
        if (r.att) {
          const ad::Tensor cam = compute_cam(out.features, out.fc_weight);
          const ad::Tensor gamma = tape.parameter(det.gamma()), beta = tape.parameter(det.beta());
          const std::uint64_t cam_seed = derive_seed(cfg.seed, kStreamAugment, static_cast<std::uint64_t>(global_step));
          const auto norm_s = classwise_normalize(ad::take(cam, s_rows), s_labels, gamma, beta, cfg.k_cam, cam_seed);
          const auto norm_t = classwise_normalize(ad::take(cam, paired), s_labels, gamma, beta, cfg.k_cam, cam_seed);
          parts.att = attention_loss(norm_s.values, norm_t.values, cfg.weights.tau);
        }
        if (r.cls_sphere) {
          parts.cls_sphere = vmf_ce_loss(out.embedding, det.vmf_directions(tape), det.vmf_kappa(tape), counts,
                                         all_labels);
        }
        if (r.sphere) {
          const ad::Tensor emb_s = ad::take(out.embedding, s_rows);
          const ad::Tensor emb_t = ad::take(out.embedding, paired);
          std::vector<ad::Tensor> terms;
          double dms = 0;
          if (cfg.dms_granularity == DmsGranularity::kDomain) {
            if (paired.size() >= 2) {
              auto d = dms_loss(emb_s, emb_t);
              terms.push_back(d.loss);
              dms += d.dms;
            }
          } else {
            for (int c : {kLabelReal, kLabelFake}) {
              const std::vector<int> rows = rows_with_label(s_labels, c);
              if (rows.size() < 2) continue;
              auto d = dms_loss(ad::take(emb_s, rows), ad::take(emb_t, rows));
              terms.push_back(d.loss);
              dms += d.dms;
            }
          }
          if (!terms.empty()) {
            ad::Tensor acc = terms[0];
            for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
            parts.sphere = ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
            dms_sum += dms / static_cast<double>(terms.size());
            ++dms_steps;
          }
        }
      }

      ad::Tensor loss;
      try {
        loss = total_loss(parts, cfg.weights);
      } catch (const NonFiniteLoss& e) {
        ad::restore(last_good, det.parameters());
        throw TrainingAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(global_step + 1) + "; parameters rolled back to epoch " +
                              std::to_string(epoch - 1));
      }
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      det.project();

      ++global_step;
      ++steps;
      StepLog sl;
      sl.epoch = epoch;
      sl.step = global_step;
      sl.cls = value_or_zero(parts.cls);
      sl.cam = value_or_zero(parts.cam);
      sl.att = value_or_zero(parts.att);
      sl.cls_sphere = value_or_zero(parts.cls_sphere);
      sl.sphere = value_or_zero(parts.sphere);
      sl.total = loss.item();
      result.steps.push_back(sl);
      log.loss += sl.total;
      log.cls += sl.cls;
      log.cam += sl.cam;
      log.att += sl.att;
      log.cls_sphere += sl.cls_sphere;
      log.sphere += sl.sphere;
    }

    const double inv = steps ? 1.0 / steps : 0.0;
    log.loss *= inv;
    log.cls *= inv;
    log.cam *= inv;
    log.att *= inv;
    log.cls_sphere *= inv;
    log.sphere *= inv;
    log.train_accuracy = split_accuracy(det, data.train);
    log.dms = dms_steps ? dms_sum / dms_steps : std::numeric_limits<double>::quiet_NaN();
    log.kept_fraction = mixed ? static_cast<double>(kept) / mixed : std::numeric_limits<double>::quiet_NaN();
    const Evaluation ev = evaluate(det, data);
    log.auc_in = ev.auc_in;
    log.auc_cross = ev.auc_cross;
    {
      ad::Tape t;
      t.set_recording(false);
      const ad::Array k = det.vmf_kappa(t).value();
      const ad::Array dirs = det.vmf_directions(t).value();
      const Eigen::Index d = dirs.size() / 2;
      log.kappa_real = k(0);
      log.kappa_fake = k(1);
      const Eigen::VectorXd a = dirs.head(d).matrix(), c = dirs.tail(d).matrix();
      log.direction_cosine = a.dot(c) / std::max(1e-300, a.norm() * c.norm());
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(log);
    last_good = ad::snapshot(det.parameters());
    if (on_epoch) on_epoch(log);
  }
  return result;
}

void write_epoch_csv(const std::string& path, TrainMode mode, const std::vector<EpochLog>& epochs) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "epoch,mode,loss,L_cls,L_CAM,L_att,L_cls_sphere,L_sphere,train_accuracy,auc_in,auc_cross,"
       "kappa_real,kappa_fake,direction_cosine,dms,kept_fraction\n";
  for (const auto& e : epochs) {
    f << e.epoch << ',' << to_string(mode) << ',' << fmt(e.loss) << ',' << fmt(e.cls) << ',' << fmt(e.cam) << ','
      << fmt(e.att) << ',' << fmt(e.cls_sphere) << ',' << fmt(e.sphere) << ',' << fmt(e.train_accuracy) << ','
      << fmt(e.auc_in) << ',' << fmt(e.auc_cross) << ',' << fmt(e.kappa_real) << ',' << fmt(e.kappa_fake) << ','
      << fmt(e.direction_cosine) << ',' << fmt(e.dms) << ',' << fmt(e.kept_fraction)
      << '\n';
  }
}

void write_step_csv(const std::string& path, const std::vector<StepLog>& steps) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "epoch,step,L_cls,L_CAM,L_att,L_cls_sphere,L_sphere,L_total\n";
  for (const auto& s : steps) {
    f << s.epoch << ',' << s.step << ',' << fmt(s.cls) << ',' << fmt(s.cam) << ',' << fmt(s.att) << ','
      << fmt(s.cls_sphere) << ',' << fmt(s.sphere) << ',' << fmt(s.total) << '\n';
  }
}

}  // namespace freqdebias
