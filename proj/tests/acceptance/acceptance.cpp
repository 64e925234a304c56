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

// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "freqdebias/cli.hpp"
#include "freqdebias/consistency.hpp"
#include "freqdebias/dataset.hpp"
#include "freqdebias/fomixup.hpp"
#include "freqdebias/probe.hpp"
#include "freqdebias/spectral.hpp"
#include "freqdebias/train.hpp"
#include "freqdebias/vmf.hpp"
#include "support/gradcheck.hpp"
#include "support/vmf_oracle.hpp"

using namespace freqdebias;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Image random_image(int n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img;
  img.planes.emplace_back(n, n);
  for (Eigen::Index i = 0; i < img[0].size(); ++i) img[0].data()[i] = u(rng);
  return img;
}

ad::Parameter random_param(const std::string& name, ad::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  ad::Parameter p(name, shape);
  p.value.resize(static_cast<Eigen::Index>(ad::numel(shape)));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : p.value) v = n(rng);
  return p;
}

VmfParams vmf_params(Eigen::VectorXd mu, double kappa) {
  VmfParams p;
  p.mu = mu / mu.norm();
  p.kappa = kappa;
  return p;
}

// 1. Round trip and Parseval on random images.
Outcome fft_correctness() {
  Stopwatch sw;
  std::mt19937_64 rng(1);
  double worst_rt = 0, worst_parseval = 0;
  for (int i = 0; i < 100; ++i) {
    const Image x = random_image(64, rng);
    const Spectrum s = fft2(x);
    const Image back = ifft2(s);
    worst_rt = std::max(worst_rt, (back[0] - x[0]).abs().maxCoeff());
    const double energy = x[0].square().sum();
    const double spectral = s.amplitude[0].square().sum() / (64.0 * 64.0);
    worst_parseval = std::max(worst_parseval, std::abs(spectral - energy) / energy);
  }
  const double t = sw.seconds();
  return {worst_rt < 1e-10 && worst_parseval < 1e-10 && t < 5.0,
          format("round trip %.2e, Parseval %.2e (limits 1e-10), %.2f s (limit 5 s)", worst_rt, worst_parseval, t)};
}

// 2. Density normalisation by importance sampling, and the d = 3 closed form.
Outcome vmf_normalisation() {
  std::mt19937_64 rng(2);
  double worst_mc = 0, worst_closed = 0;
  for (int d : {3, 8}) {
    for (double kappa : {0.5, 5.0, 50.0}) {
      const VmfParams p = vmf_params(testing::random_unit(d, rng), kappa);
      const double integral = testing::mc_normalization(p, 400000, rng);
      worst_mc = std::max(worst_mc, std::abs(integral - 1.0));
    }
  }
  for (double kappa : {1e-3, 0.5, 1.0, 5.0, 50.0, 300.0}) {
    // log of kappa / (4 pi sinh kappa), with sinh expanded to stay finite.
    const double log_ref = std::log(kappa) - std::log(2 * std::numbers::pi) - kappa - std::log1p(-std::exp(-2 * kappa));
    const double rel = std::abs(std::expm1(log_vmf_norm(3, kappa) - log_ref));
    worst_closed = std::max(worst_closed, rel);
  }
  return {worst_mc < 0.01 && worst_closed < 1e-10,
          format("Monte Carlo |integral - 1| %.4f (limit 0.01), d = 3 closed form rel %.2e (limit 1e-10)", worst_mc,
                 worst_closed)};
}

// 3. Closed-form KL against sampling.
Outcome vmf_kl_check() {
  std::mt19937_64 rng(3);
  const int d = 8;
  double worst = 0;
  std::uniform_real_distribution<double> k(1.0, 20.0);
  for (int pair = 0; pair < 5; ++pair) {
    const VmfParams p = vmf_params(testing::random_unit(d, rng), k(rng));
    const VmfParams q = vmf_params(testing::random_unit(d, rng), k(rng));
    testing::WoodSampler sample(p);
    double acc = 0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd x = sample(rng);
      acc += vmf_log_density(x, p) - vmf_log_density(x, q);
    }
    const double closed = vmf_kl(p, q);
    worst = std::max(worst, std::abs(acc / n - closed) / closed);
  }
  double self = 0;
  for (int i = 0; i < 5; ++i) {
    const VmfParams p = vmf_params(testing::random_unit(d, rng), k(rng));
    self = std::max(self, std::abs(vmf_kl(p, p)));
  }
  return {worst < 0.02 && self < 1e-9,
          format("worst relative gap %.4f over 5 pairs (limit 0.02), KL(p, p) %.2e (limit 1e-9)", worst, self)};
}

// 4. Every differentiable loss term against central differences.
Outcome gradient_suite() {
  std::mt19937_64 rng(4);
  const int instances = 20;
  const int n = 4, c = 4, h = 4, w = 4, d = 6;
  struct Term {
    const char* name;
    double rel;
    int passed = 0;
    double worst = 0;
  };
  std::vector<Term> terms = {{"classification consistency", 1e-4}, {"CAM cross-entropy", 1e-4},
                             {"attention consistency", 1e-4},      {"vMF classifier", 1e-4},
                             {"distribution similarity", 1e-3},    {"total objective", 1e-4}};
  std::uniform_int_distribution<int> bit(0, 1);
  for (int it = 0; it < instances; ++it) {
    std::vector<int> labels(n);
    for (auto& y : labels) y = bit(rng);
    labels[0] = 0;
    labels[1] = 1;
    std::vector<int> stacked = labels;
    stacked.insert(stacked.end(), labels.begin(), labels.end());
    std::vector<int> src(n), tgt(n);
    for (int i = 0; i < n; ++i) {
      src[static_cast<std::size_t>(i)] = i;
      tgt[static_cast<std::size_t>(i)] = n + i;
    }
    // Source rows first, then target rows, as in a training step.
    ad::Parameter feat = random_param("features", {2 * n, c, h, w}, rng);
    ad::Parameter wt = random_param("w", {c, 2}, rng);
    ad::Parameter gamma("gamma", {1}, ad::Array::Constant(1, 1.0 + 0.5 * std::uniform_real_distribution<double>(0, 1)(rng)));
    ad::Parameter beta("beta", {1}, ad::Array::Constant(1, std::normal_distribution<double>(0, 0.3)(rng)));
    ad::Parameter emb = random_param("embedding", {2 * n, d}, rng);
    for (int i = 0; i < n; ++i) {
      emb.value.segment((n + i) * d, d) += 1.5 * emb.value.segment(i * d, d);  // related but distinct clouds
    }
    ad::Parameter dirs = random_param("dirs", {2, d}, rng);
    std::uniform_real_distribution<double> kd(1, 10);
    ad::Parameter kappa("kappa", {2}, (ad::Array(2) << kd(rng), kd(rng)).finished());
    const double tau = 4.0;
    const std::array<double, 2> counts{static_cast<double>(std::count(stacked.begin(), stacked.end(), 0)),
                                       static_cast<double>(std::count(stacked.begin(), stacked.end(), 1))};

    auto logits = [&](ad::Tape& t) { return ad::matmul(ad::global_avg_pool(t.parameter(feat)), t.parameter(wt)); };
    auto cls = [&](ad::Tape& t) {
      const ad::Tensor l = logits(t);
      return cls_consistency_loss(ad::take(l, src), ad::take(l, tgt), labels, tau);
    };
    auto cam = [&](ad::Tape& t) { return ad::cross_entropy(logits(t), stacked); };
    auto att = [&](ad::Tape& t) {
      const ad::Tensor f = t.parameter(feat), W = t.parameter(wt), g = t.parameter(gamma), b = t.parameter(beta);
      const auto ns = classwise_normalize(compute_cam(ad::take(f, src), W), labels, g, b);
      const auto nt = classwise_normalize(compute_cam(ad::take(f, tgt), W), labels, g, b);
      return attention_loss(ns.values, nt.values, tau);
    };
    auto sphere_cls = [&](ad::Tape& t) {
      return vmf_ce_loss(ad::l2_normalize(t.parameter(emb)), t.parameter(dirs), t.parameter(kappa), counts, stacked);
    };
    auto sphere = [&](ad::Tape& t) {
      const ad::Tensor e = ad::l2_normalize(t.parameter(emb));
      return dms_loss(ad::take(e, src), ad::take(e, tgt)).loss;
    };
    const std::vector<std::function<ad::Tensor(ad::Tape&)>> builds = {
        cls, cam, att, sphere_cls, sphere, [&](ad::Tape& t) {
          LossParts parts;
          parts.cls = cls(t);
          parts.cam = cam(t);
          parts.att = att(t);
          parts.cls_sphere = sphere_cls(t);
          parts.sphere = sphere(t);
          return total_loss(parts, LossWeights{});
        }};
    const std::vector<std::vector<ad::Parameter*>> params = {
        {&feat, &wt}, {&feat, &wt}, {&feat, &wt, &gamma, &beta}, {&emb, &dirs, &kappa}, {&emb},
        {&feat, &wt, &gamma, &beta, &emb, &dirs, &kappa}};
    for (std::size_t k = 0; k < terms.size(); ++k) {
      testing::GradCheckOptions opt;
      opt.rel = terms[k].rel;
      const auto rep = testing::check_gradients(params[k], builds[k], opt);
      terms[k].passed += rep.ok ? 1 : 0;
      terms[k].worst = std::max(terms[k].worst, rep.worst_error);
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& t : terms) {
    ok = ok && t.passed == instances;
    detail += format("%s%s %d/%d", detail.empty() ? "" : ", ", t.name, t.passed, instances);
  }
  return {ok, detail + " instances within tolerance (rel 1e-4, 1e-3 for distribution similarity)"};
}

// 5. Mixing identities, phase, determinism and confidence sampling.
Outcome fomixup_contracts() {
  std::mt19937_64 rng(5);
  const int n = 32;
  const SegmentGrid grid = make_segment_grid(n, n, 8, 16);
  std::uniform_int_distribution<int> seg(0, grid.total() - 1);
  auto random_masks = [&]() {
    ClusterMasks m;
    std::vector<int> owner(static_cast<std::size_t>(grid.total()));
    for (auto& o : owner) o = std::uniform_int_distribution<int>(0, 7)(rng);
    for (int k = 0; k < 8; ++k) {
      std::vector<bool> sel(owner.size());
      std::vector<int> ids;
      for (std::size_t s = 0; s < owner.size(); ++s)
        if (owner[s] == k) {
          sel[s] = true;
          ids.push_back(static_cast<int>(s));
        }
      m.masks.push_back(mask_from_segments(grid, sel));
      m.segments.push_back(ids);
      m.losses.push_back(8.0 - k);
      m.cluster_ids.push_back(k);
    }
    m.top = 3;
    return m;
  };

  double identity = 0, phase = 0;
  bool deterministic = true;
  for (int it = 0; it < 50; ++it) {
    const Image a = random_image(n, rng, 0.1, 0.9), b = random_image(n, rng, 0.1, 0.9);
    const ClusterMasks masks = random_masks();
    MixConfig still;
    still.xi_min = still.xi_max = 0.0;
    still.sigma = 0.0;
    Rng r0(it);
    const MixResult same = fo_mixup(a, b, masks, still, r0);
    identity = std::max(identity, (same.image[0] - a[0]).abs().maxCoeff());

    Rng rp(it);
    const Plane<double> pert = amplitude_perturbation(n, n, 0.1, rp);
    const double xi = std::uniform_real_distribution<double>(0, 1)(rng);
    const MixOutput out = mix_amplitudes(a, b, masks.masks[static_cast<std::size_t>(it % 3)], xi, &pert, it % 2 == 1);
    const Spectrum got = fft2(out.unclamped), sa = fft2(a);
    for (Eigen::Index i = 0; i < got.phase[0].size(); ++i) {
      if (out.spectrum.amplitude[0].data()[i] <= 1e-9) continue;
      phase = std::max(phase, std::abs(std::arg(std::polar(1.0, got.phase[0].data()[i] - sa.phase[0].data()[i]))));
    }

    MixConfig cfg;
    Rng r1(1000 + it), r2(1000 + it);
    const MixResult x1 = fo_mixup(a, b, masks, cfg, r1), x2 = fo_mixup(a, b, masks, cfg, r2);
    deterministic = deterministic && x1.image == x2.image && x1.xi == x2.xi && x1.mask_index == x2.mask_index;
  }

  bool sampling = true;
  std::uniform_real_distribution<double> u(0, 1);
  for (int size : {1, 2, 7, 10, 33, 100, 257}) {
    std::vector<std::array<double, 2>> probs(static_cast<std::size_t>(size));
    for (auto& p : probs) {
      p[1] = u(rng);
      p[0] = 1 - p[1];
    }
    for (double lambda : {0.5, 0.35, 0.8, 1.0}) {
      const auto kept = confidence_sample(probs, lambda);
      const auto want = static_cast<std::size_t>(std::ceil(lambda * size - 1e-12));
      std::vector<double> h;
      for (const auto& p : probs) h.push_back(-(p[0] > 0 ? p[0] * std::log(p[0]) : 0) - (p[1] > 0 ? p[1] * std::log(p[1]) : 0));
      std::vector<double> sorted = h;
      std::sort(sorted.begin(), sorted.end());
      bool lowest = kept.size() == want;
      for (std::size_t i : kept) lowest = lowest && h[i] <= sorted[want - 1];
      sampling = sampling && lowest;
    }
  }
  return {identity < 1e-8 && phase < 1e-8 && deterministic && sampling,
          format("identity %.2e, phase %.2e (limits 1e-8), bit-exact determinism %s, confidence sampling %s",
                 identity, phase, deterministic ? "yes" : "no", sampling ? "exact" : "wrong")};
}

// 6. Band ablation finds the injection band; untrained detectors show none.
Outcome probe_validity() {
  Stopwatch sw;
  int hits = 0;
  const int runs = 20;
  std::string misses;
  for (int run = 0; run < runs; ++run) {
    DatasetConfig dc = benchmark_config(1, 6000 + static_cast<std::uint64_t>(run));
    dc.n_train = 100;
    dc.n_test = 30;
    const int band = (2 + run % 4) * dc.n_angular + (5 * run) % dc.n_angular;
    dc.types[0].segments = {band};
    const Dataset ds = generate_dataset(dc);
    TrainConfig tc;
    tc.mode = TrainMode::kBaseline;
    tc.epochs = 6;
    tc.lr = 0.05;
    tc.augment_p = 0.1;
    tc.seed = 7000 + static_cast<std::uint64_t>(run);
    TrainResult r = train(ds, tc);
    const ProbeResult pr = spectral_probe(r.detector, ds.test_in, ProbeConfig{});
    const int top = rank_segments(pr.type_increase.at(0)).front();
    if (top == band) {
      ++hits;
    } else {
      misses += format(" run %d: %d vs %d;", run, top, band);
    }
  }
  DatasetConfig dc = benchmark_config(1, 6100);
  dc.n_train = 2;
  dc.n_test = 30;
  const Dataset ds = generate_dataset(dc);
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(8000 + s);
  const NullProbeResult null = null_probe(DetectorConfig{}, ds.test_in, ProbeConfig{}, seeds, 3.0);
  const double t = sw.seconds();
  return {hits >= 19 && null.passed && t < 600,
          format("top-1 band hits %d/%d (need 19)%s; null probe range %.3g vs 3 x std %.3g of the extreme bands "
                 "(all-band pooled std %.3g): %s; %.0f s (limit 600 s)",
                 hits, runs, misses.c_str(), null.range, 3 * null.extreme_std, null.pooled_std,
                 null.passed ? "no significant band" : "significant band", t)};
}

// 7. Cross-type AUC ordering of baseline, Fo-Mixup only and the full pipeline.
Outcome ablation_direction() {
  Stopwatch sw;
  const int seeds = 5;
  double base = 0, mix = 0, full = 0;
  for (int s = 0; s < seeds; ++s) {
    DatasetConfig dc = benchmark_config(3, 100 + static_cast<std::uint64_t>(s));
    dc.n_train = 200;
    dc.n_test = 100;
    const Dataset ds = generate_dataset(dc);
    TrainConfig tc;
    tc.epochs = 12;
    tc.lr = 0.05;
    tc.augment_p = 0.1;
    tc.seed = tc.mix.seed = 1000 + static_cast<std::uint64_t>(s);
    Detector scorer = train_warmup(ds, tc);
    double auc[3];
    const TrainMode modes[3] = {TrainMode::kBaseline, TrainMode::kFoMixup, TrainMode::kFull};
    for (int m = 0; m < 3; ++m) {
      tc.mode = modes[m];
      auc[m] = train(ds, tc, &scorer).epochs.back().auc_cross;
    }
    std::printf("    seed %d: baseline %.4f, fomixup %.4f, full %.4f\n", s, auc[0], auc[1], auc[2]);
    std::fflush(stdout);
    base += auc[0] / seeds;
    mix += auc[1] / seeds;
    full += auc[2] / seeds;
  }
  const double t = sw.seconds();
  return {base < mix && mix < full && full - base >= 0.03 && t <= 1800,
          format("mean cross-type AUC baseline %.4f, fomixup %.4f, full %.4f; need baseline < fomixup < full and "
                 "full - baseline >= 0.03; %.0f s (limit 1800 s)",
                 base, mix, full, t)};
}

// 8. Attention loss bounds and symmetry.
Outcome attention_bounds() {
  std::mt19937_64 rng(8);
  double lo = 1e300, hi = -1e300, asym = 0;
  std::uniform_int_distribution<int> rows(1, 4), cols(2, 64);
  std::uniform_real_distribution<double> log_scale(-3, 3);
  const double taus[] = {0.25, 1.0, 4.0, 16.0};
  for (int i = 0; i < 10000; ++i) {
    const int r = rows(rng), c = cols(rng);
    const double scale = std::pow(10.0, log_scale(rng));
    ad::Array a(r * c), b(r * c);
    std::normal_distribution<double> g(0, scale);
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng);
    const double tau = taus[i % 4];
    ad::Tape t;
    t.set_recording(false);
    const double ab = attention_loss(t.constant({r, c}, a), t.constant({r, c}, b), tau).item();
    const double ba = attention_loss(t.constant({r, c}, b), t.constant({r, c}, a), tau).item();
    lo = std::min(lo, ab);
    hi = std::max(hi, ab);
    asym = std::max(asym, std::abs(ab - ba));
  }
  return {lo >= 0 && hi <= std::log(2.0) && asym <= 1e-12,
          format("range [%.3g, %.6f] within [0, ln 2 = %.6f], asymmetry %.2e (limit 1e-12)", lo, hi, std::log(2.0), asym)};
}

// 9. Two CLI training runs with one config and seed.
Outcome end_to_end_determinism() {
  const fs::path root = fs::temp_directory_path() / "freqdebias_acceptance_e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream f(root / "run.cfg");
    f << "# small full-pipeline run\nmode = full\nepochs = 2\nwarmup_epochs = 1\nn_train = 40\nn_test = 20\n"
         "batch_size = 16\nlr = 0.05\naugment_p = 0.1\n";
  }
  std::ostringstream out, err;
  int codes[2];
  for (int i = 0; i < 2; ++i)
    codes[i] = run_cli({"train", "--config", (root / "run.cfg").string(), "--seed", "11", "--out",
                        (root / ("run" + std::to_string(i))).string()},
                       out, err);
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  const std::string a = slurp(root / "run0/metrics.csv"), b = slurp(root / "run1/metrics.csv");
  const bool same = codes[0] == 0 && codes[1] == 0 && !a.empty() && a == b;
  fs::remove_all(root);
  return {same, format("exit codes %d/%d, metrics CSV %zu bytes, %s", codes[0], codes[1], a.size(),
                       a == b ? "byte-identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "FFT correctness", fft_correctness},
      {2, "vMF normalisation", vmf_normalisation},
      {3, "vMF KL closed form", vmf_kl_check},
      {4, "gradient suite", gradient_suite},
      {5, "Fo-Mixup contracts", fomixup_contracts},
      {6, "probe validity", probe_validity},
      {7, "directional ablation", ablation_direction},
      {8, "attention-loss bounds", attention_bounds},
      {9, "end-to-end determinism", end_to_end_determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Stopwatch sw;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), sw.seconds());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
