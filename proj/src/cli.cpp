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

#include "freqdebias/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>

#include "freqdebias/config.hpp"
#include "freqdebias/dataset.hpp"
#include "freqdebias/detector.hpp"
#include "freqdebias/fomixup.hpp"
#include "freqdebias/image_io.hpp"
#include "freqdebias/probe.hpp"
#include "freqdebias/random.hpp"
#include "freqdebias/train.hpp"

namespace freqdebias {
namespace {

namespace fs = std::filesystem;

constexpr const char* kRunManifest = "run-manifest.txt";

// Keys describing the images on disk; a dataset directory's own manifest
// is authoritative for these.
const std::vector<std::string>& dataset_keys() {
  static const std::vector<std::string> keys = {
      "data_seed", "image_size", "channels", "n_train", "n_test", "bands", "amplitude", "held_out",
      "common_amplitude", "tones", "region_size", "texture_exponent", "texture_std", "data_n_radial",
      "data_n_angular"};
  return keys;
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  KeyValues flags;
  std::string out;
  bool force = false;
};

void add_config_options(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "key = value file; explicit flags take precedence")
      ->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override any config key as key=value (repeatable)");
  sub->add_option_function<std::string>(
      "--seed", [&c](const std::string& v) { c.flags["seed"] = v; }, "seed for every random stream");
}

void add_output_options(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "output directory")->required();
  sub->add_flag("--force", c.force, "write into a non-empty output directory");
}

void bind(CLI::App* sub, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  sub->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
}

void bind_flag(CLI::App* sub, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  sub->add_flag_callback(flag, [&c, key] { c.flags[key] = "true"; }, help);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

// Precedence, lowest first: defaults, --config, --set, dedicated flags,
// then the dataset's own settings when reading one from disk.
RunConfig resolve(const Common& c, const KeyValues* data_kv) {
  KeyValues kv;
  if (!c.config_path.empty()) kv = read_key_values(c.config_path);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  for (const auto& [k, v] : c.flags) kv[k] = v;
  if (data_kv)
    for (const auto& [k, v] : *data_kv) kv[k] = v;
  RunConfig cfg;
  apply_config(cfg, kv);
  cfg.finalize();
  return cfg;
}

KeyValues dataset_settings(const std::string& dir, std::ostream& err) {
  const fs::path path = fs::path(dir) / kRunManifest;
  KeyValues out;
  if (!fs::exists(path)) {
    err << "note: " << dir << " has no " << kRunManifest << "; dataset settings in the run manifest are defaults\n";
    return out;
  }
  const KeyValues all = read_key_values(path.string());
  for (const auto& k : dataset_keys()) {
    auto it = all.find(k);
    if (it != all.end()) out[k] = it->second;
  }
  return out;
}

void prepare_output(const std::string& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError("output path '" + dir + "' is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw UsageError("output directory '" + dir + "' is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

std::string quote(const std::string& a) {
  if (!a.empty() && a.find_first_of(" \t'\"\\") == std::string::npos) return a;
  std::string q = "'";
  for (char ch : a) q += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return q + "'";
}

void write_run_manifest(const std::string& dir, const std::vector<std::string>& args, const RunConfig& cfg,
                        const std::vector<std::string>& notes = {}) {
  const std::string path = (fs::path(dir) / kRunManifest).string();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "# freqdebias run manifest\n# command: freqdebias";
  for (const auto& a : args) f << ' ' << quote(a);
  f << "\n# version: " << kVersion << "\n# compiler: " << __VERSION__ << "\n# eigen: " << EIGEN_WORLD_VERSION << '.'
    << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << '\n';
  for (const auto& n : notes) f << "# " << n << '\n';
  f << render(cfg);
  if (!f) throw std::runtime_error("failed writing " + path);
}

const std::vector<Sample>& pick_split(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "test_cross") return ds.test_cross;
  return ds.test_in;
}

std::string render_bands(const std::vector<ForgerySpec>& types) {
  std::string s;
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (i) s += ',';
    for (std::size_t j = 0; j < types[i].segments.size(); ++j) {
      if (j) s += '+';
      s += std::to_string(types[i].segments[j]);
    }
  }
  return s;
}

int cmd_gen_data(const Common& c, std::optional<int> types, const std::vector<std::string>& args, std::ostream& out) {
  Common eff = c;
  if (types) {
    const DatasetConfig preset = benchmark_config(*types, 0);
    eff.flags.try_emplace("bands", render_bands(preset.types));
    eff.flags.try_emplace("held_out", std::to_string(preset.held_out));
  }
  const RunConfig cfg = resolve(eff, nullptr);
  prepare_output(c.out, c.force);
  const Dataset ds = generate_dataset(cfg.data);
  const std::size_t n = write_dataset(ds, c.out);
  write_run_manifest(c.out, args, cfg);
  out << "wrote " << n << " images to " << c.out << '\n';
  return 0;
}

struct AugmentOptions {
  std::string in, pairs = "random", scorer, scores, split = "train";
};

int cmd_augment(const Common& c, const AugmentOptions& o, const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err) {
  if (o.pairs != "random") throw UsageError("--pairs supports only 'random'");
  if (!o.scorer.empty() && !o.scores.empty()) throw UsageError("--scorer and --scores are exclusive");
  const KeyValues dkv = dataset_settings(o.in, err);
  const RunConfig cfg = resolve(c, &dkv);
  const Dataset ds = read_dataset(o.in);
  std::vector<const Sample*> fakes;
  for (const auto& s : pick_split(ds, o.split))
    if (s.label == 1) fakes.push_back(&s);
  if (fakes.size() < 2) throw UsageError("augment needs at least two forgeries in '" + o.in + "'");
  prepare_output(c.out, c.force);

  Detector det;
  std::unique_ptr<Scorer> scorer;
  std::vector<std::string> notes{"input data: " + o.in};
  if (!o.scores.empty()) {
    scorer = std::make_unique<ScoreTableScorer>(o.scores);
    notes.push_back("scores: " + o.scores);
  } else {
    if (o.scorer.empty()) {
      err << "training a " << cfg.train.warmup_epochs << "-epoch warm-up scorer\n";
      det = train_warmup(ds, cfg.train);
    } else {
      det = Detector::from_checkpoint(o.scorer);
      notes.push_back("scorer: " + o.scorer);
    }
    scorer = std::make_unique<DetectorScorer>(det);
  }

  const Image& first = fakes[0]->image;
  const SegmentGrid grid = make_segment_grid(first.height(), first.width(), cfg.train.n_radial, cfg.train.n_angular);
  const MixConfig& mix = cfg.train.mix;
  mix.validate(grid.total());
  const std::size_t n = fakes.size();
  std::vector<Image> mixed(n);
  std::vector<std::size_t> partner(n);
  std::vector<MixResult> results(n);
  std::vector<ClusterMasks> masks(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng pair_rng = make_rng(cfg.seed, kStreamPairs, i);
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, n - 2)(pair_rng);
    if (j >= i) ++j;
    partner[i] = j;
    masks[i] = dominant_masks(fakes[i]->image, 1, grid, *scorer, mix);
    Rng rng = make_rng(cfg.seed, kStreamAugment, i);
    results[i] = fo_mixup(fakes[i]->image, fakes[j]->image, masks[i], mix, rng);
    mixed[i] = results[i].image;
  }
  std::vector<std::array<double, 2>> probs;
  for (const auto& s : scorer->score(mixed, 1)) probs.push_back(s.probs);
  std::vector<bool> kept(n, false);
  for (std::size_t i : confidence_sample(probs, mix.lambda)) kept[i] = true;

  const std::string ext = first.channels() == 1 ? ".pgm" : ".ppm";
  fs::create_directories(fs::path(c.out) / "images");
  std::ofstream f(fs::path(c.out) / "manifest.csv");
  if (!f) throw std::runtime_error("cannot write manifest in '" + c.out + "'");
  f << "path,source_i,source_j,xi,mask_id,mask_segments,entropy,kept\n";
  std::size_t n_kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "aug_%05zu", i);
    const std::string rel = std::string("images/") + name + ext;
    write_image((fs::path(c.out) / rel).string(), mixed[i]);
    const int m = results[i].mask_index;
    f << rel << ',' << fakes[i]->name << ',' << fakes[partner[i]]->name << ',' << fmt(results[i].xi) << ',' << m << ','
      << band_string(masks[i].segments[static_cast<std::size_t>(m)]) << ',' << fmt(entropy(probs[i])) << ','
      << (kept[i] ? 1 : 0) << '\n';
    n_kept += kept[i] ? 1 : 0;
  }
  if (!f) throw std::runtime_error("failed writing manifest in '" + c.out + "'");
  write_run_manifest(c.out, args, cfg, notes);
  out << "wrote " << n << " augmented forgeries (" << n_kept << " kept) to " << c.out << '\n';
  return 0;
}

struct TrainOptions {
  std::string data, scorer;
};

int cmd_train(const Common& c, const TrainOptions& o, const std::vector<std::string>& args, std::ostream& out,
              std::ostream& err) {
  KeyValues dkv;
  if (!o.data.empty()) dkv = dataset_settings(o.data, err);
  const RunConfig cfg = resolve(c, o.data.empty() ? nullptr : &dkv);
  prepare_output(c.out, c.force);
  const Dataset ds = o.data.empty() ? generate_dataset(cfg.data) : read_dataset(o.data);
  std::vector<std::string> notes;
  if (!o.data.empty()) notes.push_back("input data: " + o.data);
  std::optional<Detector> scorer;
  if (!o.scorer.empty()) {
    scorer = Detector::from_checkpoint(o.scorer);
    notes.push_back("scorer: " + o.scorer);
  }
  write_run_manifest(c.out, args, cfg, notes);

  const std::string metrics = (fs::path(c.out) / "metrics.csv").string();
  std::vector<EpochLog> done;
  auto on_epoch = [&](const EpochLog& e) {
    done.push_back(e);
    err << "epoch " << e.epoch << '/' << cfg.train.epochs << "  loss " << e.loss << "  auc_in " << e.auc_in
        << "  auc_cross " << e.auc_cross << "  (" << e.seconds << " s)\n";
  };
  try {
    TrainResult r = train(ds, cfg.train, scorer ? &*scorer : nullptr, on_epoch);
    r.detector.save((fs::path(c.out) / "model.ckpt").string());
    write_epoch_csv(metrics, cfg.train.mode, r.epochs);
    write_step_csv((fs::path(c.out) / "steps.csv").string(), r.steps);
    const Evaluation e = evaluate(r.detector, ds);
    out << "auc_in " << fmt(e.auc_in) << "\nauc_cross " << fmt(e.auc_cross) << '\n';
  } catch (const TrainingAborted&) {
    write_epoch_csv(metrics, cfg.train.mode, done);
    throw;
  }
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, std::ostream& out) {
  Detector det = Detector::from_checkpoint(ckpt);
  const Dataset ds = read_dataset(data);
  const Evaluation e = evaluate(det, ds);
  out << "auc_in,auc_cross,accuracy_in\n" << fmt(e.auc_in) << ',' << fmt(e.auc_cross) << ',' << fmt(e.accuracy_in) << '\n';
  return 0;
}

struct ProbeOptions {
  std::string ckpt, data, split = "test_in";
};

int cmd_probe(const Common& c, const ProbeOptions& o, bool heatmaps_only, const std::vector<std::string>& args,
              std::ostream& out, std::ostream& err) {
  const KeyValues dkv = dataset_settings(o.data, err);
  const RunConfig cfg = resolve(c, &dkv);
  Detector det = Detector::from_checkpoint(o.ckpt);
  const Dataset ds = read_dataset(o.data);
  const std::vector<Sample>& samples = pick_split(ds, o.split);
  prepare_output(c.out, c.force);
  const ProbeResult r = spectral_probe(det, samples, cfg.probe);
  if (heatmaps_only) {
    write_heatmaps(r, cfg.probe, c.out);
  } else {
    write_probe(r, cfg.probe, c.out);
  }
  write_run_manifest(c.out, args, cfg, {"checkpoint: " + o.ckpt, "input data: " + o.data, "split: " + o.split});
  out << "probed " << r.images << " forgeries on " << r.grid.total() << " bands\n";
  for (const auto& [type, inc] : r.type_increase) {
    const int top = rank_segments(inc).front();
    out << "type " << type << ": top band " << top << " (radial " << r.grid.radial_bin(top) << ", angular "
        << r.grid.angular_bin(top) << "), loss increase " << fmt(inc[static_cast<std::size_t>(top)]) << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frequency-debiased forgery detection on synthetic spectra", "freqdebias"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common c;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::optional<int> types;
  gen->add_option_function<int>("--types", [&types](int v) { types = v; }, "number of forgery types (benchmark preset)");
  add_config_options(gen, c);
  bind(gen, c, "--n", "n_train", "training images per class");
  bind(gen, c, "--n-test", "n_test", "test images per class and split");
  bind(gen, c, "--held-out", "held_out", "type id kept out of training, -1 for none");
  bind(gen, c, "--amplitude", "amplitude", "artifact amplitude");
  bind(gen, c, "--common-amplitude", "common_amplitude", "broadband artifact shared by every type");
  add_output_options(gen, c);

  auto* aug = app.add_subcommand("augment", "synthesise forgeries with Fo-Mixup");
  AugmentOptions ao;
  aug->add_option("--in", ao.in, "dataset directory")->required()->check(CLI::ExistingDirectory);
  aug->add_option("--pairs", ao.pairs, "pairing of x_i and x_j")->check(CLI::IsMember({"random"}));
  aug->add_option("--split", ao.split, "split to augment")->check(CLI::IsMember({"train", "test_in", "test_cross"}));
  aug->add_option("--scorer", ao.scorer, "checkpoint ranking the bands")->check(CLI::ExistingFile);
  aug->add_option("--scores", ao.scores, "score table ranking the bands")->check(CLI::ExistingFile);
  add_config_options(aug, c);
  bind(aug, c, "--k", "k", "amplitude clusters");
  bind(aug, c, "--t", "t", "leading clusters eligible for mixing");
  bind(aug, c, "--sigma", "sigma", "std of the amplitude perturbation");
  bind(aug, c, "--lambda", "lambda", "fraction kept by confidence sampling");
  bind_flag(aug, c, "--invert-mask", "invert_mask", "mix inside the dominant band instead of outside");
  add_output_options(aug, c);

  auto* tr = app.add_subcommand("train", "train a detector");
  TrainOptions to;
  tr->add_option("--data", to.data, "dataset directory; generated from the config when omitted")
      ->check(CLI::ExistingDirectory);
  tr->add_option("--scorer", to.scorer, "checkpoint ranking the bands; a warm-up model is trained when omitted")
      ->check(CLI::ExistingFile);
  add_config_options(tr, c);
  bind(tr, c, "--mode", "mode", "baseline, fomixup, full, no-att, no-sphere, no-cs or cr-only");
  bind(tr, c, "--epochs", "epochs", "training epochs");
  bind(tr, c, "--lr", "lr", "learning rate");
  bind(tr, c, "--batch-size", "batch_size", "batch size");
  bind(tr, c, "--lambda", "lambda", "fraction kept by confidence sampling");
  bind_flag(tr, c, "--invert-mask", "invert_mask", "mix inside the dominant band instead of outside");
  add_output_options(tr, c);

  auto* ev = app.add_subcommand("eval", "report AUC on the test splits");
  std::string eval_ckpt, eval_data;
  ev->add_option("--ckpt", eval_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "dataset directory")->required()->check(CLI::ExistingDirectory);

  ProbeOptions po;
  auto add_probe = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--ckpt", po.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--data", po.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--split", po.split, "split to probe")->check(CLI::IsMember({"train", "test_in", "test_cross"}));
    add_config_options(sub, c);
    bind(sub, c, "--n-radial", "n_radial", "radial bins of the band grid");
    bind(sub, c, "--n-angular", "n_angular", "angular bins of the band grid");
    bind(sub, c, "--max-per-type", "probe_max_per_type", "forgeries probed per type, 0 for all");
    bind(sub, c, "--top-bands", "probe_top_bands", "segments in each top-band mask");
    add_output_options(sub, c);
    return sub;
  };
  auto* probe = add_probe("probe", "rank bands by the loss increase when ablated");
  auto* heat = add_probe("heatmap", "render per-type band heatmaps");
  heat->add_flag_callback("--raw", [&c] { c.flags["probe_subtract_baseline"] = "false"; },
                          "plot ablated losses instead of increases");

  auto active_help = [&]() {
    const auto subs = app.get_subcommands();
    return subs.empty() ? app.help() : subs.front()->help();
  };
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << active_help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << active_help();
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(c, types, args, out);
    if (aug->parsed()) return cmd_augment(c, ao, args, out, err);
    if (tr->parsed()) return cmd_train(c, to, args, out, err);
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_data, out);
    if (probe->parsed()) return cmd_probe(c, po, false, args, out, err);
    if (heat->parsed()) return cmd_probe(c, po, true, args, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace freqdebias
