// Copyright 2026 The pointsift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// pointsift_cli: data generation, training, evaluation, gradient checks and
// the coverage / scale / grouping experiments.
//
// Exit codes: 0 success, 2 usage or configuration, 3 runtime, 4 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "pointsift/checkpoint.hpp"
#include "pointsift/config.hpp"
#include "pointsift/dataset.hpp"
#include "pointsift/experiments.hpp"
#include "pointsift/gradcheck_suite.hpp"

namespace {

using namespace pointsift;

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;
constexpr int kCheckFailed = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ExperimentConfig read_config(const std::string& path) {
  try {
    return load_config(path);
  } catch (const ParseError& e) {
    throw UsageError("config '" + path + "': " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
}

std::size_t resolve_threads(std::optional<std::size_t> requested, bool deterministic) {
  if (requested) return std::max<std::size_t>(1, *requested);
  if (deterministic) return 1;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Network config for a checkpoint: `--config` if given, else the sidecar
/// written by `train`.
ExperimentConfig checkpoint_config(const std::string& ckpt, const std::string& config) {
  return read_config(config.empty() ? ckpt + ".cfg" : config);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::string kind = "toy";
  GenDataOptions opt;
};

int run_gen_data(const GenDataArgs& a) {
  GenDataOptions opt = a.opt;
  opt.kind = a.kind == "scale" ? DatasetKind::scale : DatasetKind::toy;
  if (!(opt.scale_min > 0.0) || opt.scale_min > opt.scale_max) throw UsageError("invalid scale range");
  try {
    write_dataset(a.out, opt);
  } catch (const InvalidArgument&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  std::printf("wrote %zu scenes to %s\n", opt.scenes, a.out.c_str());
  return kOk;
}

struct TrainArgs {
  std::string config, data, out, log;
  std::size_t epochs = 10;
  bool deterministic = false;
  std::optional<std::size_t> threads;
};

int run_train(const TrainArgs& a) {
  const ExperimentConfig cfg = read_config(a.config);
  const Dataset data = load_dataset(a.data);
  const std::size_t threads = resolve_threads(a.threads, a.deterministic);
  NetworkParams net = make_network(cfg.network);
  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  std::string log = "epoch,step,loss,accuracy,miou\n";
  TrainOptions to;
  to.epochs = a.epochs;
  const auto rows = train(net, cfg.train, data.clouds, to);
  for (const auto& e : rows)
    log += std::to_string(e.epoch) + "," + std::to_string(e.step) + "," + fmt(e.loss) + "," + fmt(e.accuracy) + "," +
           fmt(e.miou) + "\n";
  save_checkpoint(net, a.out);
  write_text(a.out + ".cfg", format_config(cfg));
  write_text(log_path, log);
  const MetricsReport m = evaluate(net, data.clouds, threads);
  const double loss = rows.empty() ? dataset_loss(net, data.clouds) : rows.back().loss;
  std::printf("final epoch=%zu loss=%.6f accuracy=%.6f miou=%.6f\n", rows.empty() ? 0 : rows.back().epoch, loss,
              m.overall_accuracy, m.mean_iou);
  return kOk;
}

struct EvalArgs {
  std::string ckpt, config, data, pred, out;
  std::optional<std::size_t> classes;
  std::optional<std::size_t> threads;
};

int run_eval(const EvalArgs& a) {
  if (a.ckpt.empty() == a.pred.empty()) throw UsageError("eval needs exactly one of --ckpt or --pred");
  const Dataset data = load_dataset(a.data);
  MetricsReport m;
  if (!a.ckpt.empty()) {
    const ExperimentConfig cfg = checkpoint_config(a.ckpt, a.config);
    NetworkParams net = load_checkpoint(a.ckpt, cfg.network);
    m = evaluate(net, data.clouds, resolve_threads(a.threads, true));
  } else {
    // Predictions are XYZL files named as in the data manifest.
    std::vector<std::vector<int>> pred;
    int top = 0;
    for (std::size_t i = 0; i < data.entries.size(); ++i) {
      pred.push_back(load_xyzl((std::filesystem::path(a.pred) / data.entries[i].filename).string()).labels);
      if (pred.back().size() != data.clouds[i].size())
        throw std::runtime_error("prediction '" + data.entries[i].filename + "' has a different point count");
      for (int l : pred.back()) top = std::max(top, l);
      for (int l : data.clouds[i].labels) top = std::max(top, l);
    }
    ConfusionMatrix cm(a.classes.value_or(static_cast<std::size_t>(top) + 1));
    for (std::size_t i = 0; i < pred.size(); ++i) cm.add(data.clouds[i].labels, pred[i]);
    m = compute_metrics(cm);
  }
  std::string csv = "metric,value\naccuracy," + fmt(m.overall_accuracy) + "\nmiou," + fmt(m.mean_iou) + "\n";
  for (std::size_t k = 0; k < m.per_class_iou.size(); ++k)
    csv += "iou_" + std::to_string(k) + "," + (m.per_class_iou[k] ? fmt(*m.per_class_iou[k]) : "nan") + "\n";
  write_text(a.out, csv);
  std::printf("accuracy=%.6f miou=%.6f points=%llu\n", m.overall_accuracy, m.mean_iou,
              static_cast<unsigned long long>(m.points));
  return kOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::size_t instances = 10;
  std::string out;
};

int run_gradcheck(const GradcheckArgs& a) {
  GradcheckSuiteOptions opt;
  opt.instances = a.instances;
  const auto rows = run_gradcheck_suite(a.seed, opt);
  std::string csv = "op,max_rel_error,worst,instances,rejected,entries\n";
  const OpGradcheck* worst = nullptr;
  for (const auto& r : rows) {
    std::printf("%-22s max_rel_error=%.3e instances=%zu rejected=%zu\n", r.op.c_str(), r.max_rel_error, r.instances,
                r.rejected);
    csv += r.op + "," + fmt(r.max_rel_error) + "," + r.worst + "," + std::to_string(r.instances) + "," +
           std::to_string(r.rejected) + "," + std::to_string(r.entries) + "\n";
    if (!worst || r.max_rel_error > worst->max_rel_error) worst = &r;
  }
  if (!a.out.empty()) write_text(a.out, csv);
  std::printf("worst: %s %s rel_error=%.3e\n", worst->op.c_str(), worst->worst.c_str(), worst->max_rel_error);
  if (!(worst->max_rel_error < ad::kGradcheckTolerance)) {
    std::fprintf(stderr, "gradient check failed: %s at %s, relative error %.3e >= %.0e\n", worst->op.c_str(),
                 worst->worst.c_str(), worst->max_rel_error, ad::kGradcheckTolerance);
    return kCheckFailed;
  }
  return kOk;
}

struct CoverageArgs {
  std::string config, out;
  std::size_t scenes = 20;
  std::uint64_t seed = 1000;
};

int run_coverage(const CoverageArgs& a) {
  const ExperimentConfig cfg = read_config(a.config);
  const auto rows = coverage_experiment(coverage_variants(cfg.network), a.scenes, a.seed);
  std::string csv = "variant,stage,input_size,mean_captured,min_captured,max_captured,full_scenes,scenes\n";
  bool full = true;
  for (const auto& r : rows) {
    std::printf("%-10s stage %zu: captured %.2f of %zu (min %zu, max %zu, full in %zu/%zu scenes)\n",
                r.variant.c_str(), r.stage, r.mean_captured, r.input_size, r.min_captured, r.max_captured,
                r.full_scenes, r.scenes);
    csv += r.variant + "," + std::to_string(r.stage) + "," + std::to_string(r.input_size) + "," +
           fmt(r.mean_captured) + "," + std::to_string(r.min_captured) + "," + std::to_string(r.max_captured) + "," +
           std::to_string(r.full_scenes) + "," + std::to_string(r.scenes) + "\n";
    if (r.variant == "pointsift" && r.full_scenes != r.scenes) full = false;
  }
  if (!a.out.empty()) write_text(a.out, csv);
  if (!full) {
    std::fprintf(stderr, "pointsift variant left points uncaptured\n");
    return kCheckFailed;
  }
  return kOk;
}

struct ScaleArgs {
  std::string ckpt, config, data, out;
  double scale_min = 0.1;
  double scale_max = 3.2;
};

int run_scale_exp(const ScaleArgs& a) {
  if (!(a.scale_min > 0.0) || !(a.scale_min < a.scale_max)) throw UsageError("invalid scale range");
  const ExperimentConfig cfg = checkpoint_config(a.ckpt, a.config);
  NetworkParams net = load_checkpoint(a.ckpt, cfg.network);
  const Dataset data = load_dataset(a.data);
  std::vector<double> scales;
  for (const auto& e : data.entries) {
    if (e.scales.size() != 1) throw UsageError("scale-exp needs single-shape samples (gen-data --kind scale)");
    scales.push_back(e.scales.front());
  }
  const auto r = scale_alignment(net, data.clouds, scales, a.scale_min, a.scale_max);
  const std::size_t modules = r.activations.front().size();
  std::string csv = "filename,scale,bin,argmax";
  for (std::size_t m = 0; m < modules; ++m) csv += ",module_" + std::to_string(m);
  csv += "\n";
  for (std::size_t i = 0; i < scales.size(); ++i) {
    csv += data.entries[i].filename + "," + fmt(scales[i]) + "," +
           std::to_string(scale_bin(scales[i], a.scale_min, a.scale_max, modules)) + "," +
           std::to_string(argmax_index(r.activations[i]));
    for (double v : r.activations[i]) csv += "," + fmt(v);
    csv += "\n";
  }
  if (!a.out.empty()) write_text(a.out, csv);
  std::printf("alignment_rate=%.6f chance=%.6f modules=%zu samples=%zu\n", r.alignment_rate, r.chance, modules,
              scales.size());
  return kOk;
}

struct GroupingArgs {
  std::string config, data, eval, out;
  std::size_t epochs = 10;
  std::vector<std::uint64_t> seeds{1};
};

int run_compare_grouping(const GroupingArgs& a) {
  const ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : read_config(a.config);
  const Dataset data = load_dataset(a.data);
  std::vector<PointCloud> train_set = data.clouds, eval_set;
  if (a.eval.empty()) {
    // Hold out the last quarter of the scenes.
    const std::size_t held = std::max<std::size_t>(1, train_set.size() / 4);
    if (train_set.size() < 2) throw UsageError("compare-grouping needs at least 2 scenes without --eval");
    eval_set.assign(train_set.end() - static_cast<std::ptrdiff_t>(held), train_set.end());
    train_set.resize(train_set.size() - held);
  } else {
    eval_set = load_dataset(a.eval).clouds;
  }
  const auto variants = grouping_variants(cfg.network);
  for (const auto& v : variants) std::printf("%-10s parameters=%zu\n", v.name.c_str(), v.parameters);
  std::string csv = "variant,seed,epoch,step,loss,accuracy,miou\n";
  for (std::uint64_t seed : a.seeds) {
    for (const auto& c : compare_grouping(variants, train_set, eval_set, cfg.train, a.epochs, seed)) {
      csv += c.variant + "," + std::to_string(c.seed) + "," + std::to_string(c.log.epoch) + "," +
             std::to_string(c.log.step) + "," + fmt(c.log.loss) + "," + fmt(c.log.accuracy) + "," +
             fmt(c.log.miou) + "\n";
      if (c.log.epoch == a.epochs)
        std::printf("seed %llu %-10s final accuracy=%.6f miou=%.6f\n", static_cast<unsigned long long>(seed),
                    c.variant.c_str(), c.log.accuracy, c.log.miou);
    }
  }
  if (!a.out.empty()) write_text(a.out, csv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PointSIFT point-cloud segmentation toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--scenes", gen.opt.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  g->add_option("--points", gen.opt.points, "Points per scene")->check(CLI::Range(8, 1 << 24));
  g->add_option("--classes", gen.opt.classes, "Classes (toy scenes: 1 to 3)")->check(CLI::Range(1, 3));
  g->add_option("--seed", gen.opt.seed, "Seed of scene 0; scene i uses seed + i");
  g->add_option("--scale-min", gen.opt.scale_min, "Smallest shape scale");
  g->add_option("--scale-max", gen.opt.scale_max, "Largest shape scale");
  g->add_option("--kind", gen.kind, "toy (multi-object scenes) or scale (one shape per file)")
      ->check(CLI::IsMember({"toy", "scale"}));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a network");
  t->add_option("--config", tr.config, "Configuration file")->required();
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--log", tr.log, "CSV log path (default: <out>.log.csv)");
  t->add_flag("--deterministic", tr.deterministic, "Single-threaded unless --threads is given");
  t->add_option("--threads", tr.threads, "Worker threads for evaluation");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a prediction set");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint");
  e->add_option("--config", ev.config, "Configuration (default: <ckpt>.cfg)");
  e->add_option("--pred", ev.pred, "Directory of predicted XYZL files, named as in the manifest");
  e->add_option("--classes", ev.classes, "Class count for --pred (default: largest label + 1)");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--out", ev.out, "Metrics CSV")->required();
  e->add_option("--threads", ev.threads, "Worker threads");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every operation");
  c->add_option("--seed", gc.seed, "Seed");
  c->add_option("--instances", gc.instances, "Random instances per operation")->check(CLI::PositiveNumber);
  c->add_option("--out", gc.out, "Per-operation CSV");
  std::optional<std::size_t> unused_threads;
  c->add_option("--threads", unused_threads, "Accepted for uniformity; the check is serial");

  CoverageArgs cv;
  auto* v = app.add_subcommand("coverage", "Captured points per down stage, with and without PointSIFT blocks");
  v->add_option("--config", cv.config, "Configuration file")->required();
  v->add_option("--scenes", cv.scenes, "Random scenes")->check(CLI::PositiveNumber);
  v->add_option("--seed", cv.seed, "Seed of scene 0");
  v->add_option("--out", cv.out, "CSV of per-stage counts");
  v->add_option("--threads", unused_threads, "Accepted for uniformity; the study is serial");

  ScaleArgs sc;
  auto* s = app.add_subcommand("scale-exp", "Most active PointSIFT module versus shape scale");
  s->add_option("--ckpt", sc.ckpt, "Checkpoint")->required();
  s->add_option("--config", sc.config, "Configuration (default: <ckpt>.cfg)");
  s->add_option("--data", sc.data, "Dataset of single shapes (gen-data --kind scale)")->required();
  s->add_option("--scale-min", sc.scale_min, "Lower end of the scale range");
  s->add_option("--scale-max", sc.scale_max, "Upper end of the scale range");
  s->add_option("--out", sc.out, "Per-sample CSV");
  s->add_option("--threads", unused_threads, "Accepted for uniformity; the study is serial");

  GroupingArgs gr;
  auto* r = app.add_subcommand("compare-grouping", "Train baseline, ball-query and PointSIFT variants");
  r->add_option("--data", gr.data, "Training dataset directory")->required();
  r->add_option("--eval", gr.eval, "Held-out dataset (default: last quarter of --data)");
  r->add_option("--epochs", gr.epochs, "Epochs")->check(CLI::PositiveNumber);
  r->add_option("--config", gr.config, "Base configuration");
  r->add_option("--seeds", gr.seeds, "Seeds")->delimiter(',');
  r->add_option("--out", gr.out, "CSV of accuracy curves");
  r->add_option("--threads", unused_threads, "Accepted for uniformity; training is serial");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (*g) return run_gen_data(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*c) return run_gradcheck(gc);
    if (*v) return run_coverage(cv);
    if (*s) return run_scale_exp(sc);
    if (*r) return run_compare_grouping(gr);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  } catch (const InvalidArgument& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  } catch (const DivergenceError& err) {
    std::fprintf(stderr, "diverged: %s\n", err.what());
    return kRuntime;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kRuntime;
  }
  return kUsage;
}
