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

// Experiment drivers: point coverage through downsampling, scale awareness
// of the module hierarchy, and grouping-method comparison.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pointsift/data.hpp"
#include "pointsift/nn.hpp"
#include "pointsift/training.hpp"

namespace pointsift {

// ---------------------------------------------------------------------------
// Coverage

struct CoverageRow {
  std::string variant;
  std::size_t stage = 0;       // 1-based down stage
  std::size_t input_size = 0;  // points entering the stage
  double mean_captured = 0.0;
  std::size_t min_captured = 0;
  std::size_t max_captured = 0;
  std::size_t full_scenes = 0;  // scenes where every input point was captured
  std::size_t scenes = 0;
};

struct CoverageVariant {
  std::string name;
  NetworkConfig config;
};

/// The same network with and without a local block before every SA stage.
/// Up-path blocks are removed since coverage only inspects the down path.
/// Empty `block_dims` keeps the down blocks of `base`.
inline std::vector<CoverageVariant> coverage_variants(const NetworkConfig& base,
                                                      const std::vector<std::size_t>& block_dims = {}) {
  NetworkConfig bq = base;
  for (auto& d : bq.down_pointsift) d.clear();
  for (auto& d : bq.up_pointsift) d.clear();
  bq.bottom_pointsift.clear();
  NetworkConfig ps = bq;
  ps.block_kind = BlockKind::pointsift;
  for (std::size_t s = 0; s < ps.down_pointsift.size(); ++s)
    ps.down_pointsift[s] = block_dims.empty() ? base.down_pointsift[s] : block_dims;
  return {{"ball_query", bq}, {"pointsift", ps}};
}

/// Captured-point counts per down stage over `scenes` toy scenes.
inline std::vector<CoverageRow> coverage_experiment(const std::vector<CoverageVariant>& variants, std::size_t scenes,
                                                    std::uint64_t seed) {
  std::vector<CoverageRow> rows;
  for (const auto& v : variants) {
    NetworkParams net = make_network(v.config);
    const std::size_t stages = net.down.size();
    std::vector<CoverageRow> vr(stages);
    for (std::size_t s = 0; s < stages; ++s) {
      vr[s].variant = v.name;
      vr[s].stage = s + 1;
      vr[s].input_size = v.config.level_points(s);
      vr[s].min_captured = std::numeric_limits<std::size_t>::max();
      vr[s].scenes = scenes;
    }
    for (std::size_t i = 0; i < scenes; ++i) {
      const Scene scene = generate_toy_scene(v.config.input_points, seed + i);
      for (std::size_t s = 0; s < stages; ++s) {
        const std::size_t got = influence_mask(scene.cloud, net, s + 1, seed + i).size();
        vr[s].mean_captured += static_cast<double>(got) / static_cast<double>(scenes);
        vr[s].min_captured = std::min(vr[s].min_captured, got);
        vr[s].max_captured = std::max(vr[s].max_captured, got);
        if (got == vr[s].input_size) ++vr[s].full_scenes;
      }
    }
    rows.insert(rows.end(), vr.begin(), vr.end());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Scale awareness

/// Log-uniform bin of `scale` over [scale_min, scale_max], clamped to the ends.
inline std::size_t scale_bin(double scale, double scale_min, double scale_max, std::size_t bins) {
  if (bins == 0) throw InvalidArgument("scale_bin: no bins");
  if (!(scale_min > 0.0) || !(scale_max > scale_min)) throw InvalidArgument("invalid scale range");
  const double t = std::log(scale / scale_min) / std::log(scale_max / scale_min);
  const double b = std::floor(t * static_cast<double>(bins));
  if (!(b > 0.0)) return 0;
  return std::min(bins - 1, static_cast<std::size_t>(b));
}

inline std::size_t argmax_index(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Fraction of samples whose most active module matches the scale bin.
/// activations[i][m] is module m's activation on sample i.
inline double alignment_rate(const std::vector<std::vector<double>>& activations, const std::vector<double>& scales,
                             double scale_min, double scale_max) {
  if (activations.size() != scales.size() || activations.empty())
    throw InvalidArgument("alignment_rate: need one activation vector per scale");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const std::size_t modules = activations[i].size();
    if (modules == 0) throw InvalidArgument("alignment_rate: no modules");
    if (argmax_index(activations[i]) == scale_bin(scales[i], scale_min, scale_max, modules)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scales.size());
}

/// Mean absolute output of every PointSIFT module, in hierarchy order.
inline std::vector<double> module_activations(NetworkParams& net, const PointCloud& cloud, std::uint64_t seed = 0) {
  if (net.config.block_kind != BlockKind::pointsift) throw InvalidArgument("module_activations: no PointSIFT modules");
  Tape tape;
  const ForwardTrace tr = network_forward(tape, cloud, net, seed);
  std::vector<double> out;
  for (const Var& b : tr.block_outputs) {
    const auto& v = b.value().data;
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    out.push_back(s / static_cast<double>(v.size()));
  }
  return out;
}

struct ScaleExperimentOptions {
  std::size_t train_samples = 200;
  std::size_t test_samples = 100;
  std::size_t epochs = 12;
  double scale_min = 0.1;
  double scale_max = 3.2;
  std::uint64_t seed = 11;
};

struct ScaleExperimentResult {
  double alignment_rate = 0.0;
  double chance = 0.0;
  std::vector<double> scales;
  std::vector<std::vector<double>> activations;
  std::vector<EpochLog> training;
};

/// Module activations of a trained network on labeled shapes of known scale.
inline ScaleExperimentResult scale_alignment(NetworkParams& net, const std::vector<PointCloud>& clouds,
                                             const std::vector<double>& scales, double scale_min, double scale_max) {
  if (clouds.size() != scales.size() || clouds.empty())
    throw InvalidArgument("scale_alignment: need one scale per cloud");
  ScaleExperimentResult r;
  for (std::size_t i = 0; i < clouds.size(); ++i) r.activations.push_back(module_activations(net, clouds[i], i));
  r.scales = scales;
  r.alignment_rate = alignment_rate(r.activations, r.scales, scale_min, scale_max);
  r.chance = 1.0 / static_cast<double>(r.activations.front().size());
  return r;
}

/// Trains on single-shape samples of log-uniform scale, then measures which
/// module responds most strongly to each held-out shape.
inline ScaleExperimentResult scale_awareness_experiment(const ExperimentConfig& cfg,
                                                        const ScaleExperimentOptions& opt) {
  const std::size_t n = cfg.network.input_points;
  std::vector<PointCloud> train_set, test_set;
  std::vector<double> test_scales;
  for (std::size_t i = 0; i < opt.train_samples; ++i)
    train_set.push_back(generate_scale_sample(n, opt.scale_min, opt.scale_max, opt.seed * 100003 + i).cloud);
  for (std::size_t i = 0; i < opt.test_samples; ++i) {
    Scene s = generate_scale_sample(n, opt.scale_min, opt.scale_max, opt.seed * 100003 + opt.train_samples + i);
    test_scales.push_back(s.specs.front().scale);
    test_set.push_back(std::move(s.cloud));
  }
  NetworkParams net = make_network(cfg.network);
  TrainOptions to;
  to.epochs = opt.epochs;
  auto training = train(net, cfg.train, train_set, to);
  ScaleExperimentResult r = scale_alignment(net, test_set, test_scales, opt.scale_min, opt.scale_max);
  r.training = std::move(training);
  return r;
}

// ---------------------------------------------------------------------------
// Grouping comparison

struct GroupingVariant {
  std::string name;
  NetworkConfig config;
  std::size_t parameters = 0;
};

inline std::size_t parameter_count(const NetworkConfig& cfg) { return make_network(cfg).parameter_count(); }

/// Scales channel widths so the parameter count lands as close as possible
/// to `target`.
inline NetworkConfig match_parameter_budget(NetworkConfig cfg, std::size_t target) {
  const std::vector<std::size_t> base = cfg.channel_widths;
  NetworkConfig best = cfg;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int step = 25; step <= 400; ++step) {
    const double m = step / 100.0;
    for (std::size_t i = 0; i < base.size(); ++i)
      cfg.channel_widths[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(base[i] * m)));
    const double gap = std::abs(static_cast<double>(parameter_count(cfg)) - static_cast<double>(target));
    if (gap < best_gap) {
      best_gap = gap;
      best = cfg;
    }
  }
  return best;
}

/// Baseline (SA/FP only), ball-query blocks and PointSIFT blocks on the
/// inner levels: none at the finest level, blocks before the SA stages and
/// after the FP stages of every other level. The PointSIFT variant keeps the
/// base widths; the others are rescaled to its parameter budget.
inline std::vector<GroupingVariant> grouping_variants(const NetworkConfig& base, double tolerance = 0.10) {
  const std::size_t stages = base.stage_sizes.size();
  NetworkConfig baseline = base;
  for (auto& d : baseline.down_pointsift) d.clear();
  for (auto& d : baseline.up_pointsift) d.clear();
  baseline.bottom_pointsift.clear();

  NetworkConfig ps = baseline;
  ps.block_kind = BlockKind::pointsift;
  for (std::size_t s = 1; s < stages; ++s) {
    const std::size_t w = base.channel_widths[s];
    ps.down_pointsift[s] = {w, w};
    ps.up_pointsift[s] = {w, w};
  }
  NetworkConfig bq = ps;
  bq.block_kind = BlockKind::ball_query;

  const std::size_t target = parameter_count(ps);
  std::vector<GroupingVariant> out;
  out.push_back({"baseline", match_parameter_budget(baseline, target), 0});
  out.push_back({"ball_query", match_parameter_budget(bq, target), 0});
  out.push_back({"pointsift", ps, target});
  for (auto& v : out) {
    v.parameters = parameter_count(v.config);
    const double rel = std::abs(static_cast<double>(v.parameters) - static_cast<double>(target)) /
                       static_cast<double>(target);
    if (rel > tolerance)
      throw InvalidArgument("cannot match parameter budget for variant '" + v.name + "' (" +
                            std::to_string(v.parameters) + " vs " + std::to_string(target) + ")");
  }
  return out;
}

struct CurvePoint {
  std::string variant;
  std::uint64_t seed = 0;
  EpochLog log;
};

/// Trains every variant with the same seed, data and optimizer settings and
/// records held-out accuracy after each epoch.
inline std::vector<CurvePoint> compare_grouping(const std::vector<GroupingVariant>& variants,
                                                const std::vector<PointCloud>& train_set,
                                                const std::vector<PointCloud>& eval_set, TrainConfig tcfg,
                                                std::size_t epochs, std::uint64_t seed) {
  std::vector<CurvePoint> curves;
  for (const auto& v : variants) {
    NetworkConfig cfg = v.config;
    cfg.seed = seed;
    tcfg.shuffle_seed = seed;
    NetworkParams net = make_network(cfg);
    TrainOptions to;
    to.epochs = epochs;
    to.eval_set = &eval_set;
    for (const auto& e : train(net, tcfg, train_set, to)) curves.push_back({v.name, seed, e});
  }
  return curves;
}

}  // namespace pointsift
