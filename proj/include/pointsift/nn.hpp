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

// Learnable building blocks: orientation-encoding units, the PointSIFT
// module, set abstraction, feature propagation and the full
// downsample/upsample segmentation network.

#pragma once

#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pointsift/autodiff.hpp"
#include "pointsift/config.hpp"
#include "pointsift/geometry.hpp"

namespace pointsift {

using ad::Parameter;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

// ---------------------------------------------------------------------------
// Parameter containers

/// A shared linear layer.
struct Dense {
  Parameter W;  // din x dout
  Parameter b;  // dout

  std::size_t in_dim() const { return W.value.shape[0]; }
  std::size_t out_dim() const { return W.value.shape[1]; }
};

inline Dense make_dense(const std::string& prefix, std::size_t din, std::size_t dout,
                        std::mt19937_64& rng) {
  Dense d{Parameter(prefix + ".W", Tensor(Shape{din, dout})), Parameter(prefix + ".b", Tensor(Shape{dout}))};
  ad::init_glorot_uniform(d.W, rng);
  return d;
}

inline Var dense_forward(Tape& tape, Var x, Dense& layer, bool activation) {
  Var y = ad::linear(x, tape.param(layer.W), tape.param(layer.b));
  return activation ? ad::relu(y) : y;
}

inline Var mlp_forward(Tape& tape, Var x, std::vector<Dense>& layers) {
  for (auto& l : layers) x = dense_forward(tape, x, l, true);
  return x;
}

struct OEUnitParams {
  Parameter Wx, bx;  // 2 x d_in x d_out, d_out
  Parameter Wy, by;  // 2 x d_out x d_out, d_out
  Parameter Wz, bz;  // 2 x d_out x d_out, d_out
  double radius = 0.1;

  std::size_t in_dim() const { return Wx.value.shape[1]; }
  std::size_t out_dim() const { return Wx.value.shape[2]; }
};

inline OEUnitParams make_oe_unit(const std::string& prefix, std::size_t din, std::size_t dout,
                                 double radius, std::mt19937_64& rng) {
  if (!(radius > 0.0)) throw InvalidArgument("OE unit radius must be positive");
  OEUnitParams u;
  u.radius = radius;
  u.Wx = Parameter(prefix + ".Wx", Tensor(Shape{2, din, dout}));
  u.bx = Parameter(prefix + ".bx", Tensor(Shape{dout}));
  u.Wy = Parameter(prefix + ".Wy", Tensor(Shape{2, dout, dout}));
  u.by = Parameter(prefix + ".by", Tensor(Shape{dout}));
  u.Wz = Parameter(prefix + ".Wz", Tensor(Shape{2, dout, dout}));
  u.bz = Parameter(prefix + ".bz", Tensor(Shape{dout}));
  ad::init_glorot_uniform(u.Wx, rng);
  ad::init_glorot_uniform(u.Wy, rng);
  ad::init_glorot_uniform(u.Wz, rng);
  return u;
}

struct PointSiftParams {
  std::vector<OEUnitParams> oe_units;
  Dense fusion;  // (sum of unit widths) x d_out
  bool fusion_activation = true;

  std::size_t in_dim() const { return oe_units.front().in_dim(); }
  std::size_t out_dim() const { return fusion.out_dim(); }
};

/// Units chain d_in -> dims[0] -> dims[1] ...; the fusion maps the
/// concatenated unit outputs to `d_out`.
inline PointSiftParams make_pointsift(const std::string& prefix, std::size_t din,
                                      const std::vector<std::size_t>& dims, std::size_t dout,
                                      double radius, bool fusion_activation, std::mt19937_64& rng) {
  if (dims.empty()) throw InvalidArgument("a PointSIFT module needs at least one OE unit");
  PointSiftParams p;
  p.fusion_activation = fusion_activation;
  std::size_t d = din, total = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    p.oe_units.push_back(make_oe_unit(prefix + ".oe" + std::to_string(i), d, dims[i], radius, rng));
    d = dims[i];
    total += dims[i];
  }
  p.fusion = make_dense(prefix + ".fusion", total, dout, rng);
  return p;
}

/// Ball-query grouping followed by a point-wise convolution over the
/// distance-ordered neighbor slots (one weight slice per slot).
struct BallConvParams {
  std::vector<Dense> convs;  // conv i: (neighbors * d_i) x d_{i+1}
  double radius = 0.1;
  std::size_t neighbors = 8;

  std::size_t in_dim() const { return convs.front().in_dim() / neighbors; }
  std::size_t out_dim() const { return convs.back().out_dim(); }
};

struct LocalBlockParams {
  BlockKind kind = BlockKind::pointsift;
  PointSiftParams pointsift;
  BallConvParams ballconv;

  std::size_t out_dim() const {
    return kind == BlockKind::pointsift ? pointsift.out_dim() : ballconv.out_dim();
  }
};

inline LocalBlockParams make_block(const std::string& prefix, const NetworkConfig& cfg, std::size_t din,
                                   const std::vector<std::size_t>& dims, double radius,
                                   std::mt19937_64& rng) {
  LocalBlockParams b;
  b.kind = cfg.block_kind;
  if (b.kind == BlockKind::pointsift) {
    b.pointsift = make_pointsift(prefix + ".pointsift", din, dims, din, radius, cfg.fusion_activation, rng);
  } else {
    b.ballconv.radius = radius;
    b.ballconv.neighbors = cfg.ball_block_neighbors;
    std::size_t d = din;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      b.ballconv.convs.push_back(
          make_dense(prefix + ".ballconv.conv" + std::to_string(i), cfg.ball_block_neighbors * d, dims[i], rng));
      d = dims[i];
    }
  }
  return b;
}

struct SAParams {
  std::size_t n_centroids = 0;
  double radius = 0.2;
  std::size_t max_k = 32;
  std::vector<Dense> mlp;  // first layer input: feature dim + 3
};

struct FPParams {
  std::vector<Dense> mlp;  // first layer input: interpolated dim + skip dim
};

struct DownStage {
  std::optional<LocalBlockParams> block;
  SAParams sa;
};

struct UpStage {
  FPParams fp;
  std::optional<LocalBlockParams> block;
};

struct NetworkParams {
  NetworkConfig config;
  std::vector<Dense> input_mlp;
  std::vector<DownStage> down;  // down[s] maps level s to level s+1
  std::optional<LocalBlockParams> bottom;
  std::vector<UpStage> up;  // up[s] maps level s+1 back to level s
  Dense classifier;

  /// Visits every parameter in construction order.
  template <class F>
  void for_each_parameter(F&& f) {
    auto dense = [&](Dense& d) {
      f(d.W);
      f(d.b);
    };
    auto block = [&](std::optional<LocalBlockParams>& b) {
      if (!b) return;
      if (b->kind == BlockKind::pointsift) {
        for (auto& u : b->pointsift.oe_units) {
          f(u.Wx), f(u.bx), f(u.Wy), f(u.by), f(u.Wz), f(u.bz);
        }
        dense(b->pointsift.fusion);
      } else {
        for (auto& c : b->ballconv.convs) dense(c);
      }
    };
    for (auto& d : input_mlp) dense(d);
    for (auto& s : down) {
      block(s.block);
      for (auto& d : s.sa.mlp) dense(d);
    }
    block(bottom);
    for (std::size_t s = up.size(); s-- > 0;) {
      for (auto& d : up[s].fp.mlp) dense(d);
      block(up[s].block);
    }
    dense(classifier);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for_each_parameter([&](Parameter& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&](Parameter& p) { n += p.value.size(); });
    return n;
  }

  void zero_grad() {
    for_each_parameter([](Parameter& p) { p.zero_grad(); });
  }
};

/// Builds and initializes a network; initialization is a pure function of
/// the configuration (including its seed).
inline NetworkParams make_network(const NetworkConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  NetworkParams net;
  net.config = cfg;
  const std::size_t stages = cfg.stage_sizes.size();
  const auto& w = cfg.channel_widths;

  std::size_t d = cfg.input_dim();
  for (std::size_t i = 0; i < cfg.input_mlp_layers; ++i) {
    net.input_mlp.push_back(make_dense("input.mlp" + std::to_string(i), d, w[0], rng));
    d = w[0];
  }
  std::vector<std::size_t> skip_dims(stages);
  for (std::size_t s = 0; s < stages; ++s) {
    const std::string prefix = "down" + std::to_string(s + 1);
    DownStage stage;
    if (!cfg.down_pointsift[s].empty()) {
      stage.block = make_block(prefix, cfg, d, cfg.down_pointsift[s], cfg.oe_radii[s], rng);
      d = stage.block->out_dim();
    }
    skip_dims[s] = d;
    stage.sa.n_centroids = cfg.stage_sizes[s];
    stage.sa.radius = cfg.sa_radii[s];
    stage.sa.max_k = cfg.max_k;
    d += 3;
    for (std::size_t i = 0; i < cfg.sa_mlp_layers; ++i) {
      stage.sa.mlp.push_back(make_dense(prefix + ".sa.mlp" + std::to_string(i), d, w[s + 1], rng));
      d = w[s + 1];
    }
    net.down.push_back(std::move(stage));
  }
  if (!cfg.bottom_pointsift.empty()) {
    net.bottom = make_block("bottom", cfg, d, cfg.bottom_pointsift, cfg.oe_radii[stages], rng);
    d = net.bottom->out_dim();
  }
  net.up.resize(stages);
  for (std::size_t s = stages; s-- > 0;) {
    const std::string prefix = "up" + std::to_string(s + 1);
    auto& stage = net.up[s];
    d += skip_dims[s];
    for (std::size_t i = 0; i < cfg.fp_mlp_layers; ++i) {
      stage.fp.mlp.push_back(make_dense(prefix + ".fp.mlp" + std::to_string(i), d, w[s], rng));
      d = w[s];
    }
    if (!cfg.up_pointsift[s].empty()) {
      stage.block = make_block(prefix, cfg, d, cfg.up_pointsift[s], cfg.oe_radii[s], rng);
      d = stage.block->out_dim();
    }
  }
  net.classifier = make_dense("classifier", d, cfg.num_classes, rng);
  return net;
}

// ---------------------------------------------------------------------------
// Forward operators

/// Octant neighbor table: row i holds the 8 S8N neighbors of point i in
/// octant-code order.
inline std::vector<std::uint32_t> s8n_table(const SpatialIndex& index, double radius) {
  std::vector<std::uint32_t> out(index.size() * 8);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto nb = s8n_search(index, i, radius);
    std::copy(nb.neighbor_indices.begin(), nb.neighbor_indices.end(), out.begin() + static_cast<std::ptrdiff_t>(i * 8));
  }
  return out;
}

/// Orientation-encoding unit. `index` must cover the positions the features
/// belong to, with cell size equal to the unit's radius for a 27-cell scan.
inline Var oe_unit_forward(Tape& tape, const SpatialIndex& index, Var features, OEUnitParams& p) {
  const Shape& fs = features.shape();
  const std::size_t n = index.size();
  if (fs.size() != 2 || fs[0] != n || fs[1] != p.in_dim())
    throw InvalidArgument("oe_unit_forward: features " + ad::shape_string(fs) + " do not match " +
                          std::to_string(n) + " points x " + std::to_string(p.in_dim()) + " channels");
  const std::size_t dout = p.out_dim();
  // Octant code o = x + 2y + 4z, so row n*8 + o is the cube cell [n][z][y][x]
  // and each stage collapses the fastest remaining spatial axis.
  Var cube = ad::gather_rows(features, s8n_table(index, p.radius));
  Var v = ad::reshape(cube, Shape{n * 4, 2, 1, p.in_dim()});
  v = ad::relu(ad::axis_conv2(v, tape.param(p.Wx), tape.param(p.bx)));
  v = ad::reshape(v, Shape{n * 2, 2, 1, dout});
  v = ad::relu(ad::axis_conv2(v, tape.param(p.Wy), tape.param(p.by)));
  v = ad::reshape(v, Shape{n, 2, 1, dout});
  v = ad::relu(ad::axis_conv2(v, tape.param(p.Wz), tape.param(p.bz)));
  return ad::reshape(v, Shape{n, dout});
}

/// Stacked OE units, concatenated and fused by a point-wise convolution.
/// Point count is preserved. Unit outputs are appended to `unit_outputs`.
inline Var pointsift_forward(Tape& tape, std::span<const Vec3> positions, Var features,
                             PointSiftParams& p, std::vector<Var>* unit_outputs = nullptr) {
  std::map<double, SpatialIndex> indices;
  std::vector<Var> outs;
  Var x = features;
  for (auto& unit : p.oe_units) {
    auto it = indices.find(unit.radius);
    if (it == indices.end()) it = indices.emplace(unit.radius, SpatialIndex(positions, unit.radius)).first;
    x = oe_unit_forward(tape, it->second, x, unit);
    outs.push_back(x);
  }
  if (unit_outputs) unit_outputs->insert(unit_outputs->end(), outs.begin(), outs.end());
  Var cat = outs.size() == 1 ? outs.front() : ad::concat_channels(outs);
  return dense_forward(tape, cat, p.fusion, p.fusion_activation);
}

/// Ball-query neighbors of every point, nearest first (ties by index),
/// padded with the point itself.
inline std::vector<std::uint32_t> ball_group_table(std::span<const Vec3> positions, double radius,
                                                   std::size_t k) {
  SpatialIndex index(positions, radius);
  std::vector<std::uint32_t> out;
  out.reserve(positions.size() * k);
  std::vector<std::pair<double, std::uint32_t>> cand;
  const double r2 = radius * radius;
  for (std::uint32_t i = 0; i < positions.size(); ++i) {
    cand.clear();
    index.for_each_candidate(positions[i], radius, [&](std::uint32_t j) {
      const double d2 = squared_distance(positions[j], positions[i]);
      if (d2 <= r2) cand.emplace_back(d2, j);
    });
    std::sort(cand.begin(), cand.end());
    for (std::size_t s = 0; s < k; ++s) out.push_back(s < cand.size() ? cand[s].second : i);
  }
  return out;
}

inline Var ballconv_forward(Tape& tape, std::span<const Vec3> positions, Var features, BallConvParams& p) {
  const std::size_t n = positions.size();
  const auto table = ball_group_table(positions, p.radius, p.neighbors);
  Var x = features;
  for (auto& conv : p.convs) {
    const std::size_t d = x.shape().back();
    Var grouped = ad::reshape(ad::gather_rows(x, table), Shape{n, p.neighbors * d});
    x = dense_forward(tape, grouped, conv, true);
  }
  return x;
}

inline Var block_forward(Tape& tape, std::span<const Vec3> positions, Var features, LocalBlockParams& b,
                         std::vector<Var>* unit_outputs = nullptr) {
  if (b.kind == BlockKind::pointsift) return pointsift_forward(tape, positions, features, b.pointsift, unit_outputs);
  return ballconv_forward(tape, positions, features, b.ballconv);
}

/// How the first farthest-point-sampling centroid is chosen.
struct FpsStart {
  bool canonical = true;  // lexicographically smallest point
  std::uint64_t seed = 0;  // used when !canonical
};

inline std::vector<std::uint32_t> sample_centroids(std::span<const Vec3> positions, std::size_t m, FpsStart start) {
  if (start.canonical) return farthest_point_sampling_from(positions, m, canonical_start(positions));
  return farthest_point_sampling(positions, m, start.seed);
}

/// Ball-query group of one centroid: the max_k lowest-index points within
/// `radius`, with the centroid forced into slot 0 when the cap excluded it,
/// padded by repeating slot 0.
inline std::vector<std::uint32_t> sa_group(const SpatialIndex& index, std::uint32_t centroid, double radius,
                                           std::size_t max_k) {
  NeighborList nl = ball_query(index, index.positions()[centroid], radius, max_k);
  std::vector<std::uint32_t> group(nl.indices.begin(), nl.indices.begin() + static_cast<std::ptrdiff_t>(nl.found));
  if (std::find(group.begin(), group.end(), centroid) == group.end()) {
    group.insert(group.begin(), centroid);
    if (group.size() > max_k) group.pop_back();
  }
  group.resize(max_k, group.front());
  return group;
}

struct SAOutput {
  std::vector<std::uint32_t> centroid_indices;
  std::vector<Vec3> centroids;
  Var features;  // M x d'
};

/// Set abstraction: FPS centroids, ball-query grouping with relative
/// offsets appended, shared MLP, max pool over each group.
inline SAOutput sa_forward(Tape& tape, std::span<const Vec3> positions, Var features, SAParams& p,
                           FpsStart start) {
  const std::size_t n = positions.size();
  if (p.n_centroids > n)
    throw InvalidArgument("sa_forward: " + std::to_string(p.n_centroids) + " centroids requested from " +
                          std::to_string(n) + " points");
  if (features.shape().size() != 2 || features.shape()[0] != n)
    throw InvalidArgument("sa_forward: feature rows do not match point count");
  SAOutput out;
  out.centroid_indices = sample_centroids(positions, p.n_centroids, start);
  const std::size_t m = out.centroid_indices.size(), k = p.max_k;
  SpatialIndex index(positions, p.radius);
  std::vector<std::uint32_t> groups;
  groups.reserve(m * k);
  Tensor offsets(Shape{m * k, 3});
  for (std::size_t c = 0; c < m; ++c) {
    const auto ci = out.centroid_indices[c];
    out.centroids.push_back(positions[ci]);
    const auto g = sa_group(index, ci, p.radius, k);
    for (std::size_t s = 0; s < k; ++s) {
      for (int a = 0; a < 3; ++a) offsets[(c * k + s) * 3 + a] = positions[g[s]][a] - positions[ci][a];
      groups.push_back(g[s]);
    }
  }
  Var grouped = ad::concat_channels({ad::gather_rows(features, std::move(groups)), tape.constant(std::move(offsets))});
  Var h = mlp_forward(tape, grouped, p.mlp);
  const std::size_t dout = h.shape().back();
  out.features = ad::group_max_pool(ad::reshape(h, Shape{m, k, dout}));
  return out;
}

/// Feature propagation: inverse squared-distance interpolation over the 3
/// nearest sparse points, concatenated with skip features, then a unit MLP.
inline Var fp_forward(Tape& tape, std::span<const Vec3> dense, std::span<const Vec3> sparse, Var sparse_features,
                      std::optional<Var> skip, FPParams& p, double cell_size) {
  if (sparse.empty()) throw InvalidArgument("fp_forward: no sparse points");
  if (sparse_features.shape().size() != 2 || sparse_features.shape()[0] != sparse.size())
    throw InvalidArgument("fp_forward: sparse feature rows do not match sparse point count");
  SpatialIndex index(sparse, cell_size);
  const std::size_t k = std::min<std::size_t>(3, sparse.size());
  std::vector<std::uint32_t> idx;
  std::vector<double> weights;
  idx.reserve(dense.size() * k);
  weights.reserve(dense.size() * k);
  for (const auto& q : dense) {
    const auto st = interpolation_weights(index, q, 3);
    idx.insert(idx.end(), st.indices.begin(), st.indices.end());
    weights.insert(weights.end(), st.weights.begin(), st.weights.end());
  }
  Var x = ad::weighted_gather(sparse_features, std::move(idx), std::move(weights), k);
  if (skip) {
    if (skip->shape()[0] != dense.size()) throw InvalidArgument("fp_forward: skip rows do not match dense points");
    x = ad::concat_channels({x, *skip});
  }
  return mlp_forward(tape, x, p.mlp);
}

// ---------------------------------------------------------------------------
// Network

struct ForwardOptions {
  /// Stop after this many down stages (0 = after the input MLP). Logits are
  /// left invalid when stopping early.
  std::optional<std::size_t> stop_after_stage;
};

struct ForwardTrace {
  Var input;            // raw input features (differentiable leaf)
  Var input_embedding;  // output of the input MLP
  std::vector<std::vector<Vec3>> level_positions;
  std::vector<Var> stage_inputs;  // features entering down stage s
  std::vector<Var> sa_outputs;    // output of down stage s
  std::vector<Var> block_outputs;  // local blocks in hierarchy order: down, bottom, up
  Var logits;
};

/// Input features per point: coordinates (and RGB), or with
/// relative_coords_only just RGB or a constant 1.
inline Tensor input_features(const PointCloud& cloud, const NetworkConfig& cfg) {
  const std::size_t n = cloud.size(), d = cfg.input_dim();
  if (cfg.use_rgb && !cloud.has_colors()) throw InvalidArgument("use_rgb requires a colored cloud");
  Tensor t(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = t.data.data() + i * d;
    std::size_t c = 0;
    if (!cfg.relative_coords_only)
      for (int a = 0; a < 3; ++a) row[c++] = cloud.positions[i][a];
    if (cfg.use_rgb)
      for (int a = 0; a < 3; ++a) row[c++] = cloud.colors[i][a];
    if (c == 0) row[c++] = 1.0;
  }
  return t;
}

inline FpsStart stage_fps_start(const NetworkConfig& cfg, std::uint64_t seed, std::size_t stage) {
  return FpsStart{cfg.canonical_fps, seed * 0x9E3779B97F4A7C15ull + stage + 1};
}

inline ForwardTrace network_forward(Tape& tape, const PointCloud& cloud, NetworkParams& net, std::uint64_t seed,
                                    ForwardOptions options = {}) {
  const NetworkConfig& cfg = net.config;
  if (cloud.size() != cfg.input_points)
    throw InvalidArgument("network_forward: cloud has " + std::to_string(cloud.size()) + " points, config expects " +
                          std::to_string(cfg.input_points));
  const std::size_t stages = net.down.size();
  const std::size_t stop = options.stop_after_stage.value_or(stages);
  ForwardTrace tr;
  tr.input = tape.input(input_features(cloud, cfg));
  tr.level_positions.push_back(cloud.positions);
  Var x = mlp_forward(tape, tr.input, net.input_mlp);
  tr.input_embedding = x;
  if (stop == 0) return tr;

  std::vector<Var> skips;
  for (std::size_t s = 0; s < stages; ++s) {
    auto& stage = net.down[s];
    const auto& pos = tr.level_positions[s];
    tr.stage_inputs.push_back(x);
    if (stage.block) {
      x = block_forward(tape, pos, x, *stage.block);
      tr.block_outputs.push_back(x);
    }
    skips.push_back(x);
    SAOutput sa = sa_forward(tape, pos, x, stage.sa, stage_fps_start(cfg, seed, s));
    tr.level_positions.push_back(std::move(sa.centroids));
    x = sa.features;
    tr.sa_outputs.push_back(x);
    if (options.stop_after_stage && s + 1 == stop) return tr;
  }
  if (net.bottom) {
    x = block_forward(tape, tr.level_positions[stages], x, *net.bottom);
    tr.block_outputs.push_back(x);
  }
  for (std::size_t s = stages; s-- > 0;) {
    auto& stage = net.up[s];
    x = fp_forward(tape, tr.level_positions[s], tr.level_positions[s + 1], x, skips[s], stage.fp, cfg.sa_radii[s]);
    if (stage.block) {
      x = block_forward(tape, tr.level_positions[s], x, *stage.block);
      tr.block_outputs.push_back(x);
    }
  }
  tr.logits = dense_forward(tape, x, net.classifier, false);
  return tr;
}

/// Per-point argmax of logits (ties to the lower class).
inline std::vector<int> predict_labels(const Tensor& logits) {
  const std::size_t n = logits.shape[0], c = logits.shape[1];
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Information coverage

/// Parses "input" or "saK" (K in 1..stages) into a stage number.
inline std::size_t parse_stage(const std::string& name, std::size_t stages) {
  if (name == "input") return 0;
  if (name.size() > 2 && name.rfind("sa", 0) == 0) {
    std::size_t k = 0;
    auto [p, ec] = std::from_chars(name.data() + 2, name.data() + name.size(), k);
    if (ec == std::errc() && p == name.data() + name.size() && k >= 1 && k <= stages) return k;
  }
  throw InvalidArgument("unknown stage '" + name + "' (expected input or sa1..sa" + std::to_string(stages) + ")");
}

/// Points of a stage's input set whose features have a nonzero gradient
/// path into that stage's output, found by backpropagating the sum of the
/// output and keeping rows whose gradient is not exactly zero.
///
/// Stage 0 is the input MLP over the raw cloud. Stage k >= 1 is the k-th
/// down stage (local block + set abstraction); its input set is the level
/// k-1 point set, so indices refer to that level.
inline std::vector<std::uint32_t> influence_mask(const PointCloud& cloud, NetworkParams& net, std::size_t stage,
                                                 std::uint64_t seed = 0) {
  if (stage > net.down.size()) throw InvalidArgument("influence_mask: stage out of range");
  Tape tape;
  ForwardTrace tr = network_forward(tape, cloud, net, seed, ForwardOptions{stage});
  Var target = stage == 0 ? tr.input_embedding : tr.sa_outputs[stage - 1];
  Var source = stage == 0 ? tr.input : tr.stage_inputs[stage - 1];
  tape.backward(ad::sum(target));
  net.zero_grad();
  const Tensor& g = source.grad();
  const std::size_t rows = g.shape[0], d = g.size() / rows;
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      if (g.data[i * d + c] != 0.0) {
        out.push_back(static_cast<std::uint32_t>(i));
        break;
      }
    }
  }
  return out;
}

}  // namespace pointsift
