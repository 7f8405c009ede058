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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "pointsift/data.hpp"
#include "pointsift/gradcheck_suite.hpp"
#include "pointsift/nn.hpp"
#include "pointsift/training.hpp"

namespace pointsift {
namespace {

using Row = std::vector<double>;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

Row row_of(const Tensor& t, std::size_t i) {
  const std::size_t d = t.channels();
  return Row(t.data.begin() + static_cast<std::ptrdiff_t>(i * d), t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
}

// x W[slice] for W of shape (slices x din x dout), or din x dout when slice = 0.
Row matvec(const Row& x, const Tensor& W, std::size_t slice = 0) {
  const std::size_t din = W.shape[W.rank() - 2], dout = W.shape.back();
  Row out(dout, 0.0);
  for (std::size_t j = 0; j < dout; ++j)
    for (std::size_t k = 0; k < din; ++k) out[j] += x[k] * W[(slice * din + k) * dout + j];
  return out;
}

Row plus(Row a, const Row& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Row relu(Row a) {
  for (auto& v : a) v = std::max(v, 0.0);
  return a;
}

Row dense(const Row& x, const Dense& d, bool act) {
  Row y = plus(matvec(x, d.W.value), d.b.value.data);
  return act ? relu(y) : y;
}

// Collapses two rows with one axis_conv2 weight + bias, then ReLU.
Row conv_pair(const Row& a, const Row& b, const Parameter& W, const Parameter& bias) {
  return relu(plus(plus(matvec(a, W.value, 0), matvec(b, W.value, 1)), bias.value.data));
}

Row oe_oracle(const std::vector<Vec3>& pos, const Tensor& f, std::size_t n, const OEUnitParams& p) {
  const auto nb = testing::brute_s8n(pos, n, p.radius);
  auto feat = [&](int x, int y, int z) { return row_of(f, nb[x + 2 * y + 4 * z]); };
  Row hz[2];
  for (int z = 0; z < 2; ++z) {
    Row hy[2];
    for (int y = 0; y < 2; ++y) hy[y] = conv_pair(feat(0, y, z), feat(1, y, z), p.Wx, p.bx);
    hz[z] = conv_pair(hy[0], hy[1], p.Wy, p.by);
  }
  return conv_pair(hz[0], hz[1], p.Wz, p.bz);
}

void set_all(Parameter& p, double v) { std::fill(p.value.data.begin(), p.value.data.end(), v); }

void expect_rows_near(const Tensor& got, std::size_t i, const Row& want, double tol) {
  ASSERT_EQ(got.channels(), want.size());
  for (std::size_t c = 0; c < want.size(); ++c) EXPECT_NEAR(got[i * want.size() + c], want[c], tol) << "row " << i;
}

PointCloud cloud_from(std::vector<Vec3> pts, std::size_t classes = 3) {
  PointCloud c;
  c.positions = std::move(pts);
  c.labels.resize(c.positions.size());
  for (std::size_t i = 0; i < c.labels.size(); ++i) c.labels[i] = static_cast<int>(i % classes);
  return c;
}

std::vector<Vec3> uniform_cloud(std::size_t n, std::uint64_t seed, double extent = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, extent);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  return pts;
}

// --- OE unit ---------------------------------------------------------------

TEST(OEUnit, CubeCornersSumIntoCenter) {
  // A center with one neighbor per octant; unit weights and zero biases make
  // the unit sum the eight gathered features.
  std::vector<Vec3> pos{{0, 0, 0}};
  for (int o = 0; o < 8; ++o)
    pos.push_back({(o & 1) ? 0.1 : -0.1, (o & 2) ? 0.1 : -0.1, (o & 4) ? 0.1 : -0.1});
  std::mt19937_64 rng(1);
  OEUnitParams p = make_oe_unit("oe", 1, 1, 0.5, rng);
  for (auto* w : {&p.Wx, &p.Wy, &p.Wz}) set_all(*w, 1.0);
  Tensor f({9, 1});
  for (std::size_t i = 0; i < 9; ++i) f[i] = static_cast<double>(i);
  Tape tape;
  SpatialIndex index(pos, p.radius);
  Var y = oe_unit_forward(tape, index, tape.input(f), p);
  EXPECT_EQ(y.value()[0], 36.0);
}

TEST(OEUnit, IsolatedPointSeesItselfInEveryOctant) {
  std::vector<Vec3> pos{{0, 0, 0}, {5, 5, 5}};
  std::mt19937_64 rng(1);
  OEUnitParams p = make_oe_unit("oe", 1, 1, 0.5, rng);
  for (auto* w : {&p.Wx, &p.Wy, &p.Wz}) set_all(*w, 1.0);
  Tape tape;
  SpatialIndex index(pos, p.radius);
  Var y = oe_unit_forward(tape, index, tape.input(Tensor({2, 1}, {0.5, 2.0})), p);
  EXPECT_EQ(y.value(), Tensor({2, 1}, {4.0, 16.0}));
}

TEST(OEUnit, MatchesStraightLineOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto pos = testing::random_cloud(60, seed);
    std::mt19937_64 rng(seed);
    OEUnitParams p = make_oe_unit("oe", 3, 4, 0.25, rng);
    for (auto* b : {&p.bx, &p.by, &p.bz}) *b = Parameter(b->name, random_tensor(b->value.shape, seed + 100));
    const Tensor f = random_tensor({60, 3}, seed + 7);
    Tape tape;
    SpatialIndex index(pos, p.radius);
    Var y = oe_unit_forward(tape, index, tape.input(f), p);
    ASSERT_EQ(y.shape(), (Shape{60, 4}));
    for (std::size_t n = 0; n < 60; ++n) expect_rows_near(y.value(), n, oe_oracle(pos, f, n, p), 1e-12);
  }
}

TEST(OEUnit, RejectsFeatureRowMismatch) {
  std::vector<Vec3> pos{{0, 0, 0}, {1, 1, 1}};
  std::mt19937_64 rng(1);
  OEUnitParams p = make_oe_unit("oe", 2, 2, 0.5, rng);
  Tape tape;
  SpatialIndex index(pos, p.radius);
  EXPECT_THROW(oe_unit_forward(tape, index, tape.input(Tensor({3, 2})), p), InvalidArgument);
  EXPECT_THROW(make_oe_unit("oe", 2, 2, 0.0, rng), InvalidArgument);
}

// --- PointSIFT module ------------------------------------------------------

TEST(PointSiftModule, ChainsUnitsConcatenatesAndFuses) {
  const auto pos = testing::random_cloud(40, 3);
  std::mt19937_64 rng(3);
  PointSiftParams p = make_pointsift("ps", 3, {4, 5}, 3, 0.3, true, rng);
  const Tensor f = random_tensor({40, 3}, 4);
  Tape tape;
  std::vector<Var> units;
  Var y = pointsift_forward(tape, pos, tape.input(f), p, &units);
  ASSERT_EQ(y.shape(), (Shape{40, 3}));
  ASSERT_EQ(units.size(), 2u);
  // Oracle: unit 1 reads unit 0's output, fusion reads [unit0 | unit1].
  Tensor u0({40, 4});
  for (std::size_t n = 0; n < 40; ++n) {
    const Row r = oe_oracle(pos, f, n, p.oe_units[0]);
    std::copy(r.begin(), r.end(), u0.data.begin() + static_cast<std::ptrdiff_t>(n * 4));
  }
  for (std::size_t n = 0; n < 40; ++n) {
    Row cat = row_of(u0, n);
    const Row r1 = oe_oracle(pos, u0, n, p.oe_units[1]);
    cat.insert(cat.end(), r1.begin(), r1.end());
    expect_rows_near(y.value(), n, dense(cat, p.fusion, true), 1e-12);
  }
}

TEST(PointSiftModule, PreservesPointCountAndWidth) {
  std::mt19937_64 rng(5);
  PointSiftParams p = make_pointsift("ps", 7, {8}, 7, 0.2, false, rng);
  EXPECT_EQ(p.in_dim(), 7u);
  EXPECT_EQ(p.out_dim(), 7u);
  EXPECT_THROW(make_pointsift("ps", 7, {}, 7, 0.2, true, rng), InvalidArgument);
}

// --- Set abstraction -------------------------------------------------------

TEST(SetAbstraction, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto pos = testing::random_cloud(80, seed);
    std::mt19937_64 rng(seed);
    SAParams sa;
    sa.n_centroids = 12;
    sa.radius = 0.2;
    sa.max_k = 6;
    sa.mlp = {make_dense("m0", 5, 6, rng), make_dense("m1", 6, 4, rng)};
    const Tensor f = random_tensor({80, 2}, seed + 50);
    Tape tape;
    SAOutput out = sa_forward(tape, pos, tape.input(f), sa, FpsStart{true, 0});
    const auto cents = testing::brute_fps(pos, 12, testing::brute_lexicographic_min(pos));
    ASSERT_EQ(out.centroid_indices, cents);
    for (std::size_t c = 0; c < cents.size(); ++c) {
      auto group = testing::brute_ball(pos, pos[cents[c]], sa.radius, sa.max_k);
      if (std::find(group.begin(), group.end(), cents[c]) == group.end()) {
        // The centroid was cut by the cap: it takes slot 0, the last in-radius hit drops.
        std::vector<std::uint32_t> hits;
        for (std::uint32_t j = 0; j < pos.size(); ++j)
          if (squared_distance(pos[j], pos[cents[c]]) <= sa.radius * sa.radius) hits.push_back(j);
        group.assign(1, cents[c]);
        for (std::size_t h = 0; h + 1 < sa.max_k && h < hits.size(); ++h) group.push_back(hits[h]);
        group.resize(sa.max_k, group.front());
      }
      Row best(4, -std::numeric_limits<double>::infinity());
      for (auto j : group) {
        Row x = row_of(f, j);
        for (int a = 0; a < 3; ++a) x.push_back(pos[j][a] - pos[cents[c]][a]);
        const Row h = dense(dense(x, sa.mlp[0], true), sa.mlp[1], true);
        for (std::size_t k = 0; k < 4; ++k) best[k] = std::max(best[k], h[k]);
      }
      expect_rows_near(out.features.value(), c, best, 1e-12);
      EXPECT_EQ(out.centroids[c], pos[cents[c]]);
    }
  }
}

TEST(SetAbstraction, GroupForcesCentroidWhenCapExcludesIt) {
  // Five coincident points: the lowest three indices fill the cap, so the
  // centroid (index 4) is forced into slot 0.
  std::vector<Vec3> pos(5, Vec3{0, 0, 0});
  SpatialIndex index(pos, 1.0);
  EXPECT_EQ(sa_group(index, 4, 1.0, 3), (std::vector<std::uint32_t>{4, 0, 1}));
  EXPECT_EQ(sa_group(index, 1, 1.0, 3), (std::vector<std::uint32_t>{0, 1, 2}));
  EXPECT_EQ(sa_group(index, 0, 1.0, 8), (std::vector<std::uint32_t>{0, 1, 2, 3, 4, 0, 0, 0}));
}

TEST(SetAbstraction, RejectsTooManyCentroids) {
  std::vector<Vec3> pos(4, Vec3{0, 0, 0});
  std::mt19937_64 rng(1);
  SAParams sa;
  sa.n_centroids = 5;
  sa.mlp = {make_dense("m", 4, 2, rng)};
  Tape tape;
  EXPECT_THROW(sa_forward(tape, pos, tape.input(Tensor({4, 1})), sa, FpsStart{}), InvalidArgument);
}

// --- Feature propagation ---------------------------------------------------

TEST(FeaturePropagation, MatchesInverseDistanceOracle) {
  const auto dense_pos = uniform_cloud(50, 9), sparse_pos = uniform_cloud(10, 10);
  std::mt19937_64 rng(9);
  FPParams fp;
  fp.mlp = {make_dense("fp", 5, 3, rng)};
  const Tensor sf = random_tensor({10, 3}, 11), skip = random_tensor({50, 2}, 12);
  Tape tape;
  Var y = fp_forward(tape, dense_pos, sparse_pos, tape.input(sf), tape.input(skip), fp, 0.3);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto nn = testing::brute_knn(sparse_pos, dense_pos[i], 3);
    Row x(3, 0.0);
    double total = 0.0;
    for (auto j : nn) total += 1.0 / (squared_distance(sparse_pos[j], dense_pos[i]) + 1e-8);
    for (auto j : nn) {
      const double w = 1.0 / (squared_distance(sparse_pos[j], dense_pos[i]) + 1e-8) / total;
      for (int c = 0; c < 3; ++c) x[c] += w * sf[j * 3 + c];
    }
    const Row s = row_of(skip, i);
    x.insert(x.end(), s.begin(), s.end());
    expect_rows_near(y.value(), i, dense(x, fp.mlp[0], true), 1e-12);
  }
}

TEST(FeaturePropagation, CoincidentPointCopiesItsFeature) {
  std::vector<Vec3> sparse{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  std::vector<Vec3> dense{{1, 0, 0}};
  std::mt19937_64 rng(1);
  FPParams fp;
  fp.mlp = {make_dense("fp", 1, 1, rng)};
  set_all(fp.mlp[0].W, 1.0);
  Tape tape;
  Var y = fp_forward(tape, dense, sparse, tape.input(Tensor({3, 1}, {1.0, 5.0, 9.0})), std::nullopt, fp, 1.0);
  EXPECT_NEAR(y.value()[0], 5.0, 1e-6);
}

// --- Network ---------------------------------------------------------------

TEST(Network, ShapeContractForDefaultConfig) {
  NetworkConfig cfg;
  NetworkParams net = make_network(cfg);
  const Scene scene = generate_toy_scene(cfg.input_points, 3);
  Tape tape;
  const ForwardTrace tr = network_forward(tape, scene.cloud, net, 0);
  EXPECT_EQ(tr.logits.shape(), (Shape{1024, 3}));
  ASSERT_EQ(tr.level_positions.size(), 4u);
  const std::size_t sizes[] = {1024, 256, 64, 16};
  const std::size_t widths[] = {32, 64, 128, 256};
  for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(tr.level_positions[l].size(), sizes[l]);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(tr.sa_outputs[s].shape(), (Shape{sizes[s + 1], widths[s + 1]}));
  ASSERT_EQ(tr.block_outputs.size(), 6u);
  EXPECT_EQ(tr.block_outputs[0].shape(), (Shape{1024, 32}));
  EXPECT_EQ(tr.block_outputs[5].shape(), (Shape{1024, 32}));
}

TEST(Network, RejectsWrongPointCount) {
  NetworkParams net = make_network(tiny_network_config());
  Tape tape;
  EXPECT_THROW(network_forward(tape, cloud_from(uniform_cloud(15, 1)), net, 0), InvalidArgument);
}

TEST(Network, SameSeedSameParameters) {
  NetworkConfig cfg = tiny_network_config();
  NetworkParams a = make_network(cfg), b = make_network(cfg);
  std::vector<Tensor> va, vb;
  a.for_each_parameter([&](Parameter& p) { va.push_back(p.value); });
  b.for_each_parameter([&](Parameter& p) { vb.push_back(p.value); });
  EXPECT_EQ(va, vb);
  cfg.seed = 2;
  NetworkParams c = make_network(cfg);
  std::vector<Tensor> vc;
  c.for_each_parameter([&](Parameter& p) { vc.push_back(p.value); });
  EXPECT_NE(va, vc);
}

NetworkConfig small_config() {
  NetworkConfig c;
  c.input_points = 64;
  c.stage_sizes = {16, 4};
  c.channel_widths = {8, 8, 8};
  c.oe_radii = {0.3, 0.6, 1.2};
  c.down_pointsift = {{8}, {8}};
  c.up_pointsift = {{8}, {8}};
  c.bottom_pointsift = {8};
  c.sa_radii = {0.5, 1.0};
  c.max_k = 64;  // no cap: every in-radius point joins its group
  return c;
}

TEST(Network, PermutingInputPermutesOutput) {
  NetworkConfig cfg = small_config();
  NetworkParams net = make_network(cfg);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const PointCloud cloud = cloud_from(uniform_cloud(64, seed));
    std::vector<std::size_t> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(seed));
    PointCloud shuffled = cloud;
    for (std::size_t i = 0; i < 64; ++i) {
      shuffled.positions[i] = cloud.positions[perm[i]];
      shuffled.labels[i] = cloud.labels[perm[i]];
    }
    Tape t1, t2;
    const Tensor a = network_forward(t1, cloud, net, 0).logits.value();
    const Tensor b = network_forward(t2, shuffled, net, 0).logits.value();
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(b[i * 3 + c], a[perm[i] * 3 + c], 1e-12);
  }
}

TEST(Network, RelativeCoordinatesGiveBitIdenticalTranslatedOutput) {
  NetworkConfig cfg = small_config();
  cfg.relative_coords_only = true;
  NetworkParams net = make_network(cfg);
  // Dyadic coordinates and integer shifts keep every offset exact.
  std::vector<Vec3> pts = uniform_cloud(64, 4);
  for (auto& p : pts)
    for (auto& v : p) v = std::round(v * 1024.0) / 1024.0;
  const PointCloud cloud = cloud_from(pts);
  PointCloud moved = cloud;
  for (auto& p : moved.positions) p = {p[0] + 3.0, p[1] - 7.0, p[2] + 12.0};
  Tape t1, t2;
  EXPECT_EQ(network_forward(t1, cloud, net, 0).logits.value(), network_forward(t2, moved, net, 0).logits.value());
}

TEST(Network, OverfitsSingleScene) {
  NetworkConfig cfg = small_config();
  cfg.input_points = 256;
  NetworkParams net = make_network(cfg);
  const Scene scene = generate_toy_scene(256, 8);
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  TrainOptions to;
  to.epochs = 200;
  const auto log = train(net, tc, {scene.cloud}, to);
  EXPECT_LT(log.back().loss, 0.5 * log.front().loss);
  EXPECT_GT(log.back().accuracy, 0.9);
}

// --- Influence / coverage --------------------------------------------------

// Stage-1 oracle without a local block: a stage-input row has a gradient
// path iff it is the first maximal slot of some channel in some group and
// that channel's maximum is positive (otherwise its ReLU is closed).
std::vector<std::uint32_t> brute_sa_influence(const std::vector<Vec3>& pos, const Tensor& f, const SAParams& sa) {
  const auto cents = testing::brute_fps(pos, sa.n_centroids, testing::brute_lexicographic_min(pos));
  std::vector<bool> hit(pos.size(), false);
  for (auto c : cents) {
    auto group = testing::brute_ball(pos, pos[c], sa.radius, sa.max_k);
    if (std::find(group.begin(), group.end(), c) == group.end()) {
      group.insert(group.begin(), c);
      group.pop_back();
    }
    const std::size_t dout = sa.mlp.back().out_dim();
    Row best(dout, -1.0);
    std::vector<std::uint32_t> who(dout, 0);
    for (auto j : group) {
      Row x = row_of(f, j);
      for (int a = 0; a < 3; ++a) x.push_back(pos[j][a] - pos[c][a]);
      for (const auto& layer : sa.mlp) x = dense(x, layer, true);
      for (std::size_t k = 0; k < dout; ++k)
        if (x[k] > best[k]) {
          best[k] = x[k];
          who[k] = j;
        }
    }
    for (std::size_t k = 0; k < dout; ++k)
      if (best[k] > 0.0) hit[who[k]] = true;
  }
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < hit.size(); ++i)
    if (hit[i]) out.push_back(i);
  return out;
}

TEST(Influence, MatchesMaxPoolWinnerOracle) {
  for (double r : {0.1, 0.25, 0.5, 100.0})
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      NetworkConfig cfg = small_config();
      for (auto& d : cfg.down_pointsift) d.clear();
      cfg.sa_radii = {r, 1.0};
      cfg.max_k = 12;
      cfg.seed = seed;
      NetworkParams net = make_network(cfg);
      const PointCloud cloud = cloud_from(uniform_cloud(64, seed + 20));
      Tape tape;
      const ForwardTrace tr = network_forward(tape, cloud, net, 0);
      EXPECT_EQ(influence_mask(cloud, net, 1), brute_sa_influence(cloud.positions, tr.stage_inputs[0].value(), net.down[0].sa))
          << "radius " << r << " seed " << seed;
    }
}

TEST(Influence, InputStageCoversRowsWithAnActiveUnit) {
  NetworkConfig cfg = small_config();
  cfg.input_mlp_layers = 1;
  NetworkParams net = make_network(cfg);
  const PointCloud cloud = cloud_from(uniform_cloud(64, 2));
  std::vector<std::uint32_t> want;
  for (std::uint32_t i = 0; i < 64; ++i) {
    const Row h = dense(Row(cloud.positions[i].begin(), cloud.positions[i].end()), net.input_mlp[0], true);
    if (std::any_of(h.begin(), h.end(), [](double v) { return v > 0.0; })) want.push_back(i);
  }
  EXPECT_EQ(influence_mask(cloud, net, 0), want);
}

TEST(Influence, LocalBlockWidensCoverage) {
  NetworkConfig cfg = small_config();
  cfg.input_points = 256;
  cfg.stage_sizes = {32, 8};
  cfg.max_k = 8;
  cfg.oe_radii = {0.3, 0.6, 1.2};
  std::size_t with_block = 0, without = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const PointCloud cloud = cloud_from(uniform_cloud(256, seed));
    NetworkParams a = make_network(cfg);
    with_block += influence_mask(cloud, a, 1).size();
    NetworkConfig plain = cfg;
    for (auto& d : plain.down_pointsift) d.clear();
    NetworkParams b = make_network(plain);
    without += influence_mask(cloud, b, 1).size();
  }
  EXPECT_GT(with_block, without);
}

TEST(Influence, StageNamesParse) {
  EXPECT_EQ(parse_stage("input", 3), 0u);
  EXPECT_EQ(parse_stage("sa2", 3), 2u);
  EXPECT_THROW(parse_stage("sa4", 3), InvalidArgument);
  EXPECT_THROW(parse_stage("sa", 3), InvalidArgument);
}

}  // namespace
}  // namespace pointsift
