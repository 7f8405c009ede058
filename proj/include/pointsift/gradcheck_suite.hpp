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

// Finite-difference checks of every differentiable operation, every network
// building block and a tiny end-to-end network, over random instances.

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pointsift/gradcheck.hpp"
#include "pointsift/nn.hpp"

namespace pointsift {

struct OpGradcheck {
  std::string op;
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t instances = 0;  // instances checked
  std::size_t rejected = 0;   // instances discarded for sitting near a kink
  std::size_t entries = 0;    // gradient entries compared
};

struct GradcheckSuiteOptions {
  std::size_t instances = 10;
  double step = 1e-5;
  /// Instances whose smallest ReLU input or max-pool gap is below this are
  /// redrawn; a central difference across a kink measures the kink, not the
  /// derivative.
  double min_kink_margin = 1e-4;
  std::size_t max_attempts = 200;
};

namespace suite_detail {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline std::vector<Vec3> random_positions(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> p(n);
  for (auto& v : p) v = {u(rng), u(rng), u(rng)};
  return p;
}

inline void randomize(Parameter& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (auto& v : p.value.data) v = u(rng);
}

/// One random instance: inputs, parameters and a loss builder reducing the
/// operation's output to a scalar with a fixed random projection.
struct Instance {
  std::vector<Tensor> inputs;
  std::vector<Parameter*> params;
  ad::LossBuilder build;
};

inline Var project(Var y, std::uint64_t seed) { return ad::dot_constant(y, ad::random_projection(y.shape(), seed)); }

}  // namespace suite_detail

/// Runs one named check over `opt.instances` accepted random instances.
/// `make` fills an instance from a seed; objects it references must stay
/// alive until the next call.
inline OpGradcheck run_op_gradcheck(const std::string& name,
                                    const std::function<suite_detail::Instance(std::uint64_t)>& make,
                                    std::uint64_t seed, const GradcheckSuiteOptions& opt) {
  OpGradcheck r;
  r.op = name;
  for (std::size_t attempt = 0; r.instances < opt.instances; ++attempt) {
    if (attempt >= opt.max_attempts)
      throw InvalidArgument("gradcheck " + name + ": no instance clear of kinks after " +
                            std::to_string(opt.max_attempts) + " draws");
    suite_detail::Instance inst = make(seed * 7919 + attempt);
    {
      Tape tape;
      std::vector<Var> vars;
      for (const auto& t : inst.inputs) vars.push_back(tape.input(t));
      inst.build(tape, vars);
      if (tape.kink_margin() < opt.min_kink_margin) {
        ++r.rejected;
        continue;
      }
    }
    const auto res = ad::gradcheck(inst.build, inst.inputs, inst.params, opt.step);
    ++r.instances;
    r.entries += res.checked;
    if (res.max_rel_error >= r.max_rel_error) {
      r.max_rel_error = res.max_rel_error;
      r.worst = res.worst;
    }
  }
  return r;
}

/// Configuration of the tiny network used for the end-to-end check:
/// 16 points, one down and one up stage, 4 channels.
inline NetworkConfig tiny_network_config() {
  NetworkConfig c;
  c.input_points = 16;
  c.num_classes = 3;
  c.stage_sizes = {4};
  c.channel_widths = {4, 4};
  c.oe_radii = {0.6, 1.2};
  c.down_pointsift = {{4}};
  c.up_pointsift = {{4}};
  c.sa_radii = {0.7};
  c.max_k = 8;
  c.sa_mlp_layers = 1;
  c.input_mlp_layers = 1;
  return c;
}

inline std::vector<OpGradcheck> run_gradcheck_suite(std::uint64_t seed, const GradcheckSuiteOptions& opt = {}) {
  using namespace suite_detail;
  std::vector<OpGradcheck> out;
  // Storage for parameters and geometry referenced by the current instance.
  std::vector<Vec3> pos, pos2;
  OEUnitParams oe;
  PointSiftParams psm;
  SAParams sa;
  FPParams fp;
  std::optional<NetworkParams> net;
  PointCloud cloud;

  out.push_back(run_op_gradcheck("linear", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({5, 3}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng)};
    in.build = [s](Tape&, const std::vector<Var>& v) { return project(ad::linear(v[0], v[1], v[2]), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("relu", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({6, 5}, rng)};
    in.build = [s](Tape&, const std::vector<Var>& v) { return project(ad::relu(v[0]), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("gather_rows", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({6, 3}, rng)};
    std::vector<std::uint32_t> idx(9);
    for (auto& i : idx) i = static_cast<std::uint32_t>(rng() % 6);
    in.build = [s, idx](Tape&, const std::vector<Var>& v) { return project(ad::gather_rows(v[0], idx), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("group_max_pool", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({4, 5, 3}, rng)};
    in.build = [s](Tape&, const std::vector<Var>& v) { return project(ad::group_max_pool(v[0]), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("axis_conv2", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({4, 2, 4, 3}, rng), random_tensor({2, 3, 5}, rng), random_tensor({5}, rng)};
    in.build = [s](Tape&, const std::vector<Var>& v) { return project(ad::axis_conv2(v[0], v[1], v[2]), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("concat_channels", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({5, 2}, rng), random_tensor({5, 3}, rng), random_tensor({5, 1}, rng)};
    in.build = [s](Tape&, const std::vector<Var>& v) { return project(ad::concat_channels(v), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("softmax_cross_entropy", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({7, 4}, rng, -3.0, 3.0)};
    std::vector<int> labels(7);
    for (auto& l : labels) l = static_cast<int>(rng() % 4);
    in.build = [labels](Tape&, const std::vector<Var>& v) { return ad::softmax_cross_entropy(v[0], labels); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("reshape", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({4, 6}, rng)};
    in.build = [s](Tape&, const std::vector<Var>& v) { return project(ad::reshape(v[0], {2, 3, 4}), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("weighted_gather", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({5, 3}, rng)};
    std::vector<std::uint32_t> idx(8 * 3);
    std::vector<double> w(idx.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      idx[i] = static_cast<std::uint32_t>(rng() % 5);
      w[i] = u(rng);
    }
    in.build = [s, idx, w](Tape&, const std::vector<Var>& v) { return project(ad::weighted_gather(v[0], idx, w, 3), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("add", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    in.build = [s](Tape&, const std::vector<Var>& v) { return project(ad::add(v[0], v[1]), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("sum", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Instance in;
    in.inputs = {random_tensor({3, 5}, rng)};
    in.build = [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("oe_unit", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    pos = random_positions(24, rng);
    oe = make_oe_unit("oe", 3, 4, 0.45, rng);
    for (auto* p : {&oe.Wx, &oe.bx, &oe.Wy, &oe.by, &oe.Wz, &oe.bz}) randomize(*p, rng);
    Instance in;
    in.inputs = {random_tensor({24, 3}, rng)};
    in.params = {&oe.Wx, &oe.bx, &oe.Wy, &oe.by, &oe.Wz, &oe.bz};
    in.build = [&, s](Tape& t, const std::vector<Var>& v) {
      SpatialIndex index(pos, oe.radius);
      return project(oe_unit_forward(t, index, v[0], oe), s);
    };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("pointsift_module", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    pos = random_positions(20, rng);
    psm = make_pointsift("ps", 3, {3, 2}, 3, 0.5, true, rng);
    Instance in;
    for (auto& u : psm.oe_units)
      for (auto* p : {&u.Wx, &u.bx, &u.Wy, &u.by, &u.Wz, &u.bz}) {
        randomize(*p, rng);
        in.params.push_back(p);
      }
    randomize(psm.fusion.W, rng);
    randomize(psm.fusion.b, rng);
    in.params.push_back(&psm.fusion.W);
    in.params.push_back(&psm.fusion.b);
    in.inputs = {random_tensor({20, 3}, rng)};
    in.build = [&, s](Tape& t, const std::vector<Var>& v) { return project(pointsift_forward(t, pos, v[0], psm), s); };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("set_abstraction", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    pos = random_positions(24, rng);
    sa = SAParams{};
    sa.n_centroids = 6;
    sa.radius = 0.35;
    sa.max_k = 6;
    sa.mlp = {make_dense("sa.mlp0", 5, 4, rng), make_dense("sa.mlp1", 4, 3, rng)};
    Instance in;
    for (auto& d : sa.mlp)
      for (auto* p : {&d.W, &d.b}) {
        randomize(*p, rng);
        in.params.push_back(p);
      }
    in.inputs = {random_tensor({24, 2}, rng)};
    in.build = [&, s](Tape& t, const std::vector<Var>& v) {
      return project(sa_forward(t, pos, v[0], sa, FpsStart{true, 0}).features, s);
    };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("feature_propagation", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    pos = random_positions(16, rng);
    pos2 = random_positions(5, rng);
    fp = FPParams{};
    fp.mlp = {make_dense("fp.mlp0", 5, 4, rng)};
    Instance in;
    for (auto* p : {&fp.mlp[0].W, &fp.mlp[0].b}) {
      randomize(*p, rng);
      in.params.push_back(p);
    }
    in.inputs = {random_tensor({5, 3}, rng), random_tensor({16, 2}, rng)};
    in.build = [&, s](Tape& t, const std::vector<Var>& v) {
      return project(fp_forward(t, pos, pos2, v[0], v[1], fp, 0.5), s);
    };
    return in;
  }, seed, opt));

  out.push_back(run_op_gradcheck("network", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    NetworkConfig cfg = tiny_network_config();
    cfg.seed = s;
    net.emplace(make_network(cfg));
    Instance in;
    net->for_each_parameter([&](Parameter& p) {
      randomize(p, rng);
      in.params.push_back(&p);
    });
    cloud = PointCloud{};
    cloud.positions = random_positions(cfg.input_points, rng);
    cloud.labels.resize(cfg.input_points);
    for (auto& l : cloud.labels) l = static_cast<int>(rng() % cfg.num_classes);
    in.build = [&](Tape& t, const std::vector<Var>&) {
      const ForwardTrace tr = network_forward(t, cloud, *net, 0);
      return ad::softmax_cross_entropy(tr.logits, cloud.labels);
    };
    return in;
  }, seed, opt));
  return out;
}

}  // namespace pointsift
