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

#include <cmath>
#include <random>

#include "pointsift/autodiff.hpp"
#include "pointsift/gradcheck.hpp"
#include "pointsift/gradcheck_suite.hpp"

namespace pointsift {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

TEST(Linear, HandExample) {
  Tape tape;
  Var x = tape.input(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var W = tape.input(Tensor({2, 3}, {1.0, 0.0, -1.0, 0.5, 1.0, 2.0}));
  Var b = tape.input(Tensor({3}, {0.0, 1.0, 0.0}));
  Var y = ad::linear(x, W, b);
  EXPECT_EQ(y.value(), Tensor({2, 3}, {2.0, 3.0, 3.0, 5.0, 5.0, 5.0}));
}

// Tiled kernels accumulate each output in ascending reduction order, so the
// result equals a plain triple loop bit for bit at any shape.
TEST(Linear, MatchesNaiveLoopExactlyAcrossTileRemainders) {
  for (std::size_t rows : {1u, 3u, 4u, 5u, 9u, 130u})
    for (std::size_t din : {1u, 2u, 7u})
      for (std::size_t dout : {1u, 3u, 4u, 8u, 17u}) {
        const Tensor x = random_tensor({rows, din}, rows * 100 + din);
        const Tensor W = random_tensor({din, dout}, din * 10 + dout);
        const Tensor b = random_tensor({dout}, dout);
        Tape tape;
        Var y = ad::linear(tape.input(x), tape.input(W), tape.input(b));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < dout; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < din; ++k) acc += x[r * din + k] * W[k * dout + j];
            ASSERT_EQ(y.value()[r * dout + j], acc) << rows << "x" << din << "x" << dout;
          }
      }
}

TEST(Linear, WeightGradientMatchesOuterProductSum) {
  const std::size_t rows = 150, din = 5, dout = 6;
  const Tensor x = random_tensor({rows, din}, 1), W = random_tensor({din, dout}, 2);
  const Tensor proj = ad::random_projection({rows, dout}, 3);
  Tape tape;
  Var wv = tape.input(W);
  tape.backward(ad::dot_constant(ad::linear(tape.input(x), wv, tape.constant(Tensor({dout}))), proj));
  for (std::size_t k = 0; k < din; ++k)
    for (std::size_t j = 0; j < dout; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) acc += x[r * din + k] * proj[r * dout + j];
      EXPECT_NEAR(wv.grad()[k * dout + j], acc, 1e-12);
    }
}

TEST(Linear, RejectsShapeMismatch) {
  Tape tape;
  Var x = tape.input(Tensor({2, 3}));
  EXPECT_THROW(ad::linear(x, tape.input(Tensor({2, 3})), tape.input(Tensor({3}))), InvalidArgument);
}

TEST(Relu, ZeroHasZeroSubgradient) {
  Tape tape;
  Var x = tape.input(Tensor({4}, {-1.0, 0.0, 2.0, -0.0}));
  Var y = ad::relu(x);
  EXPECT_EQ(y.value(), Tensor({4}, {0.0, 0.0, 2.0, 0.0}));
  tape.backward(ad::sum(y));
  EXPECT_EQ(x.grad(), Tensor({4}, {0.0, 0.0, 1.0, 0.0}));
}

TEST(GatherRows, RepeatedIndicesScatterAdd) {
  Tape tape;
  Var x = tape.input(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Var y = ad::gather_rows(x, {2, 0, 2});
  EXPECT_EQ(y.value(), Tensor({3, 2}, {5, 6, 1, 2, 5, 6}));
  tape.backward(ad::sum(y));
  EXPECT_EQ(x.grad(), Tensor({3, 2}, {1, 1, 0, 0, 2, 2}));
  EXPECT_THROW(ad::gather_rows(x, {3}), InvalidArgument);
}

TEST(GroupMaxPool, RoutesGradientToFirstMaximum) {
  Tape tape;
  // One group of three slots, two channels; channel 1 ties between slots 0 and 2.
  Var x = tape.input(Tensor({1, 3, 2}, {1.0, 7.0, 4.0, 2.0, 3.0, 7.0}));
  Var y = ad::group_max_pool(x);
  EXPECT_EQ(y.value(), Tensor({1, 2}, {4.0, 7.0}));
  tape.backward(ad::sum(y));
  EXPECT_EQ(x.grad(), Tensor({1, 3, 2}, {0, 1, 1, 0, 0, 0}));
}

TEST(AxisConv2, MatchesDirectSum) {
  const std::size_t n = 3, r = 2, din = 3, dout = 4;
  const Tensor v = random_tensor({n, 2, r, din}, 5), w = random_tensor({2, din, dout}, 6),
               b = random_tensor({dout}, 7);
  Tape tape;
  Var y = ad::axis_conv2(tape.input(v), tape.input(w), tape.input(b));
  ASSERT_EQ(y.shape(), (Shape{n, 1, r, dout}));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < r; ++s)
      for (std::size_t o = 0; o < dout; ++o) {
        double acc = b[o];
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t c = 0; c < din; ++c)
            acc += v[((i * 2 + a) * r + s) * din + c] * w[(a * din + c) * dout + o];
        EXPECT_NEAR(y.value()[(i * r + s) * dout + o], acc, 1e-14);
      }
}

TEST(AxisConv2, RejectsWrongAxisExtent) {
  Tape tape;
  EXPECT_THROW(ad::axis_conv2(tape.input(Tensor({2, 3, 1, 2})), tape.input(Tensor({2, 2, 2})),
                              tape.input(Tensor({2}))),
               InvalidArgument);
}

TEST(ConcatChannels, OrderAndBackwardSplit) {
  Tape tape;
  Var a = tape.input(Tensor({2, 1}, {1, 2}));
  Var b = tape.input(Tensor({2, 2}, {3, 4, 5, 6}));
  Var y = ad::concat_channels({a, b});
  EXPECT_EQ(y.value(), Tensor({2, 3}, {1, 3, 4, 2, 5, 6}));
  tape.backward(ad::dot_constant(y, Tensor({2, 3}, {1, 2, 3, 4, 5, 6})));
  EXPECT_EQ(a.grad(), Tensor({2, 1}, {1, 4}));
  EXPECT_EQ(b.grad(), Tensor({2, 2}, {2, 3, 5, 6}));
  EXPECT_THROW(ad::concat_channels({a, tape.input(Tensor({3, 1}))}), InvalidArgument);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogClassCount) {
  Tape tape;
  const std::vector<int> labels{0, 2};
  Var x = tape.input(Tensor({2, 4}, 0.5));
  Var loss = ad::softmax_cross_entropy(x, labels);
  EXPECT_NEAR(loss.value()[0], std::log(4.0), 1e-15);
  tape.backward(loss);
  EXPECT_NEAR(x.grad()[0], (0.25 - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(x.grad()[1], 0.25 / 2.0, 1e-15);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  Tape tape;
  const std::vector<int> labels{1};
  Var loss = ad::softmax_cross_entropy(tape.input(Tensor({1, 2}, {1000.0, 1000.0})), labels);
  EXPECT_NEAR(loss.value()[0], std::log(2.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeLabel) {
  Tape tape;
  const std::vector<int> labels{3};
  EXPECT_THROW(ad::softmax_cross_entropy(tape.input(Tensor({1, 3})), labels), InvalidArgument);
}

TEST(WeightedGather, HandExample) {
  Tape tape;
  Var x = tape.input(Tensor({2, 2}, {1, 2, 3, 4}));
  Var y = ad::weighted_gather(x, {0, 1, 1, 1}, {0.25, 0.75, 0.5, 0.5}, 2);
  EXPECT_EQ(y.value(), Tensor({2, 2}, {2.5, 3.5, 3.0, 4.0}));
  tape.backward(ad::sum(y));
  EXPECT_EQ(x.grad(), Tensor({2, 2}, {0.25, 0.25, 1.75, 1.75}));
}

TEST(Reshape, PreservesDataAndRejectsSizeChange) {
  Tape tape;
  Var x = tape.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var y = ad::reshape(x, {3, 2});
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ(y.value().data, x.value().data);
  EXPECT_THROW(ad::reshape(x, {4, 2}), InvalidArgument);
}

TEST(Tape, BackwardResetsNodeGradsButAccumulatesParameters) {
  Parameter p("p", Tensor({2}, {1.0, -2.0}));
  Tape tape;
  Var x = tape.input(Tensor({2}, {3.0, 4.0}));
  Var loss = ad::sum(ad::add(x, tape.param(p)));
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_EQ(x.grad(), Tensor({2}, {1.0, 1.0}));
  EXPECT_EQ(p.grad, Tensor({2}, {2.0, 2.0}));
}

TEST(Tape, ConstantsCarryNoGradient) {
  Tape tape;
  Var c = tape.constant(Tensor({2}, {1.0, 2.0}));
  Var loss = ad::sum(ad::relu(c));
  EXPECT_FALSE(tape.requires_grad(loss.id));
  tape.backward(loss);
  EXPECT_EQ(tape.grad_slot(c.id), nullptr);
}

TEST(Tape, ReplayTracksParameterUpdates) {
  Parameter w("w", random_tensor({3, 2}, 11));
  Parameter b("b", random_tensor({2}, 12));
  const Tensor x = random_tensor({4, 3}, 13);
  Tape tape;
  Var y = ad::relu(ad::linear(tape.input(x), tape.param(w), tape.param(b)));
  w.value = random_tensor({3, 2}, 14);
  tape.replay();
  Tape fresh;
  Var z = ad::relu(ad::linear(fresh.input(x), fresh.param(w), fresh.param(b)));
  EXPECT_EQ(y.value(), z.value());
}

TEST(Tape, BackwardIsLinearInSeed) {
  // d(2f)/dx == 2 df/dx exactly, since scaling by 2 is exact.
  const Tensor x0 = random_tensor({3, 4}, 21), w0 = random_tensor({4, 2}, 22);
  auto grad_of = [&](double scale) {
    Tape tape;
    Var x = tape.input(x0);
    Var y = ad::linear(x, tape.constant(w0), tape.constant(Tensor({2})));
    Tensor c = ad::random_projection(y.shape(), 23);
    for (auto& v : c.data) v *= scale;
    tape.backward(ad::dot_constant(y, c));
    return x.grad();
  };
  const Tensor g1 = grad_of(1.0), g2 = grad_of(2.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g2[i], 2.0 * g1[i]);
}

TEST(Tape, OperationsDoNotMutateInputs) {
  const Tensor x0 = random_tensor({2, 2, 3, 3}, 31), w0 = random_tensor({2, 3, 3}, 32);
  Tape tape;
  Var x = tape.input(x0);
  Var y = ad::relu(ad::axis_conv2(x, tape.input(w0), tape.input(Tensor({3}))));
  tape.backward(ad::sum(y));
  EXPECT_EQ(x.value(), x0);
}

TEST(Tape, KinkMarginReportsClosestReluInputAndPoolGap) {
  Tape tape;
  ad::relu(tape.input(Tensor({3}, {0.5, -0.25, 2.0})));
  EXPECT_EQ(tape.kink_margin(), 0.25);
  ad::group_max_pool(tape.input(Tensor({1, 3, 1}, {1.0, 0.875, 1.0})));
  EXPECT_EQ(tape.kink_margin(), 0.125);
}

TEST(Gradcheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(ad::gradient_rel_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(ad::gradient_rel_error(0.0, 1e-6), 1e-6 / ad::kGradcheckFloor);
}

TEST(Gradcheck, DetectsWrongGradient) {
  // Identity forward with a doubled backward must be caught.
  ad::LossBuilder build = [](Tape&, const std::vector<Var>& v) {
    Var x = v[0];
    const std::size_t xi = x.id;
    Var y = x.tape->record(
        {xi}, [=](const Tape& t) { return t.value(xi); },
        [=](Tape& t, const Tensor& g) {
          for (std::size_t i = 0; i < g.size(); ++i) (*t.grad_slot(xi))[i] += 2.0 * g.data[i];
        });
    return ad::sum(y);
  };
  EXPECT_GT(ad::gradcheck(build, {Tensor({3}, 1.0)}).max_rel_error, 0.4);
}

class GradcheckSuiteTest : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradcheckSuiteTest, EveryOperationWithinTolerance) {
  GradcheckSuiteOptions opt;
  opt.instances = 3;
  for (const auto& r : run_gradcheck_suite(GetParam(), opt)) {
    EXPECT_EQ(r.instances, opt.instances) << r.op;
    EXPECT_GT(r.entries, 0u) << r.op;
    EXPECT_LT(r.max_rel_error, 1e-4) << r.op << " worst at " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradcheckSuiteTest, ::testing::Values(1u, 2u));

}  // namespace
}  // namespace pointsift
