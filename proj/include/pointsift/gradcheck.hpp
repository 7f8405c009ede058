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

// Central finite-difference checks of tape gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pointsift/autodiff.hpp"

namespace pointsift::ad {

/// Entries whose magnitude is below this floor are compared absolutely.
inline constexpr double kGradcheckFloor = 1e-5;

/// A gradient passes when its relative error is below this bound.
inline constexpr double kGradcheckTolerance = 1e-4;

inline double gradient_rel_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) /
         std::max({std::fabs(analytic), std::fabs(numeric), kGradcheckFloor});
}

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "input 0[3]" or "param down1.sa.mlp0.W[12]"
  std::size_t checked = 0;
};

/// Builds a scalar loss on a fresh tape from the given input leaves.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>& inputs)>;

/// Compares the analytic gradient of `build` with central differences of
/// step `step`, for every element of every input tensor and every parameter
/// in `params` (parameters must be bound inside `build` via Tape::param).
inline GradcheckResult gradcheck(const LossBuilder& build, std::vector<Tensor> inputs,
                                 const std::vector<Parameter*>& params = {}, double step = 1e-5) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* input_grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    Var loss = build(tape, vars);
    if (loss.value().size() != 1) throw InvalidArgument("gradcheck: loss must be scalar");
    const double value = loss.value()[0];
    if (with_grad) {
      tape.backward(loss);
      for (const auto& v : vars) input_grads->push_back(v.grad());
    }
    return value;
  };

  for (auto* p : params) {
    p->grad = Tensor(p->value.shape);
  }
  std::vector<Tensor> input_grads;
  evaluate(true, &input_grads);
  std::vector<Tensor> param_grads;
  for (auto* p : params) param_grads.push_back(p->grad);

  GradcheckResult result;
  auto consider = [&](double analytic, double numeric, const std::string& where) {
    const double err = gradient_rel_error(analytic, numeric);
    ++result.checked;
    if (err > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = err;
      result.worst = where;
    }
  };

  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double saved = inputs[a].data[i];
      inputs[a].data[i] = saved + step;
      const double plus = evaluate(false, nullptr);
      inputs[a].data[i] = saved - step;
      const double minus = evaluate(false, nullptr);
      inputs[a].data[i] = saved;
      const double analytic = input_grads[a].size() == 0 ? 0.0 : input_grads[a].data[i];
      consider(analytic, (plus - minus) / (2.0 * step),
               "input " + std::to_string(a) + "[" + std::to_string(i) + "]");
    }
  }
  for (std::size_t a = 0; a < params.size(); ++a) {
    auto& values = params[a]->value.data;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = evaluate(false, nullptr);
      values[i] = saved - step;
      const double minus = evaluate(false, nullptr);
      values[i] = saved;
      consider(param_grads[a].data[i], (plus - minus) / (2.0 * step),
               "param " + params[a]->name + "[" + std::to_string(i) + "]");
    }
  }
  for (auto* p : params) p->zero_grad();
  return result;
}

/// A fixed random projection turning any tensor output into a scalar loss.
inline Tensor random_projection(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t(shape);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

}  // namespace pointsift::ad
