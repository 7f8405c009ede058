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

// Optimizers, segmentation metrics and the training loop.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "pointsift/config.hpp"
#include "pointsift/error.hpp"
#include "pointsift/nn.hpp"

namespace pointsift {

// ---------------------------------------------------------------------------
// Optimizer

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, NetworkParams& net) : cfg_(cfg) {
    net.for_each_parameter([&](Parameter& p) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    });
  }

  std::size_t steps() const { return steps_; }

  /// Applies the accumulated gradients and zeroes them.
  void step(NetworkParams& net) {
    ++steps_;
    const double lr = cfg_.learning_rate;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    std::size_t k = 0;
    net.for_each_parameter([&](Parameter& p) {
      auto& val = p.value.data;
      auto& g = p.grad.data;
      if (cfg_.optimizer == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < val.size(); ++i) val[i] -= lr * g[i];
      } else {
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < val.size(); ++i) {
          m[i] = b1 * m[i] + (1.0 - b1) * g[i];
          v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
          val[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_epsilon);
        }
      }
      p.zero_grad();
      ++k;
    });
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Metrics

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }

  void add(int truth, int predicted) {
    if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= classes_ ||
        static_cast<std::size_t>(predicted) >= classes_)
      throw InvalidArgument("confusion matrix: label out of range");
    ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)];
  }

  void add(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw InvalidArgument("confusion matrix: length mismatch");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
  }

  void merge(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct MetricsReport {
  double overall_accuracy = 0.0;
  std::vector<std::optional<double>> per_class_iou;  // nullopt: class absent from truth and prediction
  double mean_iou = 0.0;
  std::uint64_t points = 0;
};

/// IoU_c = TP / (TP + FP + FN); classes with no support anywhere are left
/// undefined and excluded from the mean.
inline MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  const std::size_t c = cm.classes();
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      r.points += cm.at(i, j);
      if (i == j) correct += cm.at(i, j);
    }
  r.overall_accuracy = r.points == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(r.points);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < c; ++o) {
      if (o == k) continue;
      fp += cm.at(o, k);
      fn += cm.at(k, o);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) {
      r.per_class_iou.emplace_back();
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class_iou.emplace_back(iou);
    sum += iou;
    ++defined;
  }
  r.mean_iou = defined == 0 ? 0.0 : sum / static_cast<double>(defined);
  return r;
}

inline MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  ConfusionMatrix cm(classes);
  cm.add(truth, predicted);
  return compute_metrics(cm);
}

// ---------------------------------------------------------------------------
// Evaluation and training

/// FPS seed for one forward pass; only used when the config samples seeded
/// FPS starts.
inline std::uint64_t forward_seed(const NetworkConfig& cfg, std::size_t epoch, std::size_t item) {
  return cfg.seed * 1000003ull + epoch * 7919ull + item;
}

inline std::vector<int> predict(NetworkParams& net, const PointCloud& cloud, std::uint64_t seed = 0) {
  Tape tape;
  auto tr = network_forward(tape, cloud, net, seed);
  return predict_labels(tr.logits.value());
}

/// Confusion-matrix metrics of the network over a labeled dataset. With
/// threads > 1 scenes are split across workers; the result is identical.
inline MetricsReport evaluate(NetworkParams& net, const std::vector<PointCloud>& dataset, std::size_t threads = 1) {
  const std::size_t c = net.config.num_classes;
  threads = std::max<std::size_t>(1, std::min(threads, dataset.size()));
  std::vector<ConfusionMatrix> parts(threads, ConfusionMatrix(c));
  auto work = [&](std::size_t t) {
    for (std::size_t i = t; i < dataset.size(); i += threads) {
      if (!dataset[i].has_labels()) throw InvalidArgument("evaluate: scene without labels");
      parts[t].add(dataset[i].labels, predict(net, dataset[i], forward_seed(net.config, 0, i)));
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  ConfusionMatrix total(c);
  for (const auto& p : parts) total.merge(p);
  return compute_metrics(total);
}

/// Mean cross-entropy of the network over a dataset (no parameter change).
inline double dataset_loss(NetworkParams& net, const std::vector<PointCloud>& dataset) {
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Tape tape;
    auto tr = network_forward(tape, dataset[i], net, forward_seed(net.config, 0, i));
    total += ad::softmax_cross_entropy(tr.logits, dataset[i].labels).value()[0];
  }
  return total / static_cast<double>(dataset.size());
}

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;      // mean training loss over the epoch
  double accuracy = 0.0;  // held-out if an eval set is given, else training
  double miou = 0.0;
};

struct TrainOptions {
  std::size_t epochs = 10;
  const std::vector<PointCloud>* eval_set = nullptr;
  std::function<void(const EpochLog&)> on_epoch;
};

/// One optimizer step per scene, scenes shuffled each epoch with a seeded
/// generator. Fully deterministic for fixed configuration and data.
inline std::vector<EpochLog> train(NetworkParams& net, const TrainConfig& tcfg, const std::vector<PointCloud>& dataset,
                                   const TrainOptions& options) {
  if (dataset.empty()) throw InvalidArgument("train: empty dataset");
  for (const auto& c : dataset)
    if (!c.has_labels()) throw InvalidArgument("train: scene without labels");
  Optimizer opt(tcfg, net);
  std::mt19937_64 rng(tcfg.shuffle_seed);
  std::vector<std::size_t> order(dataset.size());
  std::vector<EpochLog> log;
  net.zero_grad();
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    ConfusionMatrix cm(net.config.num_classes);
    for (std::size_t item : order) {
      const PointCloud& cloud = dataset[item];
      Tape tape;
      auto tr = network_forward(tape, cloud, net, forward_seed(net.config, epoch, item));
      Var loss = ad::softmax_cross_entropy(tr.logits, cloud.labels);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(opt.steps() + 1));
      loss_sum += lv;
      if (!options.eval_set) cm.add(cloud.labels, predict_labels(tr.logits.value()));
      tape.backward(loss);
      opt.step(net);
    }
    EpochLog e;
    e.epoch = epoch;
    e.step = opt.steps();
    e.loss = loss_sum / static_cast<double>(dataset.size());
    const MetricsReport m = options.eval_set ? evaluate(net, *options.eval_set) : compute_metrics(cm);
    e.accuracy = m.overall_accuracy;
    e.miou = m.mean_iou;
    log.push_back(e);
    if (options.on_epoch) options.on_epoch(e);
  }
  return log;
}

}  // namespace pointsift
