#pragma once

// Object classifier over aggregated part vectors: n -> hidden (ReLU) -> m
// softmax, trained by mini-batch SGD with momentum on cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"
#include "xnesyl/percept.hpp"

namespace xnesyl {

struct MLPClassifier {
  Eigen::MatrixXd w1;  // hidden x n
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // m x hidden
  Eigen::VectorXd b2;

  MLPClassifier() = default;
  MLPClassifier(Eigen::Index inputs, Eigen::Index hidden, Eigen::Index outputs)
      : w1(Eigen::MatrixXd::Zero(hidden, inputs)),
        b1(Eigen::VectorXd::Zero(hidden)),
        w2(Eigen::MatrixXd::Zero(outputs, hidden)),
        b2(Eigen::VectorXd::Zero(outputs)) {}

  Eigen::Index inputs() const { return w1.cols(); }
  Eigen::Index hidden() const { return w1.rows(); }
  Eigen::Index outputs() const { return w2.rows(); }

  // He-uniform first layer, Glorot-uniform output layer, zero biases.
  static MLPClassifier initialized(Eigen::Index inputs, Eigen::Index hidden, Eigen::Index outputs,
                                   std::uint64_t seed) {
    MLPClassifier c(inputs, hidden, outputs);
    std::mt19937_64 rng(seed);
    const double a1 = std::sqrt(6.0 / static_cast<double>(inputs));
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + outputs));
    std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
    for (Eigen::Index i = 0; i < c.w1.size(); ++i) c.w1.data()[i] = u1(rng);
    for (Eigen::Index i = 0; i < c.w2.size(); ++i) c.w2.data()[i] = u2(rng);
    return c;
  }

  friend bool operator==(const MLPClassifier& a, const MLPClassifier& b) {
    auto same = [](const auto& x, const auto& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && (x.array() == y.array()).all();
    };
    return same(a.w1, b.w1) && same(a.b1, b.b1) && same(a.w2, b.w2) && same(a.b2, b.b2);
  }
};

inline Eigen::VectorXd forward(const MLPClassifier& clf, const Eigen::VectorXd& v) {
  if (v.size() != clf.inputs()) {
    throw ValidationError("classifier: input dimension " + std::to_string(v.size()) + ", expected " +
                          std::to_string(clf.inputs()));
  }
  Eigen::VectorXd h = (clf.w1 * v + clf.b1).cwiseMax(0.0);
  return softmax(clf.w2 * h + clf.b2);
}

struct LabeledVector {
  Eigen::VectorXd v;
  std::size_t label = 0;
};

struct ClassifierGradient {
  double loss = 0.0;  // summed cross-entropy
  MLPClassifier grad;
};

// Summed cross-entropy over `batch` and its exact gradient.
inline ClassifierGradient classifier_loss(const MLPClassifier& clf, std::span<const LabeledVector> batch) {
  ClassifierGradient out{0.0, MLPClassifier(clf.inputs(), clf.hidden(), clf.outputs())};
  auto& g = out.grad;
  for (const auto& [v, label] : batch) {
    if (v.size() != clf.inputs()) throw ValidationError("classifier: input dimension mismatch");
    if (label >= static_cast<std::size_t>(clf.outputs())) throw ValidationError("classifier: label out of range");
    const Eigen::VectorXd pre = clf.w1 * v + clf.b1;
    const Eigen::VectorXd h = pre.cwiseMax(0.0);
    Eigen::VectorXd delta2 = softmax(clf.w2 * h + clf.b2);
    const auto y = static_cast<Eigen::Index>(label);
    out.loss -= std::log(std::max(delta2[y], 1e-300));
    delta2[y] -= 1.0;
    g.w2.noalias() += delta2 * h.transpose();
    g.b2 += delta2;
    Eigen::VectorXd delta1 = clf.w2.transpose() * delta2;
    for (Eigen::Index i = 0; i < delta1.size(); ++i) {
      if (pre[i] <= 0.0) delta1[i] = 0.0;
    }
    g.w1.noalias() += delta1 * v.transpose();
    g.b1 += delta1;
  }
  return out;
}

struct ClassifierTraining {
  int hidden = 11;
  int epochs = 200;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

// Trains a classifier from a seeded initialization, or from `init` when
// given. `per_epoch_loss`, when given, receives the mean loss of every epoch.
inline MLPClassifier train_classifier(const std::vector<LabeledVector>& data, Eigen::Index num_classes,
                                      const ClassifierTraining& cfg,
                                      std::vector<double>* per_epoch_loss = nullptr,
                                      const MLPClassifier* init = nullptr) {
  if (data.empty()) throw ValidationError("train_classifier: empty training set");
  if (cfg.epochs < 1) throw ValidationError("train_classifier: epochs must be >= 1");
  const Eigen::Index n = data.front().v.size();
  auto clf = init ? *init : MLPClassifier::initialized(n, cfg.hidden, num_classes, cfg.seed);
  if (clf.inputs() != n || clf.outputs() != num_classes) {
    throw ValidationError("train_classifier: initial classifier has the wrong shape");
  }
  MLPClassifier velocity(n, clf.hidden(), num_classes);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  std::vector<LabeledVector> chunk;
  chunk.reserve(batch);

  auto step = [&](auto& param, auto& vel, const auto& grad, double scale) {
    vel = cfg.momentum * vel - scale * grad;
    param += vel;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      chunk.clear();
      for (std::size_t t = start; t < std::min(order.size(), start + batch); ++t) chunk.push_back(data[order[t]]);
      auto g = classifier_loss(clf, chunk);
      total += g.loss;
      const double scale = cfg.learning_rate / static_cast<double>(chunk.size());
      step(clf.w1, velocity.w1, g.grad.w1, scale);
      step(clf.b1, velocity.b1, g.grad.b1, scale);
      step(clf.w2, velocity.w2, g.grad.w2, scale);
      step(clf.b2, velocity.b2, g.grad.b2, scale);
    }
    if (!std::isfinite(total)) {
      throw NumericalError("train_classifier: non-finite loss at epoch " + std::to_string(epoch + 1));
    }
    if (per_epoch_loss) per_epoch_loss->push_back(total / static_cast<double>(data.size()));
  }
  return clf;
}

inline double accuracy(const MLPClassifier& clf, std::span<const LabeledVector> data) {
  if (data.empty()) throw ValidationError("accuracy: empty evaluation set");
  std::size_t correct = 0;
  for (const auto& [v, label] : data) {
    if (argmax(forward(clf, v)) == label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline nlohmann::json classifier_to_json(const MLPClassifier& clf, const KnowledgeGraph& kg) {
  return {{"kind", "mlp_classifier"},
          {"n", clf.inputs()},
          {"hidden", clf.hidden()},
          {"m", clf.outputs()},
          {"part_classes", kg.part_classes()},
          {"object_classes", kg.object_classes()},
          {"w1", detail::flatten_row_major(clf.w1)},
          {"b1", std::vector<double>(clf.b1.begin(), clf.b1.end())},
          {"w2", detail::flatten_row_major(clf.w2)},
          {"b2", std::vector<double>(clf.b2.begin(), clf.b2.end())}};
}

inline MLPClassifier classifier_from_json(const nlohmann::json& j, const KnowledgeGraph& kg) {
  try {
    if (j.at("kind") != "mlp_classifier") throw ValidationError("checkpoint: not an MLP classifier");
    detail::check_labels(j, "part_classes", kg.part_classes());
    detail::check_labels(j, "object_classes", kg.object_classes());
    const auto n = j.at("n").get<Eigen::Index>();
    const auto h = j.at("hidden").get<Eigen::Index>();
    const auto m = j.at("m").get<Eigen::Index>();
    MLPClassifier c;
    c.w1 = detail::unflatten_row_major(j.at("w1"), h, n, "w1");
    c.b1 = detail::unflatten_row_major(j.at("b1"), h, 1, "b1").col(0);
    c.w2 = detail::unflatten_row_major(j.at("w2"), m, h, "w2");
    c.b2 = detail::unflatten_row_major(j.at("b2"), m, 1, "b2").col(0);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed classifier: ") + e.what());
  }
}

}  // namespace xnesyl
