#pragma once

// Region-level part detector: a softmax model over region features, its
// per-region weighted cross-entropy, and the two aggregation rules that turn
// a set of detections into the part feature vector fed to the classifier.

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

#include "xnesyl/datagen.hpp"
#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"

namespace xnesyl {

enum class Aggregation { kFrcnn, kRetina };

inline const char* to_string(Aggregation a) { return a == Aggregation::kFrcnn ? "frcnn" : "retina"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "frcnn") return Aggregation::kFrcnn;
  if (s == "retina") return Aggregation::kRetina;
  throw ValidationError("unknown aggregation mode '" + s + "' (expected frcnn or retina)");
}

// Numerically stable softmax.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double top = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

struct PartDetector {
  Eigen::MatrixXd weights;  // d x n
  Eigen::VectorXd bias;     // n
  double learning_rate = 0.05;
  int epochs = 10;
  int batch_size = 16;

  PartDetector() = default;
  PartDetector(int dim, std::size_t num_parts)
      : weights(Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(num_parts))),
        bias(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_parts))) {}

  Eigen::Index dim() const { return weights.rows(); }
  Eigen::Index num_parts() const { return weights.cols(); }

  Eigen::VectorXd probabilities(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) {
      throw ValidationError("detector: region feature dimension " + std::to_string(x.size()) +
                            " does not match detector dimension " + std::to_string(dim()));
    }
    return softmax(weights.transpose() * x + bias);
  }

  friend bool operator==(const PartDetector& a, const PartDetector& b) {
    return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
           (a.weights.array() == b.weights.array()).all() && (a.bias.array() == b.bias.array()).all();
  }
};

struct DetectionSet {
  std::size_t num_parts = 0;
  std::vector<Eigen::VectorXd> probs;  // one distribution per region
};

inline DetectionSet detect(const PartDetector& det, const SceneInstance& inst) {
  DetectionSet ds{static_cast<std::size_t>(det.num_parts()), {}};
  ds.probs.reserve(inst.regions.size());
  for (const auto& r : inst.regions) ds.probs.push_back(det.probabilities(r.features));
  return ds;
}

// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax(const Eigen::VectorXd& p) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < p.size(); ++j) {
    if (p[j] > p[best]) best = j;
  }
  return static_cast<std::size_t>(best);
}

struct FeatureVector {
  Eigen::VectorXd values;
  bool no_detections = false;
};

// Sums, per part, the maximal probability of each region predicting it.
inline FeatureVector aggregate_frcnn(const DetectionSet& ds) {
  FeatureVector fv{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.num_parts)), ds.probs.empty()};
  for (const auto& p : ds.probs) {
    const auto j = static_cast<Eigen::Index>(argmax(p));
    fv.values[j] += p[j];
  }
  return fv;
}

// Sums the full probability vectors of all regions.
inline FeatureVector aggregate_retina(const DetectionSet& ds) {
  FeatureVector fv{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.num_parts)), ds.probs.empty()};
  for (const auto& p : ds.probs) fv.values += p;
  return fv;
}

inline FeatureVector aggregate(const DetectionSet& ds, Aggregation mode) {
  return mode == Aggregation::kFrcnn ? aggregate_frcnn(ds) : aggregate_retina(ds);
}

struct DetectorGradient {
  double loss = 0.0;
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

// Sum over regions of weight_r * cross-entropy(p_r, gt_r) and its exact
// gradient. An empty `weights` span means unit weights.
inline DetectorGradient weighted_roi_loss(const PartDetector& det, const SceneInstance& inst,
                                          std::span<const double> weights) {
  if (!weights.empty() && weights.size() != inst.regions.size()) {
    throw ValidationError("weighted_roi_loss: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(inst.regions.size()) + " regions");
  }
  DetectorGradient g{0.0, Eigen::MatrixXd::Zero(det.dim(), det.num_parts()),
                     Eigen::VectorXd::Zero(det.num_parts())};
  for (std::size_t r = 0; r < inst.regions.size(); ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    if (!(w >= 0.0)) throw ValidationError("weighted_roi_loss: negative region weight");
    const auto& region = inst.regions[r];
    Eigen::VectorXd p = det.probabilities(region.features);
    const auto gt = static_cast<Eigen::Index>(region.part);
    g.loss += w * -std::log(std::max(p[gt], 1e-300));
    // d CE / d logits = p - onehot(gt)
    p[gt] -= 1.0;
    p *= w;
    g.weights.noalias() += region.features * p.transpose();
    g.bias += p;
  }
  return g;
}

// Per-instance, per-region loss weights; empty means all ones.
using RegionWeights = std::vector<std::vector<double>>;

struct DetectorEpoch {
  double mean_loss = 0.0;  // weighted loss per region, accumulated before each step
};

// One pass of mini-batch gradient descent. Instance order is shuffled from
// `shuffle_seed`; steps are normalized by the number of regions in the batch.
inline DetectorEpoch train_detector_epoch(PartDetector& det, const Dataset& data,
                                          const RegionWeights& weights, std::uint64_t shuffle_seed) {
  if (data.empty()) throw ValidationError("train_detector_epoch: empty dataset");
  if (!weights.empty() && weights.size() != data.size()) {
    throw ValidationError("train_detector_epoch: weight list does not match dataset size");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto batch = static_cast<std::size_t>(std::max(1, det.batch_size));
  double total = 0.0;
  std::size_t total_regions = 0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(det.dim(), det.num_parts());
    Eigen::VectorXd gb = Eigen::VectorXd::Zero(det.num_parts());
    std::size_t regions = 0;
    for (std::size_t t = start; t < std::min(order.size(), start + batch); ++t) {
      const auto i = order[t];
      std::span<const double> w;
      if (!weights.empty()) w = weights[i];
      auto g = weighted_roi_loss(det, data[i], w);
      total += g.loss;
      gw += g.weights;
      gb += g.bias;
      regions += data[i].regions.size();
    }
    total_regions += regions;
    if (regions == 0) continue;
    const double step = det.learning_rate / static_cast<double>(regions);
    det.weights -= step * gw;
    det.bias -= step * gb;
  }
  if (!std::isfinite(total)) throw NumericalError("detector training produced a non-finite loss");
  return {total_regions ? total / static_cast<double>(total_regions) : 0.0};
}

// Mean unweighted cross-entropy per region.
inline double detector_loss(const PartDetector& det, const Dataset& data) {
  double total = 0.0;
  std::size_t regions = 0;
  for (const auto& inst : data) {
    for (const auto& r : inst.regions) {
      total -= std::log(std::max(det.probabilities(r.features)[static_cast<Eigen::Index>(r.part)], 1e-300));
      ++regions;
    }
  }
  return regions ? total / static_cast<double>(regions) : 0.0;
}

// Mean over part classes of per-class region accuracy; classes with no
// regions in `data` are skipped.
inline double part_macro_accuracy(const PartDetector& det, const Dataset& data) {
  const auto n = static_cast<std::size_t>(det.num_parts());
  std::vector<std::size_t> seen(n, 0), hit(n, 0);
  for (const auto& inst : data) {
    for (const auto& r : inst.regions) {
      ++seen[r.part];
      if (argmax(det.probabilities(r.features)) == r.part) ++hit[r.part];
    }
  }
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (seen[j] == 0) continue;
    sum += static_cast<double>(hit[j]) / static_cast<double>(seen[j]);
    ++classes;
  }
  if (classes == 0) throw ValidationError("part_macro_accuracy: no regions");
  return sum / static_cast<double>(classes);
}

namespace detail {

inline std::vector<double> flatten_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

inline Eigen::MatrixXd unflatten_row_major(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols,
                                           const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows * cols) {
    throw ValidationError(std::string("checkpoint: '") + what + "' has the wrong number of entries");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r * cols + c)].get<double>();
  }
  return m;
}

inline void check_labels(const nlohmann::json& j, const char* key, const std::vector<std::string>& expected) {
  if (!j.contains(key) || j[key].get<std::vector<std::string>>() != expected) {
    throw ValidationError(std::string("checkpoint: '") + key + "' does not match the knowledge graph");
  }
}

}  // namespace detail

inline nlohmann::json detector_to_json(const PartDetector& det, const KnowledgeGraph& kg) {
  return {{"kind", "part_detector"},
          {"d", det.dim()},
          {"n", det.num_parts()},
          {"part_classes", kg.part_classes()},
          {"weights", detail::flatten_row_major(det.weights)},
          {"bias", std::vector<double>(det.bias.begin(), det.bias.end())},
          {"learning_rate", det.learning_rate},
          {"epochs", det.epochs},
          {"batch_size", det.batch_size}};
}

inline PartDetector detector_from_json(const nlohmann::json& j, const KnowledgeGraph& kg) {
  try {
    if (j.at("kind") != "part_detector") throw ValidationError("checkpoint: not a part detector");
    detail::check_labels(j, "part_classes", kg.part_classes());
    const auto d = j.at("d").get<Eigen::Index>();
    const auto n = j.at("n").get<Eigen::Index>();
    if (n != static_cast<Eigen::Index>(kg.num_parts())) throw ValidationError("checkpoint: part count mismatch");
    PartDetector det;
    det.weights = detail::unflatten_row_major(j.at("weights"), d, n, "weights");
    det.bias = detail::unflatten_row_major(j.at("bias"), n, 1, "bias").col(0);
    det.learning_rate = j.at("learning_rate").get<double>();
    det.epochs = j.at("epochs").get<int>();
    det.batch_size = j.at("batch_size").get<int>();
    return det;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed part detector: ") + e.what());
  }
}

}  // namespace xnesyl
