#pragma once

// Training regimes for the two-stage pipeline (detector, then classifier)
// and their evaluation.
//
// Standard: the detector is trained for all its epochs, then the classifier.
// SHAP-Backprop: after every detector epoch a fresh classifier is trained on
// the current features, explained with SHAP on the training split, and the
// resulting misattribution weights scale the detector loss of the next epoch.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "xnesyl/classify.hpp"
#include "xnesyl/datagen.hpp"
#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"
#include "xnesyl/percept.hpp"
#include "xnesyl/shap.hpp"
#include "xnesyl/xai.hpp"

namespace xnesyl {

enum class TrainMode { kStandard, kShapBackprop };
enum class ShapMode { kExact, kKernel };

struct TrainConfig {
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kStandard;
  std::optional<WeightScheme> scheme;
  Aggregation aggregation = Aggregation::kFrcnn;

  int det_epochs = 10;
  double det_lr = 0.05;
  int det_batch = 16;

  int clf_epochs = 200;
  double clf_lr = 0.05;
  int clf_batch = 32;
  int clf_hidden = 11;
  bool clf_warm_start = false;

  double s = kDefaultDetectionThreshold;
  double v_threshold = kDefaultValueThreshold;
  std::size_t bg_size = 100;
  ShapMode shap = ShapMode::kExact;
  std::size_t kernel_samples = 2048;
  GedMode ged_mode = GedMode::kSymmetric;

  // Replaces every SHAP-derived weight by 1 (neutrality checks).
  bool force_unit_alpha = false;

  void validate() const {
    if (det_epochs < 1 || clf_epochs < 1) throw UsageError("epochs must be >= 1");
    if (!(det_lr > 0.0) || !(clf_lr > 0.0)) throw UsageError("learning rates must be > 0");
    if (bg_size < 1) throw UsageError("background size must be >= 1");
    if (mode == TrainMode::kStandard && scheme) {
      throw UsageError("a weight scheme requires shap-backprop mode");
    }
    if (mode == TrainMode::kShapBackprop && !scheme) {
      throw UsageError("shap-backprop mode requires a weight scheme");
    }
  }

  std::uint64_t detector_seed(int epoch) const { return seed * 0x9E3779B97F4A7C15ULL + 1000ULL + static_cast<std::uint64_t>(epoch); }
  std::uint64_t classifier_seed() const { return seed * 0x9E3779B97F4A7C15ULL + 17ULL; }
  std::uint64_t background_seed() const { return seed * 0x9E3779B97F4A7C15ULL + 29ULL; }
  std::uint64_t kernel_seed(std::size_t instance) const {
    return seed * 0x9E3779B97F4A7C15ULL + 0x100000ULL + instance;
  }

  ClassifierTraining classifier_training() const {
    return {clf_hidden, clf_epochs, clf_lr, 0.9, clf_batch, classifier_seed()};
  }
};

struct EpochTrace {
  int epoch = 0;
  double det_loss = 0.0;
  double alpha_mean = 1.0;  // weights applied during this epoch
  double alpha_max = 1.0;
};

struct Metrics {
  double part_macro_accuracy = 0.0;
  double accuracy = 0.0;
  double mean_shap_ged = 0.0;
  GedReport ged;
};

struct RunArtifacts {
  PartDetector detector;
  MLPClassifier classifier;
  Metrics metrics;
  std::vector<EpochTrace> trace;
};

inline std::vector<Eigen::VectorXd> aggregate_all(const PartDetector& det, const Dataset& data, Aggregation agg,
                                                  std::vector<DetectionSet>* detections = nullptr) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(data.size());
  if (detections) detections->clear();
  for (const auto& inst : data) {
    auto ds = detect(det, inst);
    out.push_back(aggregate(ds, agg).values);
    if (detections) detections->push_back(std::move(ds));
  }
  return out;
}

inline std::vector<LabeledVector> label(const std::vector<Eigen::VectorXd>& features, const Dataset& data) {
  std::vector<LabeledVector> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back({features[i], data[i].object});
  return out;
}

// Allocation-free evaluation of the classifier for repeated SHAP queries.
class ClassifierModel {
 public:
  explicit ClassifierModel(const MLPClassifier& clf)
      : clf_(clf), hidden_(clf.hidden()), logits_(clf.outputs()) {}

  Eigen::VectorXd operator()(const Eigen::VectorXd& v) {
    hidden_.noalias() = clf_.w1 * v;
    hidden_ = (hidden_ + clf_.b1).cwiseMax(0.0);
    logits_.noalias() = clf_.w2 * hidden_;
    logits_ += clf_.b2;
    return softmax(logits_);
  }

 private:
  const MLPClassifier& clf_;
  Eigen::VectorXd hidden_;
  Eigen::VectorXd logits_;
};

inline std::vector<ShapMatrix> explain_all(const MLPClassifier& clf, const std::vector<Eigen::VectorXd>& features,
                                           const BackgroundSet& bg, const TrainConfig& cfg) {
  ClassifierModel eval(clf);
  Model model = [&eval](const Eigen::VectorXd& v) { return eval(v); };
  std::vector<ShapMatrix> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    out.push_back(cfg.shap == ShapMode::kExact
                      ? exact_shapley_all(model, features[i], bg)
                      : kernel_shap_all(model, features[i], bg, cfg.kernel_samples, cfg.kernel_seed(i)));
  }
  return out;
}

inline BackgroundSet make_background(const std::vector<Eigen::VectorXd>& train_features, const TrainConfig& cfg) {
  return BackgroundSet::sample(train_features, cfg.bg_size, cfg.background_seed());
}

inline std::vector<std::string> ids_of(const Dataset& data) {
  std::vector<std::string> ids;
  ids.reserve(data.size());
  for (const auto& inst : data) ids.push_back(inst.id);
  return ids;
}

// Test-split metrics. SHAP values for the graph distance use `background`
// (drawn from the training features).
inline Metrics evaluate(const PartDetector& det, const MLPClassifier& clf, const Dataset& test,
                        const KnowledgeGraph& kg, const BackgroundSet& background, const TrainConfig& cfg) {
  if (test.empty()) throw ValidationError("evaluate: empty test split");
  Metrics m;
  m.part_macro_accuracy = part_macro_accuracy(det, test);
  const auto features = aggregate_all(det, test, cfg.aggregation);
  const auto labeled = label(features, test);
  m.accuracy = accuracy(clf, labeled);
  const auto shap = explain_all(clf, features, background, cfg);
  m.ged = mean_shap_ged(ids_of(test), features, shap, kg, cfg.s, cfg.ged_mode);
  m.mean_shap_ged = m.ged.mean;
  return m;
}

namespace detail {

inline PartDetector fresh_detector(const Dataset& train, const KnowledgeGraph& kg, const TrainConfig& cfg) {
  if (train.empty() || train.front().regions.empty()) throw ValidationError("training split is empty");
  PartDetector det(static_cast<int>(train.front().regions.front().features.size()), kg.num_parts());
  det.learning_rate = cfg.det_lr;
  det.epochs = cfg.det_epochs;
  det.batch_size = cfg.det_batch;
  return det;
}

inline EpochTrace trace_entry(int epoch, double loss, const RegionWeights& weights) {
  EpochTrace t{epoch, loss, 1.0, 1.0};
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& w : weights) {
    for (double a : w) {
      sum += a;
      t.alpha_max = std::max(t.alpha_max, a);
      ++count;
    }
  }
  if (count) t.alpha_mean = sum / static_cast<double>(count);
  return t;
}

}  // namespace detail

inline RunArtifacts train_standard(const KnowledgeGraph& kg, const Splits& splits, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.mode != TrainMode::kStandard) throw UsageError("train_standard: configuration is not in standard mode");
  RunArtifacts run;
  run.detector = detail::fresh_detector(splits.train, kg, cfg);
  for (int e = 1; e <= cfg.det_epochs; ++e) {
    auto res = train_detector_epoch(run.detector, splits.train, {}, cfg.detector_seed(e));
    run.trace.push_back(detail::trace_entry(e, res.mean_loss, {}));
  }
  const auto features = aggregate_all(run.detector, splits.train, cfg.aggregation);
  run.classifier = train_classifier(label(features, splits.train), static_cast<Eigen::Index>(kg.num_objects()),
                                    cfg.classifier_training());
  run.metrics = evaluate(run.detector, run.classifier, splits.test, kg, make_background(features, cfg), cfg);
  return run;
}

inline RunArtifacts train_shap_backprop(const KnowledgeGraph& kg, const Splits& splits, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.mode != TrainMode::kShapBackprop) throw UsageError("train_shap_backprop: scheme required");
  const Eigen::MatrixXd kg_matrix = attribution_matrix(kg);
  const auto num_classes = static_cast<Eigen::Index>(kg.num_objects());

  RunArtifacts run;
  run.detector = detail::fresh_detector(splits.train, kg, cfg);
  RegionWeights weights;  // empty: unit weights in the first epoch
  std::vector<Eigen::VectorXd> features;
  std::optional<MLPClassifier> previous;
  for (int e = 1; e <= cfg.det_epochs; ++e) {
    auto res = train_detector_epoch(run.detector, splits.train, weights, cfg.detector_seed(e));
    run.trace.push_back(detail::trace_entry(e, res.mean_loss, weights));

    std::vector<DetectionSet> detections;
    features = aggregate_all(run.detector, splits.train, cfg.aggregation, &detections);
    run.classifier = train_classifier(label(features, splits.train), num_classes, cfg.classifier_training(), nullptr,
                                      cfg.clf_warm_start && previous ? &*previous : nullptr);
    previous = run.classifier;
    if (e == cfg.det_epochs) break;

    weights.assign(splits.train.size(), {});
    if (cfg.force_unit_alpha) {
      for (std::size_t i = 0; i < splits.train.size(); ++i) weights[i].assign(splits.train[i].regions.size(), 1.0);
      continue;
    }
    const auto shap = explain_all(run.classifier, features, make_background(features, cfg), cfg);
    for (std::size_t i = 0; i < splits.train.size(); ++i) {
      weights[i] = region_weights(shap[i], kg_matrix, features[i], detections[i], splits.train[i].object,
                                  *cfg.scheme, cfg.v_threshold);
    }
  }
  run.metrics = evaluate(run.detector, run.classifier, splits.test, kg, make_background(features, cfg), cfg);
  return run;
}

inline RunArtifacts train(const KnowledgeGraph& kg, const Splits& splits, const TrainConfig& cfg) {
  return cfg.mode == TrainMode::kStandard ? train_standard(kg, splits, cfg) : train_shap_backprop(kg, splits, cfg);
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  return {{"seed", cfg.seed},
          {"mode", cfg.mode == TrainMode::kStandard ? "standard" : "shap-backprop"},
          {"scheme", cfg.scheme ? nlohmann::json(cfg.scheme->name()) : nlohmann::json(nullptr)},
          {"agg", to_string(cfg.aggregation)},
          {"epochs_det", cfg.det_epochs},
          {"epochs_clf", cfg.clf_epochs},
          {"lr_det", cfg.det_lr},
          {"lr_clf", cfg.clf_lr},
          {"batch_det", cfg.det_batch},
          {"batch_clf", cfg.clf_batch},
          {"hidden", cfg.clf_hidden},
          {"warm_start", cfg.clf_warm_start},
          {"h", cfg.scheme ? cfg.scheme->h : kDefaultBalance},
          {"s", cfg.s},
          {"v_threshold", cfg.v_threshold},
          {"bg_size", cfg.bg_size},
          {"shap", cfg.shap == ShapMode::kExact ? "exact" : "kernel"},
          {"kernel_samples", cfg.kernel_samples},
          {"ged_mode", cfg.ged_mode == GedMode::kSymmetric ? "symmetric" : "one-sided"}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig cfg;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "standard" && mode != "shap-backprop") throw ValidationError("config: unknown mode '" + mode + "'");
    cfg.mode = mode == "standard" ? TrainMode::kStandard : TrainMode::kShapBackprop;
    if (!j.at("scheme").is_null()) cfg.scheme = WeightScheme::parse(j.at("scheme").get<std::string>(), j.at("h").get<double>());
    cfg.aggregation = parse_aggregation(j.at("agg").get<std::string>());
    cfg.det_epochs = j.at("epochs_det").get<int>();
    cfg.clf_epochs = j.at("epochs_clf").get<int>();
    cfg.det_lr = j.at("lr_det").get<double>();
    cfg.clf_lr = j.at("lr_clf").get<double>();
    cfg.det_batch = j.at("batch_det").get<int>();
    cfg.clf_batch = j.at("batch_clf").get<int>();
    cfg.clf_hidden = j.at("hidden").get<int>();
    cfg.clf_warm_start = j.value("warm_start", false);
    cfg.s = j.at("s").get<double>();
    cfg.v_threshold = j.at("v_threshold").get<double>();
    cfg.bg_size = j.at("bg_size").get<std::size_t>();
    const auto shap = j.at("shap").get<std::string>();
    if (shap != "exact" && shap != "kernel") throw ValidationError("config: unknown shap mode '" + shap + "'");
    cfg.shap = shap == "exact" ? ShapMode::kExact : ShapMode::kKernel;
    cfg.kernel_samples = j.at("kernel_samples").get<std::size_t>();
    cfg.ged_mode = j.at("ged_mode").get<std::string>() == "one-sided" ? GedMode::kOneSided : GedMode::kSymmetric;
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: malformed run configuration: ") + e.what());
  }
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"part_macro_accuracy", m.part_macro_accuracy},
          {"accuracy", m.accuracy},
          {"mean_shap_ged", m.mean_shap_ged}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  try {
    Metrics m;
    m.part_macro_accuracy = j.at("part_macro_accuracy").get<double>();
    m.accuracy = j.at("accuracy").get<double>();
    m.mean_shap_ged = j.at("mean_shap_ged").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("metrics: malformed report: ") + e.what());
  }
}

inline nlohmann::json report_to_json(const TrainConfig& cfg, const RunArtifacts& run) {
  nlohmann::json per_epoch = nlohmann::json::array();
  for (const auto& t : run.trace) {
    per_epoch.push_back({{"epoch", t.epoch}, {"det_loss", t.det_loss}, {"alpha_mean", t.alpha_mean},
                         {"alpha_max", t.alpha_max}});
  }
  return {{"config", config_to_json(cfg)}, {"metrics", metrics_to_json(run.metrics)}, {"per_epoch", per_epoch}};
}

}  // namespace xnesyl
