#pragma once

// Alignment between empirical attributions and the expert graph: SHAP
// attribution graphs (SAG), misattribution and loss weights, and the
// graph-distance explainability score.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"
#include "xnesyl/percept.hpp"
#include "xnesyl/shap.hpp"

namespace xnesyl {

inline constexpr double kDefaultDetectionThreshold = 0.05;  // s
inline constexpr double kDefaultValueThreshold = 0.0;       // v_threshold
inline constexpr double kDefaultBalance = 1.0;              // h

struct SAG {
  EdgeSet edges;

  // Node set is the union of edge endpoints; isolated nodes never appear.
  NodeSet nodes() const {
    NodeSet n;
    for (const auto& e : edges) {
      n.parts.insert(e.part);
      n.objects.insert(e.object);
    }
    return n;
  }

  friend bool operator==(const SAG&, const SAG&) = default;
};

// Edge (j, k) when part j is present (v_j > s) and pushes towards k, or is
// absent (v_j <= s) and its absence pushes away from k.
inline SAG build_sag(const Eigen::VectorXd& v, const ShapMatrix& shap, double s = kDefaultDetectionThreshold) {
  if (shap.cols() != v.size()) {
    throw ValidationError("build_sag: SHAP matrix has " + std::to_string(shap.cols()) +
                          " columns for a feature vector of size " + std::to_string(v.size()));
  }
  SAG sag;
  for (Eigen::Index k = 0; k < shap.rows(); ++k) {
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      const double sv = shap(k, j);
      const bool present = v[j] > s;
      if ((present && sv > 0.0) || (!present && sv < 0.0)) {
        sag.edges.insert(Edge{static_cast<std::size_t>(j), static_cast<std::size_t>(k)});
      }
    }
  }
  return sag;
}

// beta = (-KG[k][j] * S[k][j])^+ for a detected part (feature value above
// v_threshold); an undetected part never carries misattribution.
inline double misattribution(double shap_value, double kg_sign, double feature_value,
                             double v_threshold = kDefaultValueThreshold) {
  if (!(feature_value > v_threshold)) return 0.0;
  return std::max(0.0, -kg_sign * shap_value);
}

inline double misattribution(const ShapMatrix& shap, const Eigen::MatrixXd& kg_matrix, Eigen::Index k,
                             Eigen::Index j, double feature_value, double v_threshold = kDefaultValueThreshold) {
  return misattribution(shap(k, j), kg_matrix(k, j), feature_value, v_threshold);
}

enum class AlphaForm { kLinear, kExponential };

inline double alpha_bbox(double beta, double h, AlphaForm form) {
  if (!(beta >= 0.0)) throw ValidationError("alpha: misattribution must be >= 0");
  if (!(h > 0.0)) throw ValidationError("alpha: balancing hyperparameter h must be > 0");
  return form == AlphaForm::kLinear ? h * beta + 1.0 : std::exp(h * beta);
}

struct WeightScheme {
  enum class Level { kBBox, kInstance };
  Level level = Level::kInstance;
  AlphaForm form = AlphaForm::kLinear;
  double h = kDefaultBalance;

  static WeightScheme parse(const std::string& name, double h = kDefaultBalance) {
    if (!(h > 0.0)) throw ValidationError("weight scheme: h must be > 0");
    if (name == "linear-bbox") return {Level::kBBox, AlphaForm::kLinear, h};
    if (name == "exp-bbox") return {Level::kBBox, AlphaForm::kExponential, h};
    if (name == "linear-instance") return {Level::kInstance, AlphaForm::kLinear, h};
    if (name == "exp-instance") return {Level::kInstance, AlphaForm::kExponential, h};
    throw ValidationError("unknown weight scheme '" + name +
                          "' (expected linear-bbox, exp-bbox, linear-instance or exp-instance)");
  }

  std::string name() const {
    return std::string(form == AlphaForm::kLinear ? "linear" : "exp") +
           (level == Level::kBBox ? "-bbox" : "-instance");
  }
};

// max over parts j of alpha_bbox(beta(k = gt_object, j)).
inline double alpha_instance(const ShapMatrix& shap, const Eigen::MatrixXd& kg_matrix, const Eigen::VectorXd& v,
                             std::size_t gt_object, double h, AlphaForm form,
                             double v_threshold = kDefaultValueThreshold) {
  const auto k = static_cast<Eigen::Index>(gt_object);
  double alpha = 1.0;
  for (Eigen::Index j = 0; j < shap.cols(); ++j) {
    alpha = std::max(alpha, alpha_bbox(misattribution(shap, kg_matrix, k, j, v[j], v_threshold), h, form));
  }
  return alpha;
}

// Per-region loss weights. BBox schemes use the region's predicted part;
// instance schemes broadcast one value to all regions.
inline std::vector<double> region_weights(const ShapMatrix& shap, const Eigen::MatrixXd& kg_matrix,
                                          const Eigen::VectorXd& v, const DetectionSet& detections,
                                          std::size_t gt_object, const WeightScheme& scheme,
                                          double v_threshold = kDefaultValueThreshold) {
  if (scheme.level == WeightScheme::Level::kInstance) {
    return std::vector<double>(detections.probs.size(),
                               alpha_instance(shap, kg_matrix, v, gt_object, scheme.h, scheme.form, v_threshold));
  }
  const auto k = static_cast<Eigen::Index>(gt_object);
  std::vector<double> out;
  out.reserve(detections.probs.size());
  for (const auto& p : detections.probs) {
    const auto j = static_cast<Eigen::Index>(argmax(p));
    out.push_back(alpha_bbox(misattribution(shap, kg_matrix, k, j, v[j], v_threshold), scheme.h, scheme.form));
  }
  return out;
}

enum class GedMode { kSymmetric, kOneSided };

// Distance between a SAG and the expert graph restricted to the SAG's nodes:
// size of the edge-set symmetric difference, or only the SAG edges absent
// from the projection in one-sided mode.
inline std::size_t shap_ged(const SAG& sag, const KnowledgeGraph& kg, GedMode mode = GedMode::kSymmetric) {
  for (const auto& e : sag.edges) {
    if (e.part >= kg.num_parts() || e.object >= kg.num_objects()) {
      throw ValidationError("shap_ged: SAG edge outside the knowledge graph");
    }
  }
  const EdgeSet proj = project(kg, sag.nodes());
  std::size_t extra = 0;
  for (const auto& e : sag.edges) extra += proj.contains(e) ? 0 : 1;
  if (mode == GedMode::kOneSided) return extra;
  std::size_t missing = 0;
  for (const auto& e : proj) missing += sag.edges.contains(e) ? 0 : 1;
  return extra + missing;
}

struct GedReport {
  std::vector<std::string> ids;
  std::vector<std::size_t> ged;
  double mean = 0.0;
};

inline GedReport mean_shap_ged(const std::vector<std::string>& ids, const std::vector<Eigen::VectorXd>& features,
                               const std::vector<ShapMatrix>& shap, const KnowledgeGraph& kg,
                               double s = kDefaultDetectionThreshold, GedMode mode = GedMode::kSymmetric) {
  if (features.empty()) throw ValidationError("mean_shap_ged: empty test split");
  if (features.size() != shap.size() || ids.size() != shap.size()) {
    throw ValidationError("mean_shap_ged: ids, features and SHAP rows differ in count");
  }
  GedReport r{ids, {}, 0.0};
  double total = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    r.ged.push_back(shap_ged(build_sag(features[i], shap[i], s), kg, mode));
    total += static_cast<double>(r.ged.back());
  }
  r.mean = total / static_cast<double>(features.size());
  return r;
}

inline nlohmann::json to_json(const GedReport& r) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < r.ids.size(); ++i) j[r.ids[i]] = r.ged[i];
  j["mean"] = r.mean;
  return j;
}

inline nlohmann::json sag_to_json(const SAG& sag, const KnowledgeGraph& kg) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : sag.edges) edges.push_back({kg.part_classes()[e.part], kg.object_classes()[e.object]});
  return {{"edges", std::move(edges)}};
}

inline SAG sag_from_json(const nlohmann::json& j, const KnowledgeGraph& kg) {
  if (!j.is_object() || !j.contains("edges") || !j["edges"].is_array()) {
    throw ValidationError("SAG JSON must be {\"edges\": [[part, object], ...]}");
  }
  SAG sag;
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2) throw ValidationError("SAG edge must be [part, object]");
    sag.edges.insert(Edge{kg.part_index(e[0].get<std::string>()), kg.object_index(e[1].get<std::string>())});
  }
  return sag;
}

// Parts are boxes, object classes are ellipses; edges run part -> object.
inline void write_sag_dot(std::ostream& os, const SAG& sag, const KnowledgeGraph& kg,
                          const std::string& name = "SAG") {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out + "\"";
  };
  const NodeSet nodes = sag.nodes();
  os << "digraph " << quote(name) << " {\n";
  for (auto j : nodes.parts) os << "  " << quote(kg.part_classes()[j]) << " [shape=box];\n";
  for (auto k : nodes.objects) os << "  " << quote(kg.object_classes()[k]) << " [shape=ellipse];\n";
  for (const auto& e : sag.edges) {
    os << "  " << quote(kg.part_classes()[e.part]) << " -> " << quote(kg.object_classes()[e.object]) << ";\n";
  }
  os << "}\n";
}

}  // namespace xnesyl
