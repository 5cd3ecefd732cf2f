#pragma once

// Expert knowledge graphs: bipartite "typical-of" relations between part
// classes and object classes, with a signed attribution-matrix view.

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "xnesyl/error.hpp"

namespace xnesyl {

// A typical-of edge, by index into the graph's label lists.
struct Edge {
  std::size_t part = 0;
  std::size_t object = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

using EdgeSet = std::set<Edge>;

class KnowledgeGraph {
 public:
  KnowledgeGraph(std::vector<std::string> object_classes,
                 std::vector<std::string> part_classes,
                 const std::vector<std::pair<std::string, std::string>>& typical_of)
      : objects_(std::move(object_classes)), parts_(std::move(part_classes)) {
    if (objects_.empty()) throw ValidationError("knowledge graph: empty object_classes list");
    if (parts_.empty()) throw ValidationError("knowledge graph: empty part_classes list");
    if (objects_.size() < 2) {
      throw ValidationError("knowledge graph: at least two object classes are required, got '" +
                            objects_.front() + "' only");
    }
    index_labels(objects_, object_index_, "object class");
    index_labels(parts_, part_index_, "part class");
    for (const auto& label : objects_) {
      if (part_index_.contains(label)) {
        throw ValidationError("knowledge graph: label '" + label +
                              "' declared both as object and part class");
      }
    }
    for (const auto& [part, object] : typical_of) {
      auto p = part_index_.find(part);
      if (p == part_index_.end()) {
        throw ValidationError("knowledge graph: edge endpoint '" + part +
                              "' is not a declared part class");
      }
      auto o = object_index_.find(object);
      if (o == object_index_.end()) {
        throw ValidationError("knowledge graph: edge endpoint '" + object +
                              "' is not a declared object class");
      }
      if (!edges_.insert(Edge{p->second, o->second}).second) {
        throw ValidationError("knowledge graph: duplicate edge ('" + part + "', '" + object + "')");
      }
    }
  }

  const std::vector<std::string>& object_classes() const { return objects_; }
  const std::vector<std::string>& part_classes() const { return parts_; }
  const EdgeSet& edges() const { return edges_; }

  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_parts() const { return parts_.size(); }

  bool has_edge(std::size_t part, std::size_t object) const {
    return edges_.contains(Edge{part, object});
  }

  std::size_t object_index(std::string_view label) const {
    auto it = object_index_.find(std::string(label));
    if (it == object_index_.end()) {
      throw ValidationError("unknown object class '" + std::string(label) + "'");
    }
    return it->second;
  }

  std::size_t part_index(std::string_view label) const {
    auto it = part_index_.find(std::string(label));
    if (it == part_index_.end()) {
      throw ValidationError("unknown part class '" + std::string(label) + "'");
    }
    return it->second;
  }

  bool is_object(std::string_view label) const { return object_index_.contains(std::string(label)); }
  bool is_part(std::string_view label) const { return part_index_.contains(std::string(label)); }

  // Parts typical of `object`, in part declaration order.
  std::vector<std::size_t> typical_parts(std::size_t object) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < parts_.size(); ++j) {
      if (has_edge(j, object)) out.push_back(j);
    }
    return out;
  }

  std::vector<std::size_t> atypical_parts(std::size_t object) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < parts_.size(); ++j) {
      if (!has_edge(j, object)) out.push_back(j);
    }
    return out;
  }

  // Parts typical of `object` and of no other class.
  std::vector<std::size_t> unique_parts(std::size_t object) const {
    std::vector<std::size_t> out;
    for (std::size_t j : typical_parts(object)) {
      bool shared = false;
      for (std::size_t k = 0; k < objects_.size(); ++k) {
        if (k != object && has_edge(j, k)) shared = true;
      }
      if (!shared) out.push_back(j);
    }
    return out;
  }

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.objects_ == b.objects_ && a.parts_ == b.parts_ && a.edges_ == b.edges_;
  }

 private:
  static void index_labels(const std::vector<std::string>& labels,
                           std::map<std::string, std::size_t>& index, const char* what) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].empty()) throw ValidationError(std::string("knowledge graph: empty ") + what + " label");
      if (!index.emplace(labels[i], i).second) {
        throw ValidationError(std::string("knowledge graph: duplicate ") + what + " label '" +
                              labels[i] + "'");
      }
    }
  }

  std::vector<std::string> objects_;
  std::vector<std::string> parts_;
  std::map<std::string, std::size_t> object_index_;
  std::map<std::string, std::size_t> part_index_;
  EdgeSet edges_;
};

// Parses the KG JSON document:
//   {"object_classes": [...], "part_classes": [...], "typical_of": [[part, object], ...]}
// An optional third element on an edge is accepted only if it equals 1.
inline KnowledgeGraph load_kg(std::string_view source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("knowledge graph: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("knowledge graph: document must be a JSON object");

  auto string_list = [&](const char* key) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      throw ValidationError(std::string("knowledge graph: missing array '") + key + "'");
    }
    std::vector<std::string> out;
    for (const auto& item : doc[key]) {
      if (!item.is_string()) {
        throw ValidationError(std::string("knowledge graph: non-string label in '") + key + "'");
      }
      out.push_back(item.get<std::string>());
    }
    return out;
  };

  auto objects = string_list("object_classes");
  auto parts = string_list("part_classes");

  std::vector<std::pair<std::string, std::string>> edges;
  if (doc.contains("typical_of")) {
    const auto& list = doc["typical_of"];
    if (!list.is_array()) throw ValidationError("knowledge graph: 'typical_of' must be an array");
    for (const auto& e : list) {
      if (!e.is_array() || e.size() < 2 || e.size() > 3 || !e[0].is_string() || !e[1].is_string()) {
        throw ValidationError("knowledge graph: each edge must be [part, object], got " + e.dump());
      }
      if (e.size() == 3 && !(e[2].is_number() && e[2].get<double>() == 1.0)) {
        throw ValidationError("knowledge graph: non-binary edge weight on ('" +
                              e[0].get<std::string>() + "', '" + e[1].get<std::string>() + "')");
      }
      edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
  }
  return KnowledgeGraph(std::move(objects), std::move(parts), edges);
}

inline nlohmann::json to_json(const KnowledgeGraph& kg) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : kg.edges()) {
    edges.push_back({kg.part_classes()[e.part], kg.object_classes()[e.object]});
  }
  return {{"object_classes", kg.object_classes()},
          {"part_classes", kg.part_classes()},
          {"typical_of", std::move(edges)}};
}

inline std::string serialize(const KnowledgeGraph& kg) { return to_json(kg).dump(2); }

// m x n signed matrix, rows are object classes and columns are parts.
inline Eigen::MatrixXd attribution_matrix(const KnowledgeGraph& kg) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(
      static_cast<Eigen::Index>(kg.num_objects()), static_cast<Eigen::Index>(kg.num_parts()), -1.0);
  for (const auto& e : kg.edges()) {
    m(static_cast<Eigen::Index>(e.object), static_cast<Eigen::Index>(e.part)) = 1.0;
  }
  return m;
}

// Node set over both label spaces, by index.
struct NodeSet {
  std::set<std::size_t> parts;
  std::set<std::size_t> objects;

  bool empty() const { return parts.empty() && objects.empty(); }
};

inline EdgeSet project(const KnowledgeGraph& kg, const NodeSet& nodes) {
  EdgeSet out;
  for (const auto& e : kg.edges()) {
    if (nodes.parts.contains(e.part) && nodes.objects.contains(e.object)) out.insert(e);
  }
  return out;
}

inline EdgeSet project(const KnowledgeGraph& kg, const std::set<std::string>& labels) {
  NodeSet nodes;
  for (const auto& label : labels) {
    if (kg.is_part(label)) {
      nodes.parts.insert(kg.part_index(label));
    } else if (kg.is_object(label)) {
      nodes.objects.insert(kg.object_index(label));
    } else {
      throw ValidationError("projection: unknown label '" + label + "'");
    }
  }
  return project(kg, nodes);
}

class NoEvidenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct KgDecision {
  std::size_t object = 0;
  std::vector<double> confidence;  // normalized, sums to 1
  bool tie = false;
};

// Rule-based baseline: each class scores the summed evidence of its typical
// parts; the scores are normalized and the argmax wins, lowest index on ties.
inline KgDecision deterministic_classify(const KnowledgeGraph& kg, std::span<const double> v) {
  if (v.size() != kg.num_parts()) {
    throw ValidationError("deterministic_classify: feature vector has dimension " +
                          std::to_string(v.size()) + ", expected " + std::to_string(kg.num_parts()));
  }
  for (double x : v) {
    if (!(x >= 0.0)) throw ValidationError("deterministic_classify: negative or NaN feature value");
  }
  KgDecision out;
  out.confidence.assign(kg.num_objects(), 0.0);
  for (const auto& e : kg.edges()) out.confidence[e.object] += v[e.part];
  double total = 0.0;
  for (double c : out.confidence) total += c;
  if (total <= 0.0) {
    throw NoEvidenceError("deterministic_classify: no evidence for any object class");
  }
  for (double& c : out.confidence) c /= total;
  auto best = std::max_element(out.confidence.begin(), out.confidence.end());
  out.object = static_cast<std::size_t>(best - out.confidence.begin());
  out.tie = std::count(out.confidence.begin(), out.confidence.end(), *best) > 1;
  return out;
}

}  // namespace xnesyl
