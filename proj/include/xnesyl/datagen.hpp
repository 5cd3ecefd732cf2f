#pragma once

// Synthetic scene datasets consistent with a knowledge graph. Each scene is
// an object instance made of regions; each region carries a part label and a
// Gaussian feature vector centered at that part's mean.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"

namespace xnesyl {

struct Region {
  std::size_t part = 0;  // ground-truth part class index
  Eigen::VectorXd features;

  friend bool operator==(const Region& a, const Region& b) {
    return a.part == b.part && a.features.size() == b.features.size() &&
           (a.features.array() == b.features.array()).all();
  }
};

struct SceneInstance {
  std::string id;
  std::size_t object = 0;  // ground-truth object class index
  std::vector<Region> regions;

  friend bool operator==(const SceneInstance&, const SceneInstance&) = default;
};

using Dataset = std::vector<SceneInstance>;

struct GeneratorConfig {
  std::uint64_t seed = 0;
  int feature_dim = 8;
  int regions_min = 2;
  int regions_max = 6;
  double noise_rate = 0.0;
  double separation = 6.0;
  // The first region of a scene is drawn from parts typical of its class
  // only (when the class has any), so every noise-free scene carries at
  // least one class-discriminating part.
  bool anchor_unique_part = true;

  void validate() const {
    if (feature_dim < 2) throw ValidationError("generator: feature dimension must be >= 2");
    if (regions_min < 1) throw ValidationError("generator: region range lower bound must be >= 1");
    if (regions_max < regions_min) throw ValidationError("generator: empty region range");
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
      throw ValidationError("generator: noise rate must lie in [0, 1]");
    }
    if (!(separation > 0.0)) throw ValidationError("generator: separation must be positive");
  }
};

// Part means with pairwise distance >= separation. Candidates are drawn
// around the origin at a scale that keeps the nearest neighbours close to the
// requested separation; the scale grows whenever packing stalls.
inline std::vector<Eigen::VectorXd> place_part_means(std::size_t num_parts, int dim,
                                                     double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  double scale = 1.2 * separation / std::sqrt(2.0 * dim);
  std::vector<Eigen::VectorXd> means;
  int failures = 0;
  while (means.size() < num_parts) {
    Eigen::VectorXd c(dim);
    for (int i = 0; i < dim; ++i) c[i] = scale * normal(rng);
    bool ok = true;
    for (const auto& m : means) {
      if ((m - c).norm() < separation) {
        ok = false;
        break;
      }
    }
    if (ok) {
      means.push_back(std::move(c));
      failures = 0;
    } else if (++failures > 200) {
      scale *= 1.25;
      failures = 0;
    }
  }
  return means;
}

inline Dataset generate_dataset(const KnowledgeGraph& kg, const GeneratorConfig& cfg, std::size_t count) {
  cfg.validate();
  if (count == 0) throw ValidationError("generator: count must be >= 1");

  const std::size_t m = kg.num_objects();
  std::vector<std::vector<std::size_t>> typical(m), atypical(m), unique(m);
  for (std::size_t k = 0; k < m; ++k) {
    typical[k] = kg.typical_parts(k);
    atypical[k] = kg.atypical_parts(k);
    unique[k] = kg.unique_parts(k);
    if (typical[k].empty() && cfg.noise_rate < 1.0) {
      throw ValidationError("generator: object class '" + kg.object_classes()[k] +
                            "' has no typical parts");
    }
    if (atypical[k].empty() && cfg.noise_rate > 0.0) {
      throw ValidationError("generator: object class '" + kg.object_classes()[k] +
                            "' has no atypical parts to draw noise from");
    }
  }

  const auto means = place_part_means(kg.num_parts(), cfg.feature_dim, cfg.separation, cfg.seed);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto pick = [&](const std::vector<std::size_t>& from) {
    std::uniform_int_distribution<std::size_t> idx(0, from.size() - 1);
    return from[idx(rng)];
  };

  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneInstance inst;
    inst.id = "s" + std::to_string(cfg.seed) + "-" + std::to_string(i);
    inst.object = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    const int num_regions = std::uniform_int_distribution<int>(cfg.regions_min, cfg.regions_max)(rng);
    for (int r = 0; r < num_regions; ++r) {
      const bool noisy = unit(rng) < cfg.noise_rate;
      std::size_t part;
      if (noisy) {
        part = pick(atypical[inst.object]);
      } else if (r == 0 && cfg.anchor_unique_part && !unique[inst.object].empty()) {
        part = pick(unique[inst.object]);
      } else {
        part = pick(typical[inst.object]);
      }
      Region region{part, Eigen::VectorXd(cfg.feature_dim)};
      for (int d = 0; d < cfg.feature_dim; ++d) region.features[d] = means[part][d] + normal(rng);
      inst.regions.push_back(std::move(region));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

inline std::string to_jsonl_line(const KnowledgeGraph& kg, const SceneInstance& inst) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : inst.regions) {
    regions.push_back({{"part_class", kg.part_classes()[r.part]},
                       {"features", std::vector<double>(r.features.begin(), r.features.end())}});
  }
  nlohmann::json line = {{"id", inst.id},
                         {"object_class", kg.object_classes()[inst.object]},
                         {"regions", std::move(regions)}};
  return line.dump();
}

inline void write_dataset(const std::string& path, const KnowledgeGraph& kg, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open dataset file '" + path + "' for writing");
  for (const auto& inst : data) out << to_jsonl_line(kg, inst) << '\n';
  if (!out) throw ValidationError("failed writing dataset file '" + path + "'");
}

inline SceneInstance parse_instance(const KnowledgeGraph& kg, const std::string& text, std::size_t line_no) {
  auto fail = [&](const std::string& what) {
    return ValidationError("dataset line " + std::to_string(line_no) + ": " + what);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("object_class") ||
      !j["object_class"].is_string() || !j.contains("regions") || !j["regions"].is_array()) {
    throw fail("expected {\"id\", \"object_class\", \"regions\"}");
  }
  SceneInstance inst;
  inst.id = j["id"].get<std::string>();
  const auto object = j["object_class"].get<std::string>();
  if (!kg.is_object(object)) throw fail("unknown object class '" + object + "'");
  inst.object = kg.object_index(object);
  for (const auto& r : j["regions"]) {
    if (!r.is_object() || !r.contains("part_class") || !r["part_class"].is_string() ||
        !r.contains("features") || !r["features"].is_array()) {
      throw fail("region must be {\"part_class\", \"features\"}");
    }
    const auto part = r["part_class"].get<std::string>();
    if (!kg.is_part(part)) throw fail("unknown part class '" + part + "'");
    Region region{kg.part_index(part), Eigen::VectorXd(static_cast<Eigen::Index>(r["features"].size()))};
    Eigen::Index d = 0;
    for (const auto& x : r["features"]) {
      if (!x.is_number()) throw fail("non-numeric feature value");
      region.features[d] = x.get<double>();
      if (!std::isfinite(region.features[d])) throw fail("non-finite feature value");
      ++d;
    }
    inst.regions.push_back(std::move(region));
  }
  return inst;
}

inline Dataset read_dataset_stream(std::istream& in, const KnowledgeGraph& kg) {
  Dataset out;
  std::string text;
  std::size_t line_no = 0;
  Eigen::Index dim = -1;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto inst = parse_instance(kg, text, line_no);
    for (const auto& r : inst.regions) {
      if (dim < 0) dim = r.features.size();
      if (r.features.size() != dim) {
        throw ValidationError("dataset line " + std::to_string(line_no) + ": feature dimension " +
                              std::to_string(r.features.size()) + " differs from " + std::to_string(dim));
      }
    }
    out.push_back(std::move(inst));
  }
  return out;
}

inline Dataset read_dataset(const std::string& path, const KnowledgeGraph& kg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset file '" + path + "'");
  return read_dataset_stream(in, kg);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// 60/20/20 by rank of the instance-id hash; sizes are exact up to rounding
// and each split keeps the dataset's original order.
inline Splits split_dataset(const Dataset& data) {
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return fnv1a(data[a].id) < fnv1a(data[b].id);
  });
  const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  std::vector<int> bucket(n, 2);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_train) {
      bucket[order[r]] = 0;
    } else if (r < n_train + n_val) {
      bucket[order[r]] = 1;
    }
  }
  Splits s;
  for (std::size_t i = 0; i < n; ++i) {
    (bucket[i] == 0 ? s.train : bucket[i] == 1 ? s.val : s.test).push_back(data[i]);
  }
  return s;
}

}  // namespace xnesyl
