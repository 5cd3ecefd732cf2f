#pragma once

// Shapley attributions of a multi-output model over tabular inputs with
// interventional missing-feature semantics: the value of a coalition T is the
// mean over background rows b of f(x on T, b off T).
//
// exact_shapley enumerates coalitions and is the reference; kernel_shap solves
// the efficiency-constrained weighted least-squares problem over sampled (or
// fully enumerated) coalitions.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"

namespace xnesyl {

// Maps an input vector to per-class outputs.
using Model = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Rows are object classes, columns are parts.
using ShapMatrix = Eigen::MatrixXd;

inline constexpr Eigen::Index kMaxExactFeatures = 16;

struct BackgroundSet {
  std::vector<Eigen::VectorXd> rows;

  explicit BackgroundSet(std::vector<Eigen::VectorXd> r) : rows(std::move(r)) {
    if (rows.empty()) throw ValidationError("background set must not be empty");
    for (const auto& b : rows) {
      if (b.size() != rows.front().size()) throw ValidationError("background rows differ in dimension");
    }
  }

  Eigen::Index dim() const { return rows.front().size(); }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dim());
    for (const auto& b : rows) s += b;
    return s / static_cast<double>(rows.size());
  }

  // Up to `size` rows drawn without replacement, in drawn order.
  static BackgroundSet sample(const std::vector<Eigen::VectorXd>& pool, std::size_t size, std::uint64_t seed) {
    if (pool.empty()) throw ValidationError("background pool is empty");
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(size, pool.size()));
    std::vector<Eigen::VectorXd> rows;
    rows.reserve(idx.size());
    for (auto i : idx) rows.push_back(pool[i]);
    return BackgroundSet(std::move(rows));
  }
};

namespace detail {

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

inline Eigen::VectorXd mean_output(const Model& model, const BackgroundSet& bg) {
  Eigen::VectorXd acc = model(bg.rows.front());
  for (std::size_t b = 1; b < bg.rows.size(); ++b) acc += model(bg.rows[b]);
  return acc / static_cast<double>(bg.rows.size());
}

}  // namespace detail

// All-class exact Shapley values, m x n. Since the coalition value is a mean
// over background rows, the attribution is the mean of single-reference
// games; in each of those only the features where x and b differ are players.
inline ShapMatrix exact_shapley_all(const Model& model, const Eigen::VectorXd& x, const BackgroundSet& bg) {
  const Eigen::Index n = x.size();
  if (n > kMaxExactFeatures) {
    throw ValidationError("exact_shapley: " + std::to_string(n) + " features exceed the enumeration limit of " +
                          std::to_string(kMaxExactFeatures) + "; use kernel_shap");
  }
  if (bg.dim() != n) throw ValidationError("exact_shapley: background dimension does not match input");

  const Eigen::VectorXd fx = model(x);
  const Eigen::Index m = fx.size();
  ShapMatrix phi = ShapMatrix::Zero(m, n);
  std::vector<Eigen::Index> players;
  Eigen::MatrixXd values;  // m x 2^d
  std::vector<double> weight;

  for (const auto& b : bg.rows) {
    players.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (x[j] != b[j]) players.push_back(j);
    }
    const int d = static_cast<int>(players.size());
    if (d == 0) continue;
    const std::size_t masks = std::size_t{1} << d;
    values.resize(m, static_cast<Eigen::Index>(masks));
    Eigen::VectorXd z = b;
    for (std::size_t mask = 0; mask < masks; ++mask) {
      for (int t = 0; t < d; ++t) z[players[t]] = (mask >> t) & 1U ? x[players[t]] : b[players[t]];
      values.col(static_cast<Eigen::Index>(mask)) = mask + 1 == masks ? fx : model(z);
    }
    // |S|! (d - |S| - 1)! / d!
    weight.assign(static_cast<std::size_t>(d), 0.0);
    for (int s = 0; s < d; ++s) weight[static_cast<std::size_t>(s)] = 1.0 / (d * detail::binomial(d - 1, s));
    for (int t = 0; t < d; ++t) {
      const std::size_t bit = std::size_t{1} << t;
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
      for (std::size_t mask = 0; mask < masks; ++mask) {
        if (mask & bit) continue;
        const auto s = static_cast<std::size_t>(std::popcount(mask));
        acc += weight[s] * (values.col(static_cast<Eigen::Index>(mask | bit)) -
                            values.col(static_cast<Eigen::Index>(mask)));
      }
      phi.col(players[t]) += acc;
    }
  }
  return phi / static_cast<double>(bg.rows.size());
}

inline Eigen::VectorXd exact_shapley(const Model& model, const Eigen::VectorXd& x, const BackgroundSet& bg,
                                     Eigen::Index k) {
  ShapMatrix all = exact_shapley_all(model, x, bg);
  if (k < 0 || k >= all.rows()) throw ValidationError("exact_shapley: class index out of range");
  return all.row(k).transpose();
}

// All-class Kernel SHAP, m x n. When `num_samples` covers all 2^n - 2 proper
// coalitions they are enumerated with exact kernel weights; otherwise
// coalition sizes are sampled in proportion to their total kernel mass and
// each sample is paired with its complement.
inline ShapMatrix kernel_shap_all(const Model& model, const Eigen::VectorXd& x, const BackgroundSet& bg,
                                  std::size_t num_samples, std::uint64_t seed) {
  const Eigen::Index n = x.size();
  if (bg.dim() != n) throw ValidationError("kernel_shap: background dimension does not match input");
  if (num_samples < static_cast<std::size_t>(2 * n)) {
    throw ValidationError("kernel_shap: need at least 2n = " + std::to_string(2 * n) + " coalition samples");
  }
  const Eigen::VectorXd fx = model(x);
  const Eigen::VectorXd f0 = detail::mean_output(model, bg);
  const Eigen::Index m = fx.size();
  const Eigen::VectorXd delta = fx - f0;
  if (n == 1) return ShapMatrix(delta);

  // Coalitions as 0/1 rows.
  std::vector<std::vector<char>> coalitions;
  std::vector<double> weights;
  const bool enumerate = n < 31 && num_samples >= (std::size_t{1} << n) - 2;
  if (enumerate) {
    const std::size_t total = std::size_t{1} << n;
    for (std::size_t mask = 1; mask + 1 < total; ++mask) {
      std::vector<char> z(static_cast<std::size_t>(n));
      for (Eigen::Index j = 0; j < n; ++j) z[static_cast<std::size_t>(j)] = (mask >> j) & 1U;
      const int s = std::popcount(mask);
      coalitions.push_back(std::move(z));
      weights.push_back(static_cast<double>(n - 1) / (detail::binomial(static_cast<int>(n), s) * s * (n - s)));
    }
  } else {
    std::vector<double> size_mass(static_cast<std::size_t>(n - 1));
    for (Eigen::Index s = 1; s < n; ++s) {
      size_mass[static_cast<std::size_t>(s - 1)] = static_cast<double>(n - 1) / static_cast<double>(s * (n - s));
    }
    std::mt19937_64 rng(seed);
    std::discrete_distribution<int> size_dist(size_mass.begin(), size_mass.end());
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    while (coalitions.size() < num_samples) {
      const int s = size_dist(rng) + 1;
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<char> z(static_cast<std::size_t>(n), 0);
      for (int t = 0; t < s; ++t) z[static_cast<std::size_t>(idx[static_cast<std::size_t>(t)])] = 1;
      std::vector<char> complement(z.size());
      for (std::size_t j = 0; j < z.size(); ++j) complement[j] = static_cast<char>(1 - z[j]);
      coalitions.push_back(std::move(z));
      weights.push_back(1.0);
      if (coalitions.size() < num_samples) {
        coalitions.push_back(std::move(complement));
        weights.push_back(1.0);
      }
    }
  }

  // Coalition values, mean over background.
  const auto rows = static_cast<Eigen::Index>(coalitions.size());
  Eigen::MatrixXd values(rows, m);
  Eigen::VectorXd z(n);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& c = coalitions[static_cast<std::size_t>(r)];
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
    for (const auto& b : bg.rows) {
      for (Eigen::Index j = 0; j < n; ++j) z[j] = c[static_cast<std::size_t>(j)] ? x[j] : b[j];
      acc += model(z);
    }
    values.row(r) = (acc / static_cast<double>(bg.rows.size())).transpose();
  }

  // Eliminate the last feature through the efficiency constraint
  // phi_last = delta - sum(others).
  Eigen::MatrixXd design(rows, n - 1);
  Eigen::MatrixXd target(rows, m);
  Eigen::VectorXd w(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& c = coalitions[static_cast<std::size_t>(r)];
    const double last = c[static_cast<std::size_t>(n - 1)];
    for (Eigen::Index j = 0; j + 1 < n; ++j) design(r, j) = c[static_cast<std::size_t>(j)] - last;
    target.row(r) = values.row(r) - f0.transpose() - last * delta.transpose();
    w[r] = weights[static_cast<std::size_t>(r)];
  }
  const Eigen::MatrixXd normal = design.transpose() * w.asDiagonal() * design;
  const Eigen::MatrixXd rhs = design.transpose() * w.asDiagonal() * target;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 1e-12 * hi)) {
    std::ostringstream msg;
    msg << "kernel_shap: singular regression system (condition number "
        << (lo > 0 ? hi / lo : std::numeric_limits<double>::infinity()) << " with " << rows
        << " coalitions); increase the number of coalition samples";
    throw NumericalError(msg.str());
  }
  const Eigen::MatrixXd head = normal.ldlt().solve(rhs);  // (n-1) x m

  ShapMatrix phi(m, n);
  phi.leftCols(n - 1) = head.transpose();
  phi.col(n - 1) = delta - head.colwise().sum().transpose();
  return phi;
}

inline Eigen::VectorXd kernel_shap(const Model& model, const Eigen::VectorXd& x, const BackgroundSet& bg,
                                   Eigen::Index k, std::size_t num_samples, std::uint64_t seed) {
  ShapMatrix all = kernel_shap_all(model, x, bg, num_samples, seed);
  if (k < 0 || k >= all.rows()) throw ValidationError("kernel_shap: class index out of range");
  return all.row(k).transpose();
}

// Per-part view of one class's attributions across a dataset.
struct PartSummary {
  std::size_t part = 0;
  std::vector<std::pair<double, double>> points;  // (shap value, feature value)
  double mean_abs_shap = 0.0;
};

// Parts ordered by decreasing mean |SHAP|, ties by part index.
inline std::vector<PartSummary> shap_summary(const std::vector<ShapMatrix>& shap,
                                             const std::vector<Eigen::VectorXd>& features, Eigen::Index k) {
  if (shap.empty() || shap.size() != features.size()) {
    throw ValidationError("shap_summary: need one feature vector per SHAP matrix");
  }
  const auto n = static_cast<std::size_t>(shap.front().cols());
  std::vector<PartSummary> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    out[j].part = j;
    for (std::size_t i = 0; i < shap.size(); ++i) {
      const double s = shap[i](k, static_cast<Eigen::Index>(j));
      out[j].points.emplace_back(s, features[i][static_cast<Eigen::Index>(j)]);
      out[j].mean_abs_shap += std::abs(s);
    }
    out[j].mean_abs_shap /= static_cast<double>(shap.size());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const PartSummary& a, const PartSummary& b) { return a.mean_abs_shap > b.mean_abs_shap; });
  return out;
}

inline void write_summary_csv(std::ostream& os, const KnowledgeGraph& kg, const std::vector<PartSummary>& summary,
                              Eigen::Index k, bool header = true) {
  if (header) os << "part,feature_value,shap_value,class\n";
  os.precision(17);
  for (const auto& ps : summary) {
    for (const auto& [s, f] : ps.points) {
      os << '"' << kg.part_classes()[ps.part] << "\"," << f << ',' << s << ",\""
         << kg.object_classes()[static_cast<std::size_t>(k)] << "\"\n";
    }
  }
}

}  // namespace xnesyl
