#pragma once
// Synthetic worlds with generative, correlated-redundant and noise variables,
// and the two agreement scores used to evaluate them.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "damda/gaussian.hpp"

namespace damda {

class Rng;

enum class VarRole { Gen, Cor, Noi };
std::string_view to_string(VarRole r);

struct ScenarioConfig {
  std::string name = "scenario";
  std::size_t n_gen = 10;
  std::size_t n_cor = 30;
  std::size_t n_noi = 60;
  std::vector<double> proportions = {0.3, 0.4, 0.4, 0.3};  // normalised at generation
  std::vector<double> mean_half_ranges = {7.0, 4.5, 0.5, 10.0};
  std::vector<std::size_t> wishart_df_offset = {0, 2, 1, 0};  // df = n_gen + offset
  std::vector<double> wishart_offdiag = {0.7, 0.0, 0.5, 0.0};
  double covariance_scale = 1.0;  // multiplies every Wishart draw
  bool noi_correlated = true;
  double noi_offdiag = 0.5;
  std::size_t train_size = 200;
  std::size_t test_size = 200;
  std::size_t hidden_classes_removed = 2;
  /// "1.a" .. "3.c", "all" (every variable observed) or "prefix" (the first
  /// n_observed columns in gen, cor, noi order).
  std::string observed_rule = "1.a";
  std::size_t n_observed = 20;
  /// Minimum pairwise Mahalanobis distance between class means under the
  /// pooled covariance, in the Gen block; means are redrawn until it holds.
  double min_separation = 0.0;
  std::uint64_t seed = 0;

  std::size_t classes() const { return proportions.size(); }
  std::size_t R() const { return n_gen + n_cor + n_noi; }
  void validate() const;  // throws ConfigError
};

struct GeneratedWorld {
  MatrixXd x_train;               // M x P
  std::vector<int> labels_train;  // true class ids (observed classes only)
  MatrixXd y_test;                // N x R
  std::vector<int> labels_test;   // true class ids
  std::vector<std::string> variable_names;  // R names
  std::vector<VarRole> roles;               // R
  std::vector<bool> observed;               // R, P entries true
  std::vector<int> observed_classes;        // ascending
  std::vector<std::vector<std::size_t>> cor_parents;  // per Cor column, two Gen indices
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covs;

  std::vector<std::string> train_names() const;
};

/// Bartlett draw from W(df, scale). Throws NotPositiveDefinite for a bad
/// scale and ConfigError for df < dim.
MatrixXd sample_wishart(double df, const MatrixXd& scale, Rng& rng);
MatrixXd sample_wishart(double df, const MatrixXd& scale, std::uint64_t seed);

GeneratedWorld generate_world(const ScenarioConfig& config);

/// Hubert-Arabie adjusted Rand index. Throws DimensionMismatch.
double ari(std::span<const int> a, std::span<const int> b);

/// Fraction of rows misclassified after greedy one-to-one matching of
/// predicted to true labels by descending contingency count (ties: smaller
/// true label, then smaller predicted label).
double matched_error(std::span<const int> truth, std::span<const int> pred);

}  // namespace damda
