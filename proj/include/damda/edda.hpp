#pragma once
// Learning phase: eigenvalue-decomposition discriminant analysis on fully
// labelled data, with the covariance structure chosen by BIC.

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "damda/gaussian.hpp"

namespace damda {

/// Covariance structures in mclust nomenclature (volume, shape, orientation;
/// E = equal across classes, V = varying, I = identity).
enum class CovStructure { EII, VII, EEI, VVI, EEE, VVV };

inline constexpr std::array<CovStructure, 6> kAllStructures = {
    CovStructure::EII, CovStructure::VII, CovStructure::EEI,
    CovStructure::VVI, CovStructure::EEE, CovStructure::VVV};

std::string_view to_string(CovStructure s);
CovStructure parse_structure(std::string_view name);  // throws ConfigError

/// Free covariance parameters of a structure with K classes in P dimensions.
std::size_t covariance_parameter_count(CovStructure s, std::size_t k, std::size_t p);
/// (K - 1) proportions + K P means + covariance parameters.
std::size_t edda_parameter_count(CovStructure s, std::size_t k, std::size_t p);

struct EddaModel {
  std::size_t K = 0;
  std::size_t P = 0;
  VectorXd tau;
  std::vector<GaussianParams> classes;
  CovStructure structure = CovStructure::VVV;
  double loglik = 0.0;  // NaN for marginal submodels
  double bic = 0.0;     // NaN for marginal submodels
  std::vector<std::string> variable_names;
  std::vector<std::string> class_labels;
};

/// Outcome of one candidate structure during fit_edda.
struct StructureFit {
  CovStructure structure;
  bool ok = false;
  double loglik = 0.0;
  double bic = 0.0;
  std::size_t n_params = 0;
  std::string message;
};

/// labels[s] in [0, K) for each row of x; every class needs at least two
/// rows. Returns the structure with the largest BIC = 2 loglik - eta log M;
/// ties go to the structure with fewer parameters. Throws DegenerateClass.
EddaModel fit_edda(const MatrixXd& x, std::span<const int> labels,
                   std::span<const CovStructure> structures,
                   std::vector<std::string> variable_names = {},
                   std::vector<std::string> class_labels = {},
                   std::vector<StructureFit>* report = nullptr);

/// Posterior class probabilities tau_k phi(y; mu_k, Sigma_k) / sum.
VectorXd predict_map(const EddaModel& model, const VectorXd& y);
/// Row-wise posteriors for an N x P block (N x K result).
MatrixXd predict_map_rows(const EddaModel& model, const MatrixXd& y);

/// The model restricted to the variables in keep (in that order). Spherical
/// and diagonal tags are kept; EEE and VVV become VVV.
EddaModel marginal_submodel(const EddaModel& model, std::span<const std::size_t> keep);

/// Whether every class covariance has the shape its structure tag implies.
bool conforms_to_structure(const EddaModel& model, double tol = 1e-8);

}  // namespace damda
