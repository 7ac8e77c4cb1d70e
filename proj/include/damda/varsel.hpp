#pragma once
// Greedy BIC variable selection on top of the discovery phase. A proposed
// variable is compared under two models: it carries class information (a
// discovery fit on the enlarged set) or it is explained by a linear
// regression on the current set.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "damda/discovery.hpp"
#include "damda/edda.hpp"

namespace damda {

// ---- univariate mixtures (seed ranking) ----

struct UnivariateGmm {
  std::size_t G = 0;
  VectorXd tau, mean, var;
  double loglik = -std::numeric_limits<double>::infinity();
  double bic = -std::numeric_limits<double>::infinity();
};

/// EM with `restarts` random starts; keeps the best log-likelihood.
/// BIC = 2 loglik - (3G - 1) log N. Throws DegenerateClass on a constant
/// column.
UnivariateGmm fit_univariate_gmm(std::span<const double> x, std::size_t g, std::size_t restarts,
                                 std::uint64_t seed);

/// max_{g <= G} BIC(g) - BIC(1); -inf for a constant column.
double univariate_bic_gain(std::span<const double> x, std::size_t max_g, std::uint64_t seed);

/// Top s variables (columns of y) by univariate_bic_gain, largest first; ties
/// by name. Requires s <= y.cols().
std::vector<std::string> rank_initial_subset(const MatrixXd& y, const std::vector<std::string>& names,
                                             std::size_t max_g, std::size_t s, std::uint64_t seed = 0);

// ---- regression ----

struct RegressionFit {
  std::vector<std::size_t> predictors;  // columns of x, ascending
  double sigma2 = 0.0;
  double loglik = 0.0;
  double bic = 0.0;
};

/// Gaussian linear regression of y on the given columns of x plus an
/// intercept. eta = #predictors + 2. The residual variance is floored at
/// 1e-10 var(y).
RegressionFit fit_regression(const VectorXd& y, const MatrixXd& x, std::span<const std::size_t> predictors);

/// Forward-backward stepwise search on BIC starting from the intercept-only
/// model. Predictors that are (numerically) linear combinations of those
/// already in the model are skipped.
RegressionFit stepwise_regression_bic(const VectorXd& y, const MatrixXd& x);

// ---- search ----

enum class VarAction { Add, Remove, Reject };
std::string_view to_string(VarAction a);

struct VarSelStep {
  std::size_t step = 0;
  std::string variable;
  VarAction action = VarAction::Add;
  double delta_bic = 0.0;  // NaN for rejections
  std::string reason;
};

struct VarSelConfig {
  std::size_t seed_size = 10;      // S; clipped to the number of trained variables
  std::size_t max_components = 0;  // G; 0 means K + 2
  std::vector<std::size_t> h_range = {0, 1, 2, 3, 4};
  std::size_t max_steps = 50;  // add and remove attempts
  EmConfig em;
  std::uint64_t seed = 0;
};

/// Discovery fit on a named subset of the test variables: trained variables
/// (sorted by name) form the learned block through marginal_submodel,
/// test-only variables (sorted by name) the additional block.
struct ClassFit {
  Discovery discovery;
  std::vector<std::string> trained;
  std::vector<std::string> test_only;
  double bic = 0.0;
};

ClassFit fit_class_model(const EddaModel& learned, const MatrixXd& y, const std::vector<std::string>& names,
                         const std::vector<std::string>& subset, std::span<const std::size_t> h_range,
                         const EmConfig& em = {});

struct CandidateResult {
  bool ok = false;
  bool accept = false;
  double delta_bic = std::numeric_limits<double>::quiet_NaN();
  std::string reason;
};

/// Add: BIC_class(S + v) - BIC_class(S) - BIC_reg(v | S).
/// Remove: BIC_class(S - v) + BIC_reg(v | S - v) - BIC_class(S).
/// Accept when the difference is positive.
CandidateResult evaluate_candidate(const EddaModel& learned, const MatrixXd& y,
                                   const std::vector<std::string>& names,
                                   const std::vector<std::string>& selected, const std::string& variable,
                                   VarAction action, std::span<const std::size_t> h_range, const EmConfig& em = {});

struct VarSelResult {
  std::vector<std::string> seed;
  std::vector<std::string> selected;  // sorted by name
  std::vector<std::string> rejected;
  std::vector<VarSelStep> history;
  std::size_t H = 0;
  double bic = 0.0;
  DamdaModel model;
};

/// y holds every test variable (columns named by `names`); the trained ones
/// are those in learned.variable_names. Throws FitFailure when no seed of two
/// or more variables can be fitted.
VarSelResult greedy_search(const EddaModel& learned, const MatrixXd& y, const std::vector<std::string>& names,
                           const VarSelConfig& config = {});

}  // namespace damda
