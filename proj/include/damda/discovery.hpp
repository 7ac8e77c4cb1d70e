#pragma once
// Discovery phase: EM over unlabelled test data that may carry variables
// unseen in training and classes unseen in training. The learned mean and
// covariance of every known class on the training variables stay fixed; only
// the blocks involving the additional variables, the hidden classes and the
// mixing proportions are estimated.

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "damda/edda.hpp"
#include "damda/gaussian.hpp"
#include "damda/ward.hpp"

namespace damda {

/// A class seen in training, extended to the additional variables.
struct KnownClass {
  GaussianParams fixed;  // learned P-block, never modified
  VectorXd aug_mean;     // Q
  PartitionedCov aug_cov;  // fixed_block is a copy of fixed.cov()

  VectorXd joint_mean() const;
  /// Assembled (P+Q)-dimensional density; throws InvalidAugmentedCovariance.
  GaussianParams joint() const;
};

struct DamdaModel {
  std::size_t K = 0;
  std::size_t H = 0;
  std::size_t P = 0;
  std::size_t Q = 0;
  VectorXd tau;  // K known followed by H hidden proportions
  std::vector<KnownClass> known;
  std::vector<GaussianParams> hidden;  // dimension P+Q
  std::vector<double> loglik_trace;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();

  std::size_t iterations = 0;  // M-steps performed
  bool converged = false;
  bool restarted = false;
  bool learned_start = false;  // won from initialize_from_learned
  std::size_t regularizations = 0;

  std::vector<std::string> variable_names;  // P training variables then Q additional
  std::vector<std::string> class_labels;    // K + H

  std::size_t R() const { return P + Q; }
  std::size_t components() const { return K + H; }
  /// Joint densities of all K + H components, known first.
  std::vector<GaussianParams> component_params() const;
};

/// Posterior memberships t (N x (K+H)) and the observed-data log-likelihood
/// of the parameters they were computed from.
struct Responsibilities {
  MatrixXd t;
  double loglik = 0.0;
};

/// O_k = [[W, V], [V', U]] split at the P training variables.
struct ScatterPartition {
  MatrixXd W;  // P x P
  MatrixXd V;  // P x Q
  MatrixXd U;  // Q x Q
  double n_k = 0.0;

  static ScatterPartition split(const MatrixXd& scatter, std::size_t p, double n_k);
};

/// sum_i t_ik y_i^Q and sum_i t_ik (y_i^P - mu_k).
struct WeightedSums {
  VectorXd sum_q;
  VectorXd sum_dev_p;
};

struct ConditionalEstimate {
  MatrixXd cross;     // C_k, P x Q
  MatrixXd residual;  // E_k, Q x Q
  MatrixXd new_cov;   // Sigma^Q_k, Q x Q
  VectorXd aug_mean;  // mu^Q_k
};

Responsibilities e_step(const MatrixXd& y, const DamdaModel& model);

/// tau_c = N_c / N for every component.
VectorXd m_step_mixing(const Responsibilities& resp);

/// Full-data covariance and the class counts the regulariser needs.
struct RegularizationContext {
  MatrixXd S;  // (1/N) sum (y - ybar)(y - ybar)', floored to PD
  std::size_t K = 0;
  std::size_t H = 0;
  std::size_t N = 0;

  static RegularizationContext from_data(const MatrixXd& y, std::size_t k, std::size_t h);
};

/// log(R) / N, floored at 1e-8 (it vanishes at R = 1).
double regularization_gamma(std::size_t r, std::size_t n);

/// O + S / det(S)^{1/R} * (gamma / (K + H))^{1/R} with gamma = log(R) / N.
/// S that fails the pivot gate is replaced by S + 1e-8 I first.
MatrixXd regularize_scatter(const MatrixXd& scatter, const MatrixXd& s, std::size_t k, std::size_t h,
                            std::size_t n, std::size_t r);

struct RegularizationEvent {
  std::size_t iteration = 0;
  std::size_t component = 0;
  MatrixXd scatter;
  MatrixXd regularized;
  MatrixXd S;
  std::size_t K = 0, H = 0, N = 0, R = 0;
};

/// Hooks for tests and diagnostics; called synchronously from run_em.
class EmObserver {
 public:
  virtual ~EmObserver() = default;
  virtual void on_iteration(std::size_t /*iteration*/, const DamdaModel& /*model*/,
                            const Responsibilities& /*resp*/) {}
  virtual void on_regularization(const RegularizationEvent& /*event*/) {}
};

struct HiddenUpdate {
  GaussianParams params;
  bool regularized = false;
  MatrixXd scatter;      // O_h before regularisation
  MatrixXd regularized_scatter;
};

/// Weighted mean and covariance of component `component` (a column of t).
/// Falls back to the regularised scatter when N_h < R + 1 or O_h / N_h fails
/// the pivot gate.
HiddenUpdate m_step_hidden(const MatrixXd& y, const Responsibilities& resp, std::size_t component,
                           const RegularizationContext& ctx);

/// Closed-form maximiser of the expected complete log-likelihood in
/// (C_k, Sigma^Q_k, mu^Q_k) with the learned (mu_k, Sigma_k) held fixed.
/// Q = 0 returns empty blocks. Throws NotPositiveDefinite when W or E fail
/// the pivot gate.
ConditionalEstimate inductive_conditional_update(const ScatterPartition& scatter,
                                                 const GaussianParams& fixed,
                                                 const WeightedSums& sums);

struct EmConfig {
  std::size_t max_iter = 500;
  double rel_tol = 1e-7;
  double collapse_fraction = 1e-6;
  std::uint64_t seed = 0;  // perturbed restarts
  bool learned_start = true;      // also run EM from initialize_from_learned
  double learned_coverage = 0.99;  // chi-square level for that start
  std::size_t perturbed_starts = 4;  // extra perturbed learned starts when H >= 2
};

/// Starting point for C = K + H components: Ward clusters on y, learned
/// classes matched greedily (in learned order) to the cluster minimising
/// kl_match_score on the training variables, unmatched clusters become hidden
/// classes. y holds the P learned variables first. With perturb_seed set, 10%
/// of rows are moved to random clusters before moments are taken.
DamdaModel initialize(const MatrixXd& y, const EddaModel& learned, std::size_t c,
                      const WardTree* tree = nullptr,
                      std::optional<std::uint64_t> perturb_seed = std::nullopt);

/// Second starting point. Each row goes to its most probable learned class
/// (training variables only) when its Mahalanobis distance to that class is
/// within the `coverage` chi-square quantile; the remaining rows are split into
/// H = c - K groups by Ward. Throws FitFailure when a class would get fewer
/// than two rows or too few rows remain.
DamdaModel initialize_from_learned(const MatrixXd& y, const EddaModel& learned, std::size_t c,
                                   double coverage = 0.99,
                                   std::optional<std::uint64_t> perturb_seed = std::nullopt);

/// EM from a given starting point (no restart logic). Throws FitFailure.
DamdaModel run_em_from(const MatrixXd& y, DamdaModel model, const EmConfig& config = {},
                       EmObserver* observer = nullptr);

/// initialize + EM, with one perturbed restart on component collapse; then EM
/// from initialize_from_learned (unless disabled), keeping the higher final
/// log-likelihood (ties: the Ward start).
DamdaModel run_em(const MatrixXd& y, const EddaModel& learned, std::size_t h,
                  const EmConfig& config = {}, EmObserver* observer = nullptr,
                  const WardTree* tree = nullptr);

/// eta_H = (H + K - 1) + 2HR + H C(R,2) + 2KQ + KPQ + K C(Q,2).
std::size_t bic_h_parameters(std::size_t k, std::size_t h, std::size_t p, std::size_t q);
double bic_h(double loglik, std::size_t h, std::size_t k, std::size_t r, std::size_t p, std::size_t q,
             std::size_t n);

struct HFit {
  std::size_t H = 0;
  bool ok = false;
  double loglik = 0.0;
  double bic = 0.0;
  std::size_t iterations = 0;
  std::string message;
};

struct Discovery {
  DamdaModel model;
  std::vector<HFit> table;
};

/// Fits every H in h_range and keeps the largest BIC_H (ties: smaller H).
/// Throws FitFailure listing each cause when no H can be fitted.
Discovery select_h(const MatrixXd& y, const EddaModel& learned, std::span<const std::size_t> h_range,
                   const EmConfig& config = {}, EmObserver* observer = nullptr);

}  // namespace damda
