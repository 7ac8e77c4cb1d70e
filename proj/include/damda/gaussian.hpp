#pragma once
// Dense Gaussian primitives shared by the learning and discovery phases.

#include <optional>

#include <Eigen/Dense>

namespace damda {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// A matrix is positive definite when a Cholesky factorisation succeeds with
// every pivot (squared diagonal of the factor) above this floor.
inline constexpr double kPivotFloor = 1e-12;
inline constexpr double kSymmetryTolerance = 1e-10;

/// Lower Cholesky factor of a, or nullopt when a fails the pivot gate.
std::optional<MatrixXd> cholesky_gate(const MatrixXd& a);
bool is_positive_definite(const MatrixXd& a);

/// (a + a') / 2.
MatrixXd symmetrize(const MatrixXd& a);

/// Mean and covariance of one multivariate normal. Immutable; the covariance
/// is symmetrised on construction and its Cholesky factor cached.
class GaussianParams {
 public:
  /// Throws DimensionMismatch, Error (asymmetric beyond kSymmetryTolerance)
  /// or NotPositiveDefinite.
  GaussianParams(VectorXd mean, MatrixXd cov);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const VectorXd& mean() const { return mean_; }
  const MatrixXd& cov() const { return cov_; }
  const MatrixXd& chol() const { return chol_; }
  double log_det() const { return log_det_; }

  /// cov^{-1} b via the cached factor.
  MatrixXd solve(const MatrixXd& b) const;
  MatrixXd inverse() const;

 private:
  VectorXd mean_;
  MatrixXd cov_;
  MatrixXd chol_;
  double log_det_ = 0.0;
};

double log_density(const VectorXd& x, const GaussianParams& params);

/// log phi(y_i) for every row of y (N x d), whitening through the SIMD
/// kernels.
VectorXd log_density_rows(const MatrixXd& y, const GaussianParams& params);

/// tr(S_g^{-1} S_k) + (m_g - m_k)' S_g^{-1} (m_g - m_k) + log(det S_g / det S_k)
/// for cluster g and learned class k. This is not the textbook divergence (no
/// 1/2, no -d); only its argmin over clusters is meaningful.
double kl_match_score(const GaussianParams& cluster, const GaussianParams& learned);

/// Covariance of a known class over observed (P) plus additional (Q)
/// variables, kept in its three blocks.
struct PartitionedCov {
  MatrixXd fixed_block;  // P x P, from the learning phase
  MatrixXd cross_block;  // P x Q
  MatrixXd new_block;    // Q x Q

  std::size_t p() const { return static_cast<std::size_t>(fixed_block.rows()); }
  std::size_t q() const { return static_cast<std::size_t>(new_block.rows()); }
};

/// new_block - cross' fixed^{-1} cross.
MatrixXd schur_complement(const PartitionedCov& blocks);

/// [[fixed, cross], [cross', new]]. Throws DimensionMismatch on inconsistent
/// blocks and InvalidAugmentedCovariance when the Schur complement (or the
/// fixed block) fails the pivot gate.
MatrixXd assemble_cov(const PartitionedCov& blocks);

/// Weighted first and second moments: mean = sum w y / sum w,
/// scatter = sum w (y - mean)(y - mean)'.
struct WeightedMoments {
  double weight = 0.0;
  VectorXd mean;
  MatrixXd scatter;
};
WeightedMoments weighted_moments(const MatrixXd& y, const VectorXd& w);

}  // namespace damda
