#include "damda/gaussian.hpp"

#include <cmath>

#include <fmt/format.h>

#include "damda/errors.hpp"
#include "damda/simd.hpp"

namespace damda {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
}

std::optional<MatrixXd> cholesky_gate(const MatrixXd& a) {
  if (a.rows() != a.cols()) return std::nullopt;
  if (a.size() == 0) return MatrixXd(0, 0);
  if (!a.allFinite()) return std::nullopt;
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return std::nullopt;
  MatrixXd l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double pivot = l(i, i) * l(i, i);
    if (!(pivot > kPivotFloor)) return std::nullopt;
  }
  return l;
}

bool is_positive_definite(const MatrixXd& a) { return cholesky_gate(a).has_value(); }

MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

GaussianParams::GaussianParams(VectorXd mean, MatrixXd cov) : mean_(std::move(mean)) {
  if (cov.rows() != cov.cols() || cov.rows() != mean_.size())
    throw DimensionMismatch(fmt::format("GaussianParams: mean has length {} but covariance is {}x{}",
                                        mean_.size(), cov.rows(), cov.cols()));
  if (cov.size() > 0) {
    const double asym = (cov - cov.transpose()).cwiseAbs().maxCoeff();
    if (!(asym <= kSymmetryTolerance))
      throw Error(fmt::format("GaussianParams: covariance asymmetric by {:g}", asym));
  }
  cov_ = symmetrize(cov);
  auto l = cholesky_gate(cov_);
  if (!l) throw NotPositiveDefinite("GaussianParams: covariance is not positive definite");
  chol_ = std::move(*l);
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

MatrixXd GaussianParams::solve(const MatrixXd& b) const {
  const auto lower = chol_.triangularView<Eigen::Lower>();
  MatrixXd z = lower.solve(b);
  return lower.transpose().solve(z);
}

MatrixXd GaussianParams::inverse() const {
  return symmetrize(solve(MatrixXd::Identity(cov_.rows(), cov_.cols())));
}

double log_density(const VectorXd& x, const GaussianParams& params) {
  if (static_cast<std::size_t>(x.size()) != params.dim())
    throw DimensionMismatch(
        fmt::format("log_density: point has length {}, params have dimension {}", x.size(), params.dim()));
  const VectorXd z = params.chol().triangularView<Eigen::Lower>().solve(x - params.mean());
  const double d = static_cast<double>(params.dim());
  return -0.5 * (d * kLog2Pi + params.log_det() + z.squaredNorm());
}

VectorXd log_density_rows(const MatrixXd& y, const GaussianParams& params) {
  if (static_cast<std::size_t>(y.cols()) != params.dim())
    throw DimensionMismatch(
        fmt::format("log_density_rows: data has {} columns, params have dimension {}", y.cols(), params.dim()));
  const std::size_t n = static_cast<std::size_t>(y.rows());
  const std::size_t d = params.dim();
  MatrixXd resid = y.rowwise() - params.mean().transpose();
  VectorXd sq(static_cast<Eigen::Index>(n));
  simd::whiten_sqnorm({params.chol().data(), d * d}, d, {resid.data(), n * d}, {sq.data(), n});
  const double base = -0.5 * (static_cast<double>(d) * kLog2Pi + params.log_det());
  return (base - 0.5 * sq.array()).matrix();
}

double kl_match_score(const GaussianParams& cluster, const GaussianParams& learned) {
  if (cluster.dim() != learned.dim())
    throw DimensionMismatch(fmt::format("kl_match_score: dimensions {} and {} differ", cluster.dim(),
                                        learned.dim()));
  const double trace = cluster.solve(learned.cov()).trace();
  const VectorXd diff = cluster.mean() - learned.mean();
  const double quad = diff.dot(cluster.solve(diff).col(0));
  return trace + quad + (cluster.log_det() - learned.log_det());
}

MatrixXd schur_complement(const PartitionedCov& b) {
  if (b.p() == 0) return b.new_block;
  auto l = cholesky_gate(b.fixed_block);
  if (!l) throw InvalidAugmentedCovariance("fixed block is not positive definite");
  const MatrixXd z = l->triangularView<Eigen::Lower>().solve(b.cross_block);
  return symmetrize(b.new_block - z.transpose() * z);
}

MatrixXd assemble_cov(const PartitionedCov& b) {
  const auto p = static_cast<Eigen::Index>(b.p());
  const auto q = static_cast<Eigen::Index>(b.q());
  if (b.fixed_block.cols() != p || b.new_block.cols() != q || b.cross_block.rows() != p ||
      b.cross_block.cols() != q)
    throw DimensionMismatch(fmt::format(
        "assemble_cov: blocks {}x{}, {}x{}, {}x{} are inconsistent", b.fixed_block.rows(),
        b.fixed_block.cols(), b.cross_block.rows(), b.cross_block.cols(), b.new_block.rows(),
        b.new_block.cols()));
  if (q == 0) return b.fixed_block;
  if (!is_positive_definite(schur_complement(b)))
    throw InvalidAugmentedCovariance("assemble_cov: Schur complement is not positive definite");
  MatrixXd out(p + q, p + q);
  out.topLeftCorner(p, p) = b.fixed_block;
  out.topRightCorner(p, q) = b.cross_block;
  out.bottomLeftCorner(q, p) = b.cross_block.transpose();
  out.bottomRightCorner(q, q) = b.new_block;
  return out;
}

WeightedMoments weighted_moments(const MatrixXd& y, const VectorXd& w) {
  if (y.rows() != w.size()) throw DimensionMismatch("weighted_moments: weight length differs from rows");
  const std::size_t n = static_cast<std::size_t>(y.rows());
  const std::size_t d = static_cast<std::size_t>(y.cols());
  WeightedMoments m;
  m.weight = w.sum();
  m.mean = VectorXd::Zero(static_cast<Eigen::Index>(d));
  m.scatter = MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  if (d == 0 || !(m.weight > 0.0)) return m;
  simd::weighted_colsum({y.data(), n * d}, d, {w.data(), n}, {m.mean.data(), d});
  m.mean /= m.weight;
  MatrixXd resid = y.rowwise() - m.mean.transpose();
  simd::weighted_crossprod({resid.data(), n * d}, d, {w.data(), n}, {m.scatter.data(), d * d});
  return m;
}

}  // namespace damda
