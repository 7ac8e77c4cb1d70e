#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "damda/errors.hpp"
#include "damda/varsel.hpp"

namespace damda {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double variance(const VectorXd& y) { return (y.array() - y.mean()).square().mean(); }

MatrixXd design(const MatrixXd& x, std::span<const std::size_t> predictors) {
  MatrixXd d(x.rows(), static_cast<Eigen::Index>(predictors.size() + 1));
  d.col(0).setOnes();
  for (std::size_t j = 0; j < predictors.size(); ++j) d.col(static_cast<Eigen::Index>(j + 1)) = x.col(static_cast<Eigen::Index>(predictors[j]));
  return d;
}

// Whether column j of x adds a direction to the design of `current`.
bool is_independent(const MatrixXd& x, std::span<const std::size_t> current, std::size_t j) {
  const MatrixXd d = design(x, current);
  const VectorXd col = x.col(static_cast<Eigen::Index>(j));
  const VectorXd resid = col - d * d.colPivHouseholderQr().solve(col);
  const double spread = (col.array() - col.mean()).square().sum();
  return spread > 0.0 && resid.squaredNorm() > 1e-10 * spread;
}

}  // namespace

RegressionFit fit_regression(const VectorXd& y, const MatrixXd& x, std::span<const std::size_t> predictors) {
  if (x.rows() != y.size()) throw DimensionMismatch("fit_regression: x and y differ in length");
  const auto n = static_cast<double>(y.size());
  if (y.size() < 2) throw ConfigError("fit_regression: need at least two observations");
  for (auto p : predictors)
    if (p >= static_cast<std::size_t>(x.cols())) throw DimensionMismatch("fit_regression: predictor out of range");
  const MatrixXd d = design(x, predictors);
  const VectorXd beta = d.colPivHouseholderQr().solve(y);
  const double rss = (y - d * beta).squaredNorm();
  RegressionFit fit;
  fit.predictors.assign(predictors.begin(), predictors.end());
  std::sort(fit.predictors.begin(), fit.predictors.end());
  fit.sigma2 = std::max(rss / n, 1e-10 * variance(y));
  if (!(fit.sigma2 > 0.0)) throw DegenerateClass("fit_regression: constant response");
  fit.loglik = -0.5 * n * (kLog2Pi + std::log(fit.sigma2)) - 0.5 * rss / fit.sigma2;
  fit.bic = 2.0 * fit.loglik - static_cast<double>(predictors.size() + 2) * std::log(n);
  return fit;
}

RegressionFit stepwise_regression_bic(const VectorXd& y, const MatrixXd& x) {
  std::vector<std::size_t> current;
  RegressionFit best = fit_regression(y, x, current);
  const auto p = static_cast<std::size_t>(x.cols());
  for (std::size_t guard = 0; guard < 4 * p + 4; ++guard) {
    bool changed = false;
    // forward
    RegressionFit cand_best;
    bool have = false;
    for (std::size_t j = 0; j < p; ++j) {
      if (std::find(current.begin(), current.end(), j) != current.end()) continue;
      if (current.size() + 3 > static_cast<std::size_t>(y.size())) break;
      if (!is_independent(x, current, j)) continue;
      auto trial = current;
      trial.push_back(j);
      const auto f = fit_regression(y, x, trial);
      if (!have || f.bic > cand_best.bic) {
        cand_best = f;
        have = true;
      }
    }
    if (have && cand_best.bic > best.bic) {
      best = cand_best;
      current = best.predictors;
      changed = true;
    }
    // backward
    have = false;
    for (std::size_t k = 0; k < current.size(); ++k) {
      auto trial = current;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(k));
      const auto f = fit_regression(y, x, trial);
      if (!have || f.bic > cand_best.bic) {
        cand_best = f;
        have = true;
      }
    }
    if (have && cand_best.bic > best.bic) {
      best = cand_best;
      current = best.predictors;
      changed = true;
    }
    if (!changed) break;
  }
  return best;
}

}  // namespace damda
