#pragma once
// Shared fixtures for the unit tests.

#include <cmath>
#include <initializer_list>
#include <vector>

#include "damda/gaussian.hpp"
#include "damda/rng.hpp"

namespace testing {

using damda::MatrixXd;
using damda::VectorXd;

// Row-major literal to an Eigen matrix.
inline MatrixXd rows(Eigen::Index r, Eigen::Index c, std::initializer_list<double> v) {
  MatrixXd m(r, c);
  auto it = v.begin();
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

inline VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline MatrixXd random_normal(damda::Rng& rng, Eigen::Index r, Eigen::Index c) {
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

// Well-conditioned SPD matrix: A A' / d + I/2.
inline MatrixXd random_spd(damda::Rng& rng, Eigen::Index d) {
  const MatrixXd a = random_normal(rng, d, d);
  return a * a.transpose() / static_cast<double>(d) + 0.5 * MatrixXd::Identity(d, d);
}

inline double max_rel_diff(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace testing
