#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "damda/errors.hpp"
#include "damda/rng.hpp"
#include "damda/varsel.hpp"

namespace damda {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kVarFloor = 1e-3;  // relative to the column variance

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(std::span<const double> x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  m.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var /= n;
  return m;
}

double gmm_bic(double loglik, std::size_t g, std::size_t n) {
  return 2.0 * loglik - static_cast<double>(3 * g - 1) * std::log(static_cast<double>(n));
}

// One EM run from the given start; returns the final log-likelihood.
double run_em_1d(std::span<const double> x, UnivariateGmm& m, double floor) {
  const std::size_t n = x.size();
  const std::size_t g = m.G;
  MatrixXd t(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g));
  double prev = -std::numeric_limits<double>::infinity();
  double ll = prev;
  for (int it = 0; it < 500; ++it) {
    ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < g; ++c) {
        const auto cc = static_cast<Eigen::Index>(c);
        const double d = x[i] - m.mean(cc);
        const double v = std::log(m.tau(cc)) - 0.5 * (kLog2Pi + std::log(m.var(cc)) + d * d / m.var(cc));
        t(static_cast<Eigen::Index>(i), cc) = v;
        mx = std::max(mx, v);
      }
      auto row = t.row(static_cast<Eigen::Index>(i));
      row = (row.array() - mx).exp();
      const double s = row.sum();
      row /= s;
      ll += mx + std::log(s);
    }
    if (std::abs(ll - prev) <= 1e-10 * (std::abs(ll) + 1.0)) break;
    prev = ll;
    for (std::size_t c = 0; c < g; ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      const double nc = t.col(cc).sum();
      if (nc < 1e-8) return -std::numeric_limits<double>::infinity();
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += t(static_cast<Eigen::Index>(i), cc) * x[i];
      mu /= nc;
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += t(static_cast<Eigen::Index>(i), cc) * (x[i] - mu) * (x[i] - mu);
      m.tau(cc) = nc / static_cast<double>(n);
      m.mean(cc) = mu;
      m.var(cc) = std::max(var / nc, floor);
    }
  }
  return ll;
}

}  // namespace

UnivariateGmm fit_univariate_gmm(std::span<const double> x, std::size_t g, std::size_t restarts,
                                 std::uint64_t seed) {
  const std::size_t n = x.size();
  if (g == 0 || n < 2 * g) throw ConfigError(fmt::format("fit_univariate_gmm: {} points, {} components", n, g));
  const Moments mom = moments(x);
  if (!(mom.var > 0.0)) throw DegenerateClass("fit_univariate_gmm: constant column");
  UnivariateGmm best;
  best.G = g;
  if (g == 1) {
    best.tau = VectorXd::Ones(1);
    best.mean = VectorXd::Constant(1, mom.mean);
    best.var = VectorXd::Constant(1, mom.var);
    best.loglik = -0.5 * static_cast<double>(n) * (kLog2Pi + std::log(mom.var) + 1.0);
    best.bic = gmm_bic(best.loglik, 1, n);
    return best;
  }
  Rng rng(seed);
  const double floor = kVarFloor * mom.var;
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    UnivariateGmm m;
    m.G = g;
    m.tau = VectorXd::Constant(static_cast<Eigen::Index>(g), 1.0 / static_cast<double>(g));
    m.var = VectorXd::Constant(static_cast<Eigen::Index>(g), mom.var);
    m.mean.resize(static_cast<Eigen::Index>(g));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t c = 0; c < g; ++c) {
      const std::size_t j = c + rng.uniform_index(n - c);
      std::swap(idx[c], idx[j]);
      m.mean(static_cast<Eigen::Index>(c)) = x[idx[c]];
    }
    m.loglik = run_em_1d(x, m, floor);
    if (m.loglik > best.loglik) best = m;
  }
  best.bic = gmm_bic(best.loglik, g, x.size());
  return best;
}

double univariate_bic_gain(std::span<const double> x, std::size_t max_g, std::uint64_t seed) {
  const Moments mom = moments(x);
  if (!(mom.var > 0.0)) return -std::numeric_limits<double>::infinity();
  const double base = fit_univariate_gmm(x, 1, 1, seed).bic;
  double best = base;
  for (std::size_t g = 2; g <= max_g && 2 * g <= x.size(); ++g)
    best = std::max(best, fit_univariate_gmm(x, g, 5, derive_seed(seed, g)).bic);
  return best - base;
}

std::vector<std::string> rank_initial_subset(const MatrixXd& y, const std::vector<std::string>& names,
                                             std::size_t max_g, std::size_t s, std::uint64_t seed) {
  if (names.size() != static_cast<std::size_t>(y.cols()))
    throw DimensionMismatch("rank_initial_subset: one name per column required");
  if (s > names.size()) throw ConfigError(fmt::format("rank_initial_subset: S = {} exceeds {} variables", s, names.size()));
  std::vector<std::pair<double, std::string>> scored;
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const VectorXd col = y.col(j);
    const auto& name = names[static_cast<std::size_t>(j)];
    scored.emplace_back(univariate_bic_gain(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                            max_g, seed ^ hash_name(name)),
                        name);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s; ++i) out.push_back(scored[i].second);
  return out;
}

}  // namespace damda
