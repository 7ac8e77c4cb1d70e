#include "damda/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "damda/errors.hpp"
#include "damda/rng.hpp"

namespace damda {

std::string_view to_string(VarRole r) {
  switch (r) {
    case VarRole::Gen: return "Gen";
    case VarRole::Cor: return "Cor";
    case VarRole::Noi: return "Noi";
  }
  return "?";
}

void ScenarioConfig::validate() const {
  const std::size_t c = classes();
  if (n_gen < 2) throw ConfigError("scenario: n_gen must be at least 2");
  if (c < 1) throw ConfigError("scenario: at least one class required");
  if (mean_half_ranges.size() != c || wishart_df_offset.size() != c || wishart_offdiag.size() != c)
    throw ConfigError("scenario: per-class settings must have one entry per class");
  for (double p : proportions)
    if (!(p > 0.0)) throw ConfigError("scenario: proportions must be positive");
  if (hidden_classes_removed >= c) throw ConfigError("scenario: hidden_classes_removed must be below the class count");
  if (train_size < 1 || test_size < 1) throw ConfigError("scenario: sample sizes must be positive");
  if (!(covariance_scale > 0.0)) throw ConfigError("scenario: covariance_scale must be positive");
  if (!(min_separation >= 0.0)) throw ConfigError("scenario: min_separation must be non-negative");
}

std::vector<std::string> GeneratedWorld::train_names() const {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < variable_names.size(); ++j)
    if (observed[j]) out.push_back(variable_names[j]);
  return out;
}

MatrixXd sample_wishart(double df, const MatrixXd& scale, Rng& rng) {
  const auto d = scale.rows();
  if (scale.cols() != d) throw DimensionMismatch("sample_wishart: scale must be square");
  if (!(df >= static_cast<double>(d))) throw ConfigError(fmt::format("sample_wishart: df {} below dimension {}", df, d));
  const auto l = cholesky_gate(scale);
  if (!l) throw NotPositiveDefinite("sample_wishart: scale is not positive definite");
  MatrixXd a = MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(df - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const MatrixXd la = *l * a;
  return symmetrize(la * la.transpose());
}

MatrixXd sample_wishart(double df, const MatrixXd& scale, std::uint64_t seed) {
  Rng rng(seed);
  return sample_wishart(df, scale, rng);
}

namespace {

MatrixXd equicorrelation(std::size_t d, double rho) {
  MatrixXd m = MatrixXd::Constant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d), rho);
  m.diagonal().setOnes();
  return m;
}

// k distinct elements of pool, in ascending order.
std::vector<std::size_t> pick(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  if (k > pool.size()) throw ConfigError(fmt::format("scenario: cannot pick {} of {} variables", k, pool.size()));
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

std::vector<std::size_t> minus(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<std::size_t> observed_columns(const ScenarioConfig& cfg, Rng& rng) {
  const std::size_t g = cfg.n_gen, c = cfg.n_cor, r = cfg.R();
  const auto& rule = cfg.observed_rule;
  if (rule == "all") return range(0, r);
  if (rule == "prefix") {
    if (cfg.n_observed < 1 || cfg.n_observed > r) throw ConfigError("scenario: n_observed out of range");
    return range(0, cfg.n_observed);
  }
  if (rule.size() != 3 || rule[1] != '.' || rule[0] < '1' || rule[0] > '3' || rule[2] < 'a' || rule[2] > 'c')
    throw ConfigError(fmt::format("scenario: unknown observed_rule '{}'", rule));
  const std::size_t n_obs = cfg.n_observed;
  const auto gens = range(0, g);
  const auto cors = range(g, g + c);
  const auto others = range(g, r);
  std::vector<std::size_t> chosen;
  switch (rule[2]) {
    case 'a':
      chosen = gens;
      break;
    case 'b': {
      chosen = pick(gens, g / 2, rng);
      const double frac = rule[0] == '2' ? 0.3 : 0.25;
      const auto n_cor = static_cast<std::size_t>(std::lround(frac * static_cast<double>(n_obs)));
      const auto cs = pick(cors, std::min(n_cor, c), rng);
      chosen.insert(chosen.end(), cs.begin(), cs.end());
      break;
    }
    default:
      chosen = pick(gens, std::max<std::size_t>(2, g / 5), rng);
  }
  std::sort(chosen.begin(), chosen.end());
  if (chosen.size() > n_obs) throw ConfigError(fmt::format("scenario: rule {} needs more than {} observed variables", rule, n_obs));
  const auto rest = pick(minus(others, chosen), n_obs - chosen.size(), rng);
  chosen.insert(chosen.end(), rest.begin(), rest.end());
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::size_t categorical(const std::vector<double>& p, Rng& rng) {
  const double u = rng.uniform() * std::accumulate(p.begin(), p.end(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

}  // namespace

GeneratedWorld generate_world(const ScenarioConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t g = cfg.n_gen, nc = cfg.n_cor, nn = cfg.n_noi, r = cfg.R(), classes = cfg.classes();
  const auto gg = static_cast<Eigen::Index>(g);
  GeneratedWorld w;

  std::vector<double> prop = cfg.proportions;
  const double total = std::accumulate(prop.begin(), prop.end(), 0.0);
  for (double& p : prop) p /= total;

  for (std::size_t k = 0; k < classes; ++k) {
    const MatrixXd scale = equicorrelation(g, cfg.wishart_offdiag[k]);
    const double df = static_cast<double>(g + cfg.wishart_df_offset[k]);
    w.covs.push_back(cfg.covariance_scale * sample_wishart(df, scale, rng));
  }

  MatrixXd pooled = MatrixXd::Zero(gg, gg);
  for (std::size_t k = 0; k < classes; ++k) pooled += prop[k] * w.covs[k];
  const Eigen::LLT<MatrixXd> pooled_llt(pooled);
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100000)
      throw ConfigError(fmt::format("scenario: could not reach mean separation {}", cfg.min_separation));
    w.means.clear();
    for (std::size_t k = 0; k < classes; ++k) {
      VectorXd m(gg);
      for (Eigen::Index j = 0; j < gg; ++j) m(j) = rng.uniform(-cfg.mean_half_ranges[k], cfg.mean_half_ranges[k]);
      w.means.push_back(std::move(m));
    }
    if (cfg.min_separation <= 0.0) break;
    double closest = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < classes; ++a)
      for (std::size_t b = a + 1; b < classes; ++b) {
        const VectorXd d = w.means[a] - w.means[b];
        closest = std::min(closest, std::sqrt(d.dot(pooled_llt.solve(d))));
      }
    if (closest >= cfg.min_separation) break;
  }

  for (std::size_t j = 0; j < nc; ++j) {
    const std::size_t p1 = rng.uniform_index(g);
    std::size_t p2 = rng.uniform_index(g - 1);
    if (p2 >= p1) ++p2;
    w.cor_parents.push_back({std::min(p1, p2), std::max(p1, p2)});
  }

  std::vector<int> order(classes);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i + 1 < classes; ++i) std::swap(order[i], order[i + rng.uniform_index(classes - i)]);
  w.observed_classes.assign(order.begin() + static_cast<std::ptrdiff_t>(cfg.hidden_classes_removed), order.end());
  std::sort(w.observed_classes.begin(), w.observed_classes.end());

  const auto obs_cols = observed_columns(cfg, rng);
  w.observed.assign(r, false);
  for (auto j : obs_cols) w.observed[j] = true;

  for (std::size_t j = 0; j < g; ++j) {
    w.variable_names.push_back(fmt::format("gen{:02}", j + 1));
    w.roles.push_back(VarRole::Gen);
  }
  for (std::size_t j = 0; j < nc; ++j) {
    w.variable_names.push_back(fmt::format("cor{:02}", j + 1));
    w.roles.push_back(VarRole::Cor);
  }
  for (std::size_t j = 0; j < nn; ++j) {
    w.variable_names.push_back(fmt::format("noi{:02}", j + 1));
    w.roles.push_back(VarRole::Noi);
  }

  std::vector<MatrixXd> chol;
  for (const auto& c : w.covs) chol.push_back(Eigen::LLT<MatrixXd>(c).matrixL());
  const MatrixXd noi_chol = cfg.noi_correlated && nn > 0
                                ? MatrixXd(Eigen::LLT<MatrixXd>(equicorrelation(nn, cfg.noi_offdiag)).matrixL())
                                : MatrixXd::Identity(static_cast<Eigen::Index>(nn), static_cast<Eigen::Index>(nn));

  auto draw_row = [&](std::size_t k, auto row) {
    VectorXd z(gg);
    for (Eigen::Index j = 0; j < gg; ++j) z(j) = rng.normal();
    const VectorXd gen = w.means[k] + chol[k] * z;
    row.head(gg) = gen.transpose();
    for (std::size_t j = 0; j < nc; ++j)
      row(gg + static_cast<Eigen::Index>(j)) = gen(static_cast<Eigen::Index>(w.cor_parents[j][0])) +
                                               gen(static_cast<Eigen::Index>(w.cor_parents[j][1])) + rng.normal();
    VectorXd e(static_cast<Eigen::Index>(nn));
    for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = rng.normal();
    row.tail(e.size()) = (noi_chol * e).transpose();
  };

  w.y_test.resize(static_cast<Eigen::Index>(cfg.test_size), static_cast<Eigen::Index>(r));
  for (std::size_t i = 0; i < cfg.test_size; ++i) {
    const std::size_t k = categorical(prop, rng);
    w.labels_test.push_back(static_cast<int>(k));
    draw_row(k, w.y_test.row(static_cast<Eigen::Index>(i)));
  }

  std::vector<double> train_prop;
  for (int k : w.observed_classes) train_prop.push_back(prop[static_cast<std::size_t>(k)]);
  MatrixXd full_train(static_cast<Eigen::Index>(cfg.train_size), static_cast<Eigen::Index>(r));
  for (std::size_t i = 0; i < cfg.train_size; ++i) {
    const int k = w.observed_classes[categorical(train_prop, rng)];
    w.labels_train.push_back(k);
    draw_row(static_cast<std::size_t>(k), full_train.row(static_cast<Eigen::Index>(i)));
  }
  w.x_train.resize(full_train.rows(), static_cast<Eigen::Index>(obs_cols.size()));
  for (std::size_t j = 0; j < obs_cols.size(); ++j)
    w.x_train.col(static_cast<Eigen::Index>(j)) = full_train.col(static_cast<Eigen::Index>(obs_cols[j]));
  return w;
}

}  // namespace damda
