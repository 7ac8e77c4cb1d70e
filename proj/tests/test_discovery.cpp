#include "doctest.h"

#include <cmath>
#include <vector>

#include "damda/discovery.hpp"
#include "damda/errors.hpp"
#include "damda/pipeline.hpp"
#include "damda/sim.hpp"
#include "helpers.hpp"

using namespace damda;
using testing::rows;
using testing::vec;

TEST_CASE("regularised scatter matches a numpy evaluation") {
  const MatrixXd y = rows(9, 3, {0.19, -1.75, -0.66, 0.16, -2.04, -0.07, 0.86, -0.95, -1.22, 2.01, 0.66, -0.0, -0.44, 1.06,
                                 0.64, 0.25, -0.66, -0.34, -0.64, 0.48, -1.6, 0.51, 0.37, -0.68, -0.3, 0.04, 0.63});
  const VectorXd u = vec({1.0, 2.0, 0.5});
  const MatrixXd o = u * u.transpose();
  const auto ctx = RegularizationContext::from_data(y, 2, 1);
  const MatrixXd reg = regularize_scatter(o, ctx.S, 2, 1, 9, 3);
  const MatrixXd expect = rows(3, 3, {1.2909821635434933, 1.9940049371895214, 0.49368200921810784, 1.9940049371895214,
                                      4.548525452243158, 1.0764883393937672, 0.49368200921810784, 1.0764883393937672,
                                      0.5157545238629817});
  CHECK(testing::max_rel_diff(reg, expect) < 1e-12);
  CHECK(is_positive_definite(reg));
}

TEST_CASE("gamma is floored where log R vanishes") {
  CHECK(regularization_gamma(1, 50) == 1e-8);
  CHECK(regularization_gamma(4, 50) == doctest::Approx(std::log(4.0) / 50.0).epsilon(1e-15));
}

TEST_CASE("conditional update agrees with direct maximisation") {
  // scipy BFGS + Nelder-Mead on the weighted log-likelihood (make_oracles.py)
  const MatrixXd y = rows(10, 3, {0.35, 0.9,  1.15, -0.48, 0.59, 0.0,  -0.3, -0.79, -0.44, -0.8, -0.16, 0.05, 0.2, 1.5,  -0.71,
                                  -1.46, 1.67, -0.81, 1.48, 1.24, -1.12, -1.28, -1.5, -2.12, 1.05, 0.25, -0.91, 0.84, -0.4, -1.71});
  const VectorXd t = vec({0.76, 0.92, 0.28, 0.39, 0.53, 0.14, 0.53, 0.6, 0.81, 0.89});
  const GaussianParams fixed(vec({0.1, -0.2}), rows(2, 2, {1.1, 0.3, 0.3, 0.9}));
  const auto mom = weighted_moments(y, t);
  const double n = mom.weight;
  const auto sp = ScatterPartition::split(mom.scatter, 2, n);
  const WeightedSums sums{n * mom.mean.tail(1), n * (mom.mean.head(2) - fixed.mean())};
  const auto est = inductive_conditional_update(sp, fixed, sums);
  CHECK(est.cross(0, 0) == doctest::Approx(-0.15425821739837509).epsilon(1e-6));
  CHECK(est.cross(1, 0) == doctest::Approx(0.5452912443684164).epsilon(1e-6));
  CHECK(est.residual(0, 0) == doctest::Approx(0.5912377912689818).epsilon(1e-6));
  CHECK(est.aug_mean(0) == doctest::Approx(-0.9733847892411127).epsilon(1e-6));
  CHECK(est.new_cov(0, 0) == doctest::Approx(1.0345291538982058).epsilon(1e-6));
}

TEST_CASE("conditional update with no additional variables is empty") {
  const GaussianParams fixed(vec({0.0}), rows(1, 1, {1.0}));
  const auto sp = ScatterPartition::split(rows(1, 1, {3.0}), 1, 4.0);
  const auto est = inductive_conditional_update(sp, fixed, WeightedSums{VectorXd(0), vec({0.0})});
  CHECK(est.cross.rows() == 1);
  CHECK(est.cross.cols() == 0);
  CHECK(est.new_cov.size() == 0);
}

TEST_CASE("parameter count of the discovery model") {
  // (H + K - 1) + 2HR + H C(R,2) + 2KQ + KPQ + K C(Q,2)
  CHECK(bic_h_parameters(2, 0, 3, 0) == 1);
  CHECK(bic_h_parameters(1, 1, 2, 1) == 1 + 6 + 3 + 2 + 2 + 0);
  CHECK(bic_h_parameters(2, 2, 3, 2) == 3 + 20 + 20 + 8 + 12 + 2);
  CHECK(bic_h(-100.0, 1, 1, 3, 2, 1, 50) == doctest::Approx(-200.0 - 14.0 * std::log(50.0)));
  CHECK_THROWS_AS(bic_h(-1.0, 1, 1, 4, 2, 1, 10), DimensionMismatch);
}

namespace {

struct Recorder : EmObserver {
  std::vector<RegularizationEvent> events;
  void on_regularization(const RegularizationEvent& e) override { events.push_back(e); }
};

struct SmallWorld {
  EddaModel learned;
  MatrixXd y;
  std::vector<int> truth;
};

// Two learned classes on 2 variables; test data carries one more variable and
// a third, unseen class.
SmallWorld small_world(std::uint64_t seed, std::size_t n = 150) {
  Rng rng(seed);
  const VectorXd centres[3] = {vec({0.0, 0.0, 0.0}), vec({6.0, 0.0, 3.0}), vec({0.0, 6.0, -3.0})};
  MatrixXd x(80, 2);
  std::vector<int> lab(80);
  for (int i = 0; i < 80; ++i) {
    lab[i] = i % 2;
    x.row(i) = testing::random_normal(rng, 1, 2) + centres[lab[i]].head(2).transpose();
  }
  SmallWorld w;
  w.learned = fit_edda(x, lab, std::vector<CovStructure>{CovStructure::VVV});
  w.y.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    w.truth.push_back(c);
    w.y.row(static_cast<Eigen::Index>(i)) = testing::random_normal(rng, 1, 3) + centres[c].transpose();
  }
  return w;
}

}  // namespace

TEST_CASE("EM keeps the learned block and recovers the unseen class") {
  const auto w = small_world(1);
  Recorder rec;
  const auto m = run_em(w.y, w.learned, 1, {}, &rec);
  CHECK(m.K == 2);
  CHECK(m.H == 1);
  CHECK(m.Q == 1);
  CHECK(m.converged);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(m.known[k].fixed.mean() == w.learned.classes[k].mean());
    CHECK(m.known[k].fixed.cov() == w.learned.classes[k].cov());
    CHECK(m.known[k].aug_cov.fixed_block == w.learned.classes[k].cov());
  }
  for (std::size_t i = 1; i < m.loglik_trace.size(); ++i) CHECK(m.loglik_trace[i] >= m.loglik_trace[i - 1] - 1e-8);
  CHECK(ari(w.truth, map_assignment(w.y, m)) > 0.95);
  for (const auto& g : m.component_params()) CHECK(is_positive_definite(g.cov()));
}

TEST_CASE("select_h prefers the true number of unseen classes") {
  const auto w = small_world(2, 210);
  const std::vector<std::size_t> hr = {0, 1, 2, 3};
  const auto d = select_h(w.y, w.learned, hr);
  CHECK(d.model.H == 1);
  REQUIRE(d.table.size() == 4);
  for (const auto& f : d.table)
    if (f.ok) CHECK(f.bic <= d.model.bic);
}

TEST_CASE("both starting points are usable") {
  const auto w = small_world(3);
  const auto a = initialize(w.y, w.learned, 3);
  const auto b = initialize_from_learned(w.y, w.learned, 3);
  for (const auto* m : {&a, &b}) {
    CHECK(m->tau.sum() == doctest::Approx(1.0));
    CHECK(m->hidden.size() == 1);
    CHECK(m->variable_names == std::vector<std::string>{"V1", "V2", "Q1"});
  }
  // with the learned start disabled run_em never reports it
  EmConfig cfg;
  cfg.learned_start = false;
  CHECK_FALSE(run_em(w.y, w.learned, 1, cfg).learned_start);
  CHECK_THROWS_AS(initialize(w.y, w.learned, 1), ConfigError);
  CHECK_THROWS_AS(initialize(w.y.topRows(5), w.learned, 3), FitFailure);
}

TEST_CASE("regularisation events report the formula's output") {
  // 12 points in 3 dimensions for two hidden classes: small components
  const auto w = small_world(4, 30);
  Recorder rec;
  try {
    (void)run_em(w.y, w.learned, 2, {}, &rec);
  } catch (const FitFailure&) {
  }
  for (const auto& e : rec.events) {
    const MatrixXd expect = regularize_scatter(e.scatter, e.S, e.K, e.H, e.N, e.R);
    CHECK(testing::max_rel_diff(e.regularized, expect) < 1e-12);
  }
}

TEST_CASE("dimension checks") {
  const auto w = small_world(5);
  CHECK_THROWS_AS(run_em(w.y.leftCols(1), w.learned, 1), DimensionMismatch);
  CHECK_THROWS_AS(m_step_hidden(w.y, Responsibilities{MatrixXd::Ones(150, 2), 0.0}, 4,
                                RegularizationContext::from_data(w.y, 2, 0)),
                  DimensionMismatch);
}
