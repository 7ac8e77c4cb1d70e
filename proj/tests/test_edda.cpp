#include "doctest.h"

#include <map>
#include <vector>

#include "damda/edda.hpp"
#include "damda/errors.hpp"
#include "helpers.hpp"

using namespace damda;
using testing::rows;

namespace {

// 13 x 2, first 7 rows class 0. Same data as tests/oracles/make_oracles.py.
MatrixXd edda_x() {
  return rows(13, 2, {0.17, -0.18, -0.92, -0.74, -2.88, -0.16, -0.53, 1.1,  0.03, -0.49, -0.87, 0.96, -0.62,
                      -0.06, 2.81, 1.6,  2.81, 1.9,  2.35, 2.11, 3.19, 1.24, 2.21, 0.43,  2.83,  -0.43});
}

std::vector<int> edda_labels() { return {0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1}; }

}  // namespace

TEST_CASE("every structure reproduces the closed-form likelihood") {
  // scipy log densities at the ML estimates (make_oracles.py)
  const std::map<CovStructure, std::pair<double, double>> oracle = {
      {CovStructure::EII, {-38.172790602117495, -91.7352773490042}},
      {CovStructure::VII, {-37.955705139947085, -93.86605578212493}},
      {CovStructure::EEI, {-38.14504541137219, -94.24473632497514}},
      {CovStructure::VVI, {-34.92984624491523, -92.9442367069843}},
      {CovStructure::EEE, {-38.144754454530144, -96.80910376875258}},
      {CovStructure::VVV, {-34.928977795355216, -98.07239852278734}},
  };
  const auto x = edda_x();
  const auto lab = edda_labels();
  std::vector<StructureFit> report;
  const auto m = fit_edda(x, lab, kAllStructures, {"a", "b"}, {"u", "v"}, &report);
  REQUIRE(report.size() == 6);
  for (const auto& f : report) {
    CAPTURE(to_string(f.structure));
    REQUIRE(f.ok);
    CHECK(f.loglik == doctest::Approx(oracle.at(f.structure).first).epsilon(1e-12));
    CHECK(f.bic == doctest::Approx(oracle.at(f.structure).second).epsilon(1e-12));
  }
  CHECK(m.structure == CovStructure::EII);
  CHECK(m.K == 2);
  CHECK(m.P == 2);
  CHECK(m.tau(0) == doctest::Approx(7.0 / 13.0));
  CHECK(m.variable_names == std::vector<std::string>{"a", "b"});
  CHECK(m.class_labels == std::vector<std::string>{"u", "v"});
  CHECK(conforms_to_structure(m));
}

TEST_CASE("parameter counts follow the mclust table") {
  // K=3, P=4
  CHECK(covariance_parameter_count(CovStructure::EII, 3, 4) == 1);
  CHECK(covariance_parameter_count(CovStructure::VII, 3, 4) == 3);
  CHECK(covariance_parameter_count(CovStructure::EEI, 3, 4) == 4);
  CHECK(covariance_parameter_count(CovStructure::VVI, 3, 4) == 12);
  CHECK(covariance_parameter_count(CovStructure::EEE, 3, 4) == 10);
  CHECK(covariance_parameter_count(CovStructure::VVV, 3, 4) == 30);
  CHECK(edda_parameter_count(CovStructure::VVV, 3, 4) == 2 + 12 + 30);
}

TEST_CASE("fit does not depend on row order") {
  auto x = edda_x();
  auto lab = edda_labels();
  const auto a = fit_edda(x, lab, kAllStructures);
  // reverse rows
  MatrixXd xr = x.colwise().reverse();
  std::vector<int> lr(lab.rbegin(), lab.rend());
  const auto b = fit_edda(xr, lr, kAllStructures);
  CHECK(a.structure == b.structure);
  CHECK(a.loglik == b.loglik);
  for (std::size_t k = 0; k < 2; ++k) CHECK((a.classes[k].cov() - b.classes[k].cov()).norm() == 0.0);
}

TEST_CASE("degenerate training data") {
  const auto x = edda_x();
  std::vector<int> lab = edda_labels();
  lab[0] = 2;  // class 2 with a single row
  CHECK_THROWS_AS(fit_edda(x, lab, kAllStructures), DegenerateClass);
  CHECK_THROWS_AS(parse_structure("XYZ"), ConfigError);
  CHECK(parse_structure("VVI") == CovStructure::VVI);
}

TEST_CASE("map posteriors and marginal submodels") {
  Rng rng(5);
  MatrixXd x = testing::random_normal(rng, 40, 3);
  std::vector<int> lab(40);
  for (int i = 0; i < 40; ++i) {
    lab[i] = i % 2;
    if (lab[i]) x.row(i).array() += 4.0;
  }
  const auto m = fit_edda(x, lab, std::vector<CovStructure>{CovStructure::VVV});
  const MatrixXd post = predict_map_rows(m, x);
  for (int i = 0; i < 40; ++i) {
    CHECK(post.row(i).sum() == doctest::Approx(1.0));
    CHECK(post(i, lab[i]) > 0.99);
    CHECK(testing::max_rel_diff(predict_map(m, x.row(i).transpose()).transpose(), post.row(i)) < 1e-12);
  }
  const std::vector<std::size_t> keep = {2, 0};
  const auto sub = marginal_submodel(m, keep);
  CHECK(sub.P == 2);
  CHECK(std::isnan(sub.loglik));
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(sub.classes[k].mean()(0) == m.classes[k].mean()(2));
    CHECK(sub.classes[k].cov()(0, 1) == m.classes[k].cov()(2, 0));
  }
}

TEST_CASE("property: structured fits keep their shape") {
  Rng rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd x = testing::random_normal(rng, 30, 3);
    std::vector<int> lab(30);
    for (int i = 0; i < 30; ++i) lab[i] = i % 3;
    for (CovStructure s : kAllStructures) {
      const auto m = fit_edda(x, lab, std::vector<CovStructure>{s});
      CHECK(conforms_to_structure(m));
      // more parameters never lowers the likelihood within a nested chain
    }
    const auto eii = fit_edda(x, lab, std::vector<CovStructure>{CovStructure::EII});
    const auto eee = fit_edda(x, lab, std::vector<CovStructure>{CovStructure::EEE});
    const auto vvv = fit_edda(x, lab, std::vector<CovStructure>{CovStructure::VVV});
    CHECK(eii.loglik <= eee.loglik + 1e-9);
    CHECK(eee.loglik <= vvv.loglik + 1e-9);
  }
}
