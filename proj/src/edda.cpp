#include "damda/edda.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>

#include <fmt/format.h>

#include "damda/errors.hpp"

namespace damda {

std::string_view to_string(CovStructure s) {
  switch (s) {
    case CovStructure::EII: return "EII";
    case CovStructure::VII: return "VII";
    case CovStructure::EEI: return "EEI";
    case CovStructure::VVI: return "VVI";
    case CovStructure::EEE: return "EEE";
    case CovStructure::VVV: return "VVV";
  }
  return "?";
}

CovStructure parse_structure(std::string_view name) {
  for (CovStructure s : kAllStructures)
    if (to_string(s) == name) return s;
  throw ConfigError(fmt::format("unknown covariance structure '{}'", name));
}

std::size_t covariance_parameter_count(CovStructure s, std::size_t k, std::size_t p) {
  switch (s) {
    case CovStructure::EII: return 1;
    case CovStructure::VII: return k;
    case CovStructure::EEI: return p;
    case CovStructure::VVI: return k * p;
    case CovStructure::EEE: return p * (p + 1) / 2;
    case CovStructure::VVV: return k * p * (p + 1) / 2;
  }
  return 0;
}

std::size_t edda_parameter_count(CovStructure s, std::size_t k, std::size_t p) {
  return (k - 1) + k * p + covariance_parameter_count(s, k, p);
}

namespace {

struct ClassStats {
  std::vector<Eigen::Index> rows;  // lexicographically sorted row indices
  double n = 0.0;
  VectorXd mean;
  MatrixXd scatter;
};

bool row_less(const MatrixXd& x, Eigen::Index a, Eigen::Index b) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (x(a, j) < x(b, j)) return true;
    if (x(b, j) < x(a, j)) return false;
  }
  return false;
}

// Row order is canonicalised so the fit does not depend on the order of the
// training file.
std::vector<ClassStats> class_statistics(const MatrixXd& x, std::span<const int> labels,
                                         std::size_t k) {
  std::vector<ClassStats> out(k);
  for (Eigen::Index s = 0; s < x.rows(); ++s) out[static_cast<std::size_t>(labels[s])].rows.push_back(s);
  for (std::size_t c = 0; c < k; ++c) {
    auto& st = out[c];
    if (st.rows.size() < 2)
      throw DegenerateClass(fmt::format("class {} has {} observation(s); at least 2 are required", c,
                                        st.rows.size()));
    std::stable_sort(st.rows.begin(), st.rows.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return row_less(x, a, b); });
    st.n = static_cast<double>(st.rows.size());
    st.mean = VectorXd::Zero(x.cols());
    for (Eigen::Index r : st.rows) st.mean += x.row(r).transpose();
    st.mean /= st.n;
    st.scatter = MatrixXd::Zero(x.cols(), x.cols());
    for (Eigen::Index r : st.rows) {
      const VectorXd d = x.row(r).transpose() - st.mean;
      st.scatter.noalias() += d * d.transpose();
    }
    st.scatter = symmetrize(st.scatter);
  }
  return out;
}

MatrixXd floor_diagonal(MatrixXd s, const VectorXd& floors) {
  for (Eigen::Index j = 0; j < s.rows(); ++j) s(j, j) = std::max(s(j, j), floors(j));
  return s;
}

std::vector<MatrixXd> structure_covariances(CovStructure structure, const std::vector<ClassStats>& st,
                                            double m, std::size_t p, const VectorXd& floors) {
  const auto pp = static_cast<Eigen::Index>(p);
  const double sphere_floor = floors.size() ? floors.maxCoeff() : 0.0;
  MatrixXd pooled = MatrixXd::Zero(pp, pp);
  for (const auto& c : st) pooled += c.scatter;
  std::vector<MatrixXd> covs;
  covs.reserve(st.size());
  switch (structure) {
    case CovStructure::EII: {
      const double lambda = std::max(pooled.trace() / (m * static_cast<double>(p)), sphere_floor);
      for (std::size_t c = 0; c < st.size(); ++c) covs.push_back(lambda * MatrixXd::Identity(pp, pp));
      break;
    }
    case CovStructure::VII:
      for (const auto& c : st) {
        const double lambda = std::max(c.scatter.trace() / (c.n * static_cast<double>(p)), sphere_floor);
        covs.push_back(lambda * MatrixXd::Identity(pp, pp));
      }
      break;
    case CovStructure::EEI: {
      const VectorXd diag = (pooled.diagonal() / m).cwiseMax(floors);
      for (std::size_t c = 0; c < st.size(); ++c) covs.push_back(diag.asDiagonal());
      break;
    }
    case CovStructure::VVI:
      for (const auto& c : st) {
        const VectorXd diag = (c.scatter.diagonal() / c.n).cwiseMax(floors);
        covs.push_back(diag.asDiagonal());
      }
      break;
    case CovStructure::EEE: {
      const MatrixXd shared = floor_diagonal(pooled / m, floors);
      for (std::size_t c = 0; c < st.size(); ++c) covs.push_back(shared);
      break;
    }
    case CovStructure::VVV:
      for (const auto& c : st) covs.push_back(floor_diagonal(c.scatter / c.n, floors));
      break;
  }
  return covs;
}

}  // namespace

EddaModel fit_edda(const MatrixXd& x, std::span<const int> labels,
                   std::span<const CovStructure> structures, std::vector<std::string> variable_names,
                   std::vector<std::string> class_labels, std::vector<StructureFit>* report) {
  const auto m_rows = static_cast<std::size_t>(x.rows());
  const auto p = static_cast<std::size_t>(x.cols());
  if (p == 0) throw DimensionMismatch("fit_edda: training data has no variables");
  if (labels.size() != m_rows)
    throw DimensionMismatch(fmt::format("fit_edda: {} labels for {} rows", labels.size(), m_rows));
  if (structures.empty()) throw ConfigError("fit_edda: empty structure menu");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw DimensionMismatch("fit_edda: negative class label");
    max_label = std::max(max_label, l);
  }
  const auto k = static_cast<std::size_t>(max_label + 1);
  if (k == 0) throw DegenerateClass("fit_edda: no labelled rows");
  if (variable_names.empty())
    for (std::size_t j = 0; j < p; ++j) variable_names.push_back(fmt::format("V{}", j + 1));
  if (class_labels.empty())
    for (std::size_t c = 0; c < k; ++c) class_labels.push_back(std::to_string(c));
  if (variable_names.size() != p || class_labels.size() != k)
    throw DimensionMismatch("fit_edda: name vectors do not match the data");

  const auto stats = class_statistics(x, labels, k);
  const double m = static_cast<double>(m_rows);
  VectorXd tau(static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) tau(static_cast<Eigen::Index>(c)) = stats[c].n / m;

  // Variance floor 1e-8 * (column range)^2 for degenerate columns.
  const VectorXd range = x.colwise().maxCoeff() - x.colwise().minCoeff();
  const VectorXd floors = 1e-8 * range.array().square().matrix();

  std::optional<EddaModel> best;
  std::size_t best_params = 0;
  std::vector<StructureFit> fits;
  for (CovStructure structure : structures) {
    StructureFit fit;
    fit.structure = structure;
    fit.n_params = edda_parameter_count(structure, k, p);
    try {
      auto covs = structure_covariances(structure, stats, m, p, floors);
      std::vector<GaussianParams> classes;
      for (std::size_t c = 0; c < k; ++c) classes.emplace_back(stats[c].mean, std::move(covs[c]));
      double loglik = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double log_tau = std::log(tau(static_cast<Eigen::Index>(c)));
        for (Eigen::Index r : stats[c].rows)
          loglik += log_tau + log_density(x.row(r).transpose(), classes[c]);
      }
      fit.ok = std::isfinite(loglik);
      fit.loglik = loglik;
      fit.bic = 2.0 * loglik - static_cast<double>(fit.n_params) * std::log(m);
      if (!fit.ok) fit.message = "non-finite log-likelihood";
      if (fit.ok && (!best || fit.bic > best->bic || (fit.bic == best->bic && fit.n_params < best_params))) {
        best = EddaModel{k, p, tau, std::move(classes), structure, loglik, fit.bic, variable_names, class_labels};
        best_params = fit.n_params;
      }
    } catch (const NotPositiveDefinite& e) {
      fit.ok = false;
      fit.message = e.what();
    }
    fits.push_back(std::move(fit));
  }
  if (report) *report = fits;
  if (!best) {
    std::string why;
    for (const auto& f : fits) why += fmt::format(" {}: {};", to_string(f.structure), f.message);
    throw DegenerateClass("fit_edda: every structure is numerically singular:" + why);
  }
  return std::move(*best);
}

MatrixXd predict_map_rows(const EddaModel& model, const MatrixXd& y) {
  if (static_cast<std::size_t>(y.cols()) != model.P)
    throw DimensionMismatch(fmt::format("predict_map: data has {} columns, model has {}", y.cols(), model.P));
  MatrixXd logp(y.rows(), static_cast<Eigen::Index>(model.K));
  for (std::size_t c = 0; c < model.K; ++c)
    logp.col(static_cast<Eigen::Index>(c)) =
        (log_density_rows(y, model.classes[c]).array() + std::log(model.tau(static_cast<Eigen::Index>(c)))).matrix();
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    const double mx = logp.row(i).maxCoeff();
    logp.row(i) = (logp.row(i).array() - mx).exp();
    logp.row(i) /= logp.row(i).sum();
  }
  return logp;
}

VectorXd predict_map(const EddaModel& model, const VectorXd& y) {
  if (static_cast<std::size_t>(y.size()) != model.P)
    throw DimensionMismatch(fmt::format("predict_map: point has length {}, model has {} variables", y.size(), model.P));
  return predict_map_rows(model, y.transpose()).row(0).transpose();
}

EddaModel marginal_submodel(const EddaModel& model, std::span<const std::size_t> keep) {
  if (keep.empty()) throw DimensionMismatch("marginal_submodel: empty variable set");
  std::set<std::size_t> seen;
  for (std::size_t j : keep) {
    if (j >= model.P) throw DimensionMismatch(fmt::format("marginal_submodel: index {} out of range", j));
    if (!seen.insert(j).second) throw DimensionMismatch(fmt::format("marginal_submodel: duplicate index {}", j));
  }
  std::vector<Eigen::Index> idx(keep.begin(), keep.end());
  EddaModel out;
  out.K = model.K;
  out.P = keep.size();
  out.tau = model.tau;
  for (const auto& c : model.classes) out.classes.emplace_back(c.mean()(idx), c.cov()(idx, idx));
  switch (model.structure) {
    case CovStructure::EEE:
    case CovStructure::VVV: out.structure = CovStructure::VVV; break;
    default: out.structure = model.structure;
  }
  out.loglik = std::numeric_limits<double>::quiet_NaN();
  out.bic = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j : keep) out.variable_names.push_back(model.variable_names[j]);
  out.class_labels = model.class_labels;
  return out;
}

bool conforms_to_structure(const EddaModel& model, double tol) {
  if (model.classes.empty()) return false;
  const auto close = [tol](const MatrixXd& a, const MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff() <= tol;
  };
  const auto p = static_cast<Eigen::Index>(model.P);
  const MatrixXd& first = model.classes.front().cov();
  for (const auto& c : model.classes) {
    const MatrixXd& s = c.cov();
    switch (model.structure) {
      case CovStructure::EII:
        if (!close(s, first(0, 0) * MatrixXd::Identity(p, p))) return false;
        break;
      case CovStructure::VII:
        if (!close(s, s(0, 0) * MatrixXd::Identity(p, p))) return false;
        break;
      case CovStructure::EEI:
        if (!close(s, MatrixXd(first.diagonal().asDiagonal()))) return false;
        break;
      case CovStructure::VVI:
        if (!close(s, MatrixXd(s.diagonal().asDiagonal()))) return false;
        break;
      case CovStructure::EEE:
        if (!close(s, first)) return false;
        break;
      case CovStructure::VVV: break;
    }
  }
  return true;
}

}  // namespace damda
