#include "damda/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "damda/errors.hpp"
#include "damda/rng.hpp"

namespace damda {

namespace {

class ComponentCollapse : public FitFailure {
 public:
  using FitFailure::FitFailure;
};

MatrixXd floor_to_pd(const MatrixXd& s) {
  if (is_positive_definite(s)) return s;
  return s + 1e-8 * MatrixXd::Identity(s.rows(), s.cols());
}

}  // namespace

// ---------------------------------------------------------------------------
// Model types

VectorXd KnownClass::joint_mean() const {
  const auto p = fixed.mean().size();
  const auto q = aug_mean.size();
  VectorXd m(p + q);
  m.head(p) = fixed.mean();
  m.tail(q) = aug_mean;
  return m;
}

GaussianParams KnownClass::joint() const { return GaussianParams(joint_mean(), assemble_cov(aug_cov)); }

std::vector<GaussianParams> DamdaModel::component_params() const {
  std::vector<GaussianParams> out;
  out.reserve(components());
  for (const auto& k : known) out.push_back(k.joint());
  for (const auto& h : hidden) out.push_back(h);
  return out;
}

ScatterPartition ScatterPartition::split(const MatrixXd& scatter, std::size_t p, double n_k) {
  const auto pp = static_cast<Eigen::Index>(p);
  const auto q = scatter.rows() - pp;
  if (q < 0 || scatter.rows() != scatter.cols())
    throw DimensionMismatch("ScatterPartition::split: scatter smaller than the training block");
  return {scatter.topLeftCorner(pp, pp), scatter.topRightCorner(pp, q), scatter.bottomRightCorner(q, q), n_k};
}

// ---------------------------------------------------------------------------
// E step and mixing proportions

Responsibilities e_step(const MatrixXd& y, const DamdaModel& model) {
  if (static_cast<std::size_t>(y.cols()) != model.R())
    throw DimensionMismatch(fmt::format("e_step: data has {} columns, model has {}", y.cols(), model.R()));
  const std::size_t c_count = model.components();
  if (static_cast<std::size_t>(model.tau.size()) != c_count)
    throw DimensionMismatch("e_step: tau length differs from the component count");
  const auto comps = model.component_params();
  Responsibilities out;
  out.t.resize(y.rows(), static_cast<Eigen::Index>(c_count));
  for (std::size_t c = 0; c < c_count; ++c) {
    const double tau = model.tau(static_cast<Eigen::Index>(c));
    const double log_tau = tau > 0.0 ? std::log(tau) : -std::numeric_limits<double>::infinity();
    out.t.col(static_cast<Eigen::Index>(c)) = (log_density_rows(y, comps[c]).array() + log_tau).matrix();
  }
  double loglik = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    auto row = out.t.row(i);
    const double mx = row.maxCoeff();
    if (!std::isfinite(mx))
      throw FitFailure(fmt::format("e_step: row {} has no finite component density", i));
    row = (row.array() - mx).exp();
    const double s = row.sum();
    row /= s;
    loglik += mx + std::log(s);
  }
  if (!std::isfinite(loglik)) throw FitFailure("e_step: non-finite log-likelihood");
  out.loglik = loglik;
  return out;
}

VectorXd m_step_mixing(const Responsibilities& resp) {
  return resp.t.colwise().sum().transpose() / static_cast<double>(resp.t.rows());
}

// ---------------------------------------------------------------------------
// Regularisation

RegularizationContext RegularizationContext::from_data(const MatrixXd& y, std::size_t k, std::size_t h) {
  RegularizationContext ctx;
  const double n = static_cast<double>(y.rows());
  const MatrixXd centred = y.rowwise() - y.colwise().mean();
  ctx.S = floor_to_pd(symmetrize(centred.transpose() * centred / n));
  ctx.K = k;
  ctx.H = h;
  ctx.N = static_cast<std::size_t>(y.rows());
  return ctx;
}

double regularization_gamma(std::size_t r, std::size_t n) {
  return std::max(std::log(static_cast<double>(r)) / static_cast<double>(n), 1e-8);
}

MatrixXd regularize_scatter(const MatrixXd& scatter, const MatrixXd& s, std::size_t k, std::size_t h,
                            std::size_t n, std::size_t r) {
  if (scatter.rows() != s.rows() || scatter.cols() != s.cols() || static_cast<std::size_t>(s.rows()) != r)
    throw DimensionMismatch("regularize_scatter: scatter, S and R disagree");
  if (k + h == 0 || n == 0) throw ConfigError("regularize_scatter: needs K + H > 0 and N > 0");
  const MatrixXd sf = floor_to_pd(s);
  const auto l = cholesky_gate(sf);
  if (!l) throw NotPositiveDefinite("regularize_scatter: S is not positive definite even after flooring");
  const double rr = static_cast<double>(r);
  const double log_det = 2.0 * l->diagonal().array().log().sum();
  const double gamma = regularization_gamma(r, n);
  const double scale = std::exp(-log_det / rr) * std::pow(gamma / static_cast<double>(k + h), 1.0 / rr);
  return scatter + scale * sf;
}

// ---------------------------------------------------------------------------
// M step

HiddenUpdate m_step_hidden(const MatrixXd& y, const Responsibilities& resp, std::size_t component,
                           const RegularizationContext& ctx) {
  if (component >= static_cast<std::size_t>(resp.t.cols()))
    throw DimensionMismatch("m_step_hidden: component index out of range");
  const auto mom = weighted_moments(y, resp.t.col(static_cast<Eigen::Index>(component)));
  if (!(mom.weight > 0.0)) throw FitFailure(fmt::format("m_step_hidden: component {} has no mass", component));
  MatrixXd cov = symmetrize(mom.scatter / mom.weight);
  // fewer than R+1 effective points cannot support a full covariance, whatever the pivots say
  const bool thin = mom.weight < static_cast<double>(y.cols()) + 1.0;
  if (!thin && is_positive_definite(cov)) return {GaussianParams(mom.mean, std::move(cov)), false, mom.scatter, {}};
  MatrixXd reg = regularize_scatter(mom.scatter, ctx.S, ctx.K, ctx.H, ctx.N, static_cast<std::size_t>(y.cols()));
  cov = symmetrize(reg / mom.weight);
  if (!is_positive_definite(cov))
    throw FitFailure(fmt::format("m_step_hidden: component {} scatter singular after regularisation", component));
  return {GaussianParams(mom.mean, std::move(cov)), true, mom.scatter, std::move(reg)};
}

ConditionalEstimate inductive_conditional_update(const ScatterPartition& sp, const GaussianParams& fixed,
                                                 const WeightedSums& sums) {
  const auto p = static_cast<Eigen::Index>(fixed.dim());
  const auto q = sp.U.rows();
  ConditionalEstimate out;
  if (q == 0) {
    out.cross = MatrixXd(p, 0);
    out.residual = MatrixXd(0, 0);
    out.new_cov = MatrixXd(0, 0);
    out.aug_mean = VectorXd(0);
    return out;
  }
  if (sp.W.rows() != p || sp.W.cols() != p || sp.V.rows() != p || sp.V.cols() != q || sp.U.cols() != q ||
      sums.sum_q.size() != q || sums.sum_dev_p.size() != p)
    throw DimensionMismatch("inductive_conditional_update: block sizes disagree with the fixed parameters");
  if (!(sp.n_k > 0.0)) throw FitFailure("inductive_conditional_update: class has no mass");

  const MatrixXd sigma_inv = fixed.inverse();
  const MatrixXd a = symmetrize(sigma_inv * sp.W * sigma_inv);
  const auto la = cholesky_gate(a);
  if (!la) throw NotPositiveDefinite("inductive_conditional_update: W_k is not positive definite");
  const auto lower = la->triangularView<Eigen::Lower>();
  // C = (S^-1 W S^-1)^-1 (S^-1 V)
  out.cross = lower.transpose().solve(lower.solve(sigma_inv * sp.V));
  // E = [C' S^-1 W S^-1 C - 2 V' S^-1 C + U] / N_k
  out.residual = symmetrize((out.cross.transpose() * a * out.cross -
                             2.0 * sp.V.transpose() * sigma_inv * out.cross + sp.U) /
                            sp.n_k);
  if (!is_positive_definite(out.residual))
    throw NotPositiveDefinite("inductive_conditional_update: conditional covariance E_k is not positive definite");
  out.new_cov = symmetrize(out.residual + out.cross.transpose() * sigma_inv * out.cross);
  out.aug_mean = (sums.sum_q - out.cross.transpose() * sigma_inv * sums.sum_dev_p) / sp.n_k;
  return out;
}

namespace {

// Known-class update over the additional variables; returns whether the
// scatter had to be regularised.
bool m_step_known(const MatrixXd& y, const Responsibilities& resp, std::size_t k, KnownClass& cls,
                  const RegularizationContext& ctx, MatrixXd* raw_scatter, MatrixXd* reg_scatter) {
  const std::size_t p = cls.fixed.dim();
  const auto q = static_cast<Eigen::Index>(y.cols()) - static_cast<Eigen::Index>(p);
  const auto mom = weighted_moments(y, resp.t.col(static_cast<Eigen::Index>(k)));
  const double nk = mom.weight;
  MatrixXd scatter = mom.scatter;
  bool regularized = false;
  if (nk < static_cast<double>(y.cols()) + 1.0 || !is_positive_definite(symmetrize(scatter / nk))) {
    *raw_scatter = scatter;
    scatter = regularize_scatter(scatter, ctx.S, ctx.K, ctx.H, ctx.N, static_cast<std::size_t>(y.cols()));
    *reg_scatter = scatter;
    regularized = true;
  }
  WeightedSums sums{nk * mom.mean.tail(q), nk * (mom.mean.head(static_cast<Eigen::Index>(p)) - cls.fixed.mean())};
  const auto est = inductive_conditional_update(ScatterPartition::split(scatter, p, nk), cls.fixed, sums);
  cls.aug_mean = est.aug_mean;
  cls.aug_cov.cross_block = est.cross;
  cls.aug_cov.new_block = est.new_cov;
  return regularized;
}

}  // namespace

// ---------------------------------------------------------------------------
// Initialisation

namespace {

// Ward labels with exactly c clusters, none of them a singleton. Singletons
// join the nearest centroid; when that leaves fewer than c clusters the tree
// is cut deeper.
std::vector<int> cut_without_singletons(const WardTree& tree, const MatrixXd& y, std::size_t c) {
  const std::size_t n = tree.size();
  for (std::size_t cut = c; cut <= n; ++cut) {
    std::vector<int> lab = tree.cut(cut);
    std::vector<std::size_t> size(cut, 0);
    for (int l : lab) ++size[static_cast<std::size_t>(l)];
    std::vector<std::size_t> big;
    for (std::size_t g = 0; g < cut; ++g)
      if (size[g] >= 2) big.push_back(g);
    if (big.size() < c) continue;
    if (big.size() < cut) {
      MatrixXd centroid = MatrixXd::Zero(static_cast<Eigen::Index>(cut), y.cols());
      for (std::size_t i = 0; i < n; ++i) centroid.row(lab[i]) += y.row(static_cast<Eigen::Index>(i));
      for (std::size_t g : big) centroid.row(static_cast<Eigen::Index>(g)) /= static_cast<double>(size[g]);
      for (std::size_t i = 0; i < n; ++i) {
        if (size[static_cast<std::size_t>(lab[i])] >= 2) continue;
        double best = std::numeric_limits<double>::infinity();
        int target = -1;
        for (std::size_t g : big) {
          const double dd = (y.row(static_cast<Eigen::Index>(i)) - centroid.row(static_cast<Eigen::Index>(g))).squaredNorm();
          if (dd < best) {
            best = dd;
            target = static_cast<int>(g);
          }
        }
        lab[i] = target;
      }
    }
    if (big.size() != c) continue;
    std::vector<int> remap(cut, -1);
    int next = 0;
    for (auto& l : lab) {
      if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = next++;
      l = remap[static_cast<std::size_t>(l)];
    }
    return lab;
  }
  throw FitFailure(fmt::format("initialize: cannot form {} clusters of at least two observations", c));
}

}  // namespace

namespace {

void check_init_sizes(std::size_t n, std::size_t r, const EddaModel& learned, std::size_t c) {
  if (learned.P == 0) throw FitFailure("initialize: the learned model has no variables");
  if (r < learned.P)
    throw DimensionMismatch(fmt::format("initialize: data has {} columns, learned model {}", r, learned.P));
  if (c < learned.K) throw ConfigError(fmt::format("initialize: {} components but {} learned classes", c, learned.K));
  if (n < 2 * c) throw FitFailure(fmt::format("initialize: {} observations cannot support {} clusters", n, c));
}

// Parameters from a hard partition into c groups. With match empty the
// learned classes are matched greedily to groups; otherwise match[k] is the
// group of learned class k.
DamdaModel model_from_partition(const MatrixXd& y, const EddaModel& learned, const std::vector<int>& lab,
                                std::size_t c, std::vector<std::size_t> match) {
  const auto n = static_cast<std::size_t>(y.rows());
  const auto r = static_cast<std::size_t>(y.cols());
  const std::size_t p = learned.P;
  const std::size_t k = learned.K;
  const std::size_t q = r - p;
  const std::size_t h = c - k;
  const auto pp = static_cast<Eigen::Index>(p);
  const auto qq = static_cast<Eigen::Index>(q);

  const auto ctx = RegularizationContext::from_data(y, k, h);
  struct Cluster {
    double n = 0.0;
    VectorXd mean;
    MatrixXd scatter;
    MatrixXd cov;
  };
  std::vector<Cluster> clusters(c);
  std::vector<std::optional<GaussianParams>> cluster_p(c);
  for (std::size_t g = 0; g < c; ++g) {
    VectorXd w(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) w(static_cast<Eigen::Index>(i)) = lab[i] == static_cast<int>(g) ? 1.0 : 0.0;
    auto mom = weighted_moments(y, w);
    if (!(mom.weight > 0.0)) throw FitFailure(fmt::format("initialize: group {} is empty", g));
    Cluster& cl = clusters[g];
    cl.n = mom.weight;
    cl.mean = mom.mean;
    cl.scatter = mom.scatter;
    cl.cov = symmetrize(cl.scatter / cl.n);
    // same thin rule as the M-step, or a tiny group starts out degenerate
    if (cl.n < static_cast<double>(r) + 1.0 || !is_positive_definite(cl.cov)) {
      cl.scatter = regularize_scatter(cl.scatter, ctx.S, k, h, n, r);
      cl.cov = symmetrize(cl.scatter / cl.n);
    }
    cluster_p[g].emplace(cl.mean.head(pp), cl.cov.topLeftCorner(pp, pp));
  }

  std::vector<char> used(c, 0);
  if (match.empty()) {
    // greedy, without replacement, learned classes in order
    match.resize(k);
    for (std::size_t kk = 0; kk < k; ++kk) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = c;
      for (std::size_t g = 0; g < c; ++g) {
        if (used[g]) continue;
        const double s = kl_match_score(*cluster_p[g], learned.classes[kk]);
        if (arg == c || s < best) {
          best = s;
          arg = g;
        }
      }
      used[arg] = 1;
      match[kk] = arg;
    }
  } else {
    for (std::size_t g : match) used[g] = 1;
  }

  DamdaModel m;
  m.K = k;
  m.H = h;
  m.P = p;
  m.Q = q;
  m.tau.resize(static_cast<Eigen::Index>(c));
  m.variable_names = learned.variable_names;
  for (std::size_t j = 0; j < q; ++j) m.variable_names.push_back(fmt::format("Q{}", j + 1));
  m.class_labels = learned.class_labels;
  for (std::size_t j = 0; j < h; ++j) m.class_labels.push_back(fmt::format("hidden{}", j + 1));

  for (std::size_t kk = 0; kk < k; ++kk) {
    const Cluster& cl = clusters[match[kk]];
    const GaussianParams& fixed = learned.classes[kk];
    KnownClass known{fixed, cl.mean.tail(qq),
                     PartitionedCov{fixed.cov(), cl.cov.topRightCorner(pp, qq), cl.cov.bottomRightCorner(qq, qq)}};
    if (q > 0 && !is_positive_definite(schur_complement(known.aug_cov))) {
      // Cluster cross-covariances are incompatible with the learned block:
      // take the conditional estimate on the cluster's members instead.
      WeightedSums sums{cl.n * cl.mean.tail(qq), cl.n * (cl.mean.head(pp) - fixed.mean())};
      try {
        const auto est = inductive_conditional_update(ScatterPartition::split(cl.scatter, p, cl.n), fixed, sums);
        known.aug_mean = est.aug_mean;
        known.aug_cov.cross_block = est.cross;
        known.aug_cov.new_block = est.new_cov;
      } catch (const NotPositiveDefinite& e) {
        throw FitFailure(fmt::format("initialize: class {}: {}", kk, e.what()));
      }
    }
    m.tau(static_cast<Eigen::Index>(kk)) = cl.n / static_cast<double>(n);
    m.known.push_back(std::move(known));
  }
  std::size_t next = k;
  for (std::size_t g = 0; g < c; ++g) {
    if (used[g]) continue;
    m.tau(static_cast<Eigen::Index>(next++)) = clusters[g].n / static_cast<double>(n);
    m.hidden.emplace_back(clusters[g].mean, clusters[g].cov);
  }
  return m;
}

}  // namespace

DamdaModel initialize(const MatrixXd& y, const EddaModel& learned, std::size_t c, const WardTree* tree,
                      std::optional<std::uint64_t> perturb_seed) {
  const auto n = static_cast<std::size_t>(y.rows());
  check_init_sizes(n, static_cast<std::size_t>(y.cols()), learned, c);

  std::optional<WardTree> own;
  if (!tree) tree = &own.emplace(y);
  if (tree->size() != n) throw DimensionMismatch("initialize: Ward tree built on different data");
  std::vector<int> lab = cut_without_singletons(*tree, y, c);

  if (perturb_seed) {
    Rng rng(*perturb_seed);
    std::vector<std::size_t> size(c, 0);
    for (int l : lab) ++size[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() >= 0.1) continue;
      const auto target = rng.uniform_index(c);
      const auto from = static_cast<std::size_t>(lab[i]);
      if (target == from || size[from] <= 2) continue;
      --size[from];
      ++size[target];
      lab[i] = static_cast<int>(target);
    }
  }
  return model_from_partition(y, learned, lab, c, {});
}

DamdaModel initialize_from_learned(const MatrixXd& y, const EddaModel& learned, std::size_t c, double coverage,
                                   std::optional<std::uint64_t> perturb_seed) {
  const auto n = static_cast<std::size_t>(y.rows());
  check_init_sizes(n, static_cast<std::size_t>(y.cols()), learned, c);
  if (!(coverage > 0.0 && coverage < 1.0)) throw ConfigError("initialize_from_learned: coverage must be in (0, 1)");
  const std::size_t k = learned.K;
  const std::size_t h = c - k;
  const auto pp = static_cast<Eigen::Index>(learned.P);
  const double cutoff = boost::math::quantile(boost::math::chi_squared(static_cast<double>(learned.P)), coverage);

  const MatrixXd yp = y.leftCols(pp);
  MatrixXd score(y.rows(), static_cast<Eigen::Index>(k));
  MatrixXd dist(y.rows(), static_cast<Eigen::Index>(k));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const auto& cls = learned.classes[kk];
    const VectorXd ld = log_density_rows(yp, cls);
    // log phi = -(P log 2pi + log det + d^2) / 2
    const double base = static_cast<double>(learned.P) * std::log(2.0 * std::numbers::pi) + cls.log_det();
    dist.col(static_cast<Eigen::Index>(kk)) = (-2.0 * ld).array() - base;
    score.col(static_cast<Eigen::Index>(kk)) = ld.array() + std::log(learned.tau(static_cast<Eigen::Index>(kk)));
  }
  std::vector<int> lab(n, -1);
  std::vector<Eigen::Index> rest;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    Eigen::Index arg = 0;
    score.row(ii).maxCoeff(&arg);
    if (h == 0 || dist(ii, arg) <= cutoff) lab[i] = static_cast<int>(arg);
    else rest.push_back(ii);
  }
  std::vector<std::size_t> size(k, 0);
  for (int l : lab)
    if (l >= 0) ++size[static_cast<std::size_t>(l)];
  for (std::size_t kk = 0; kk < k; ++kk)
    if (size[kk] < 2) throw FitFailure(fmt::format("initialize_from_learned: class {} covers {} observations", kk, size[kk]));
  if (h > 0) {
    if (rest.size() < 2 * h)
      throw FitFailure(fmt::format("initialize_from_learned: {} unexplained observations for {} hidden classes",
                                   rest.size(), h));
    // Ward in the geometry of the learned classes: the training block is
    // whitened by their pooled covariance, additional variables are scaled to
    // unit variance.
    MatrixXd pooled = MatrixXd::Zero(pp, pp);
    for (std::size_t kk = 0; kk < k; ++kk)
      pooled += learned.tau(static_cast<Eigen::Index>(kk)) * learned.classes[kk].cov();
    const auto lp = cholesky_gate(symmetrize(pooled));
    MatrixXd yr(static_cast<Eigen::Index>(rest.size()), y.cols());
    for (std::size_t j = 0; j < rest.size(); ++j) yr.row(static_cast<Eigen::Index>(j)) = y.row(rest[j]);
    if (lp) yr.leftCols(pp) = lp->triangularView<Eigen::Lower>().solve(yr.leftCols(pp).transpose()).transpose();
    for (Eigen::Index j = pp; j < y.cols(); ++j) {
      const double mean = y.col(j).mean();
      const double sd = std::sqrt((y.col(j).array() - mean).square().mean());
      if (sd > 0.0) yr.col(j) /= sd;
    }
    const auto sub = cut_without_singletons(WardTree(yr), yr, h);
    for (std::size_t j = 0; j < rest.size(); ++j)
      lab[static_cast<std::size_t>(rest[j])] = static_cast<int>(k) + sub[j];
    if (perturb_seed && h > 1) {
      Rng rng(*perturb_seed);
      std::vector<std::size_t> hsize(h, 0);
      for (int v : sub) ++hsize[static_cast<std::size_t>(v)];
      for (std::size_t j = 0; j < rest.size(); ++j) {
        if (rng.uniform() >= 0.1) continue;
        const auto target = rng.uniform_index(h);
        auto& l = lab[static_cast<std::size_t>(rest[j])];
        const auto from = static_cast<std::size_t>(l) - k;
        if (target == from || hsize[from] <= 2) continue;
        --hsize[from];
        ++hsize[target];
        l = static_cast<int>(k + target);
      }
    }
  }
  std::vector<std::size_t> match(k);
  for (std::size_t kk = 0; kk < k; ++kk) match[kk] = kk;
  return model_from_partition(y, learned, lab, c, std::move(match));
}

// ---------------------------------------------------------------------------
// EM

namespace {

// Expected complete-data log-likelihood of one component, new vs current.
bool improves(const MatrixXd& y, const Eigen::Ref<const VectorXd>& w, const GaussianParams& next,
              const GaussianParams& current) {
  const double a = w.dot(log_density_rows(y, next));
  const double b = w.dot(log_density_rows(y, current));
  return !(a < b);
}

}  // namespace

DamdaModel run_em_from(const MatrixXd& y, DamdaModel model, const EmConfig& config, EmObserver* observer) {
  if (static_cast<std::size_t>(y.cols()) != model.R())
    throw DimensionMismatch(fmt::format("run_em: data has {} columns, model has {}", y.cols(), model.R()));
  const auto n = static_cast<std::size_t>(y.rows());
  const auto ctx = RegularizationContext::from_data(y, model.K, model.H);
  model.loglik_trace.clear();
  model.iterations = 0;
  model.converged = false;
  model.regularizations = 0;
  double prev = 0.0;
  for (std::size_t it = 0;; ++it) {
    const Responsibilities resp = e_step(y, model);
    model.loglik = resp.loglik;
    model.loglik_trace.push_back(resp.loglik);
    if (observer) observer->on_iteration(it, model, resp);
    if (it > 0 && std::abs(resp.loglik - prev) / (std::abs(resp.loglik) + 1.0) < config.rel_tol) {
      model.converged = true;
      break;
    }
    if (it == config.max_iter) break;
    prev = resp.loglik;

    const VectorXd mass = resp.t.colwise().sum().transpose();
    for (std::size_t c = 0; c < model.components(); ++c) {
      const bool estimated = c >= model.K || model.Q > 0;
      if (estimated && mass(static_cast<Eigen::Index>(c)) < config.collapse_fraction * static_cast<double>(n))
        throw ComponentCollapse(fmt::format("component {} collapsed (mass {:g})", c, mass(static_cast<Eigen::Index>(c))));
    }

    model.tau = m_step_mixing(resp);
    try {
      if (model.Q > 0) {
        for (std::size_t k = 0; k < model.K; ++k) {
          MatrixXd raw, reg;
          KnownClass next = model.known[k];
          if (m_step_known(y, resp, k, next, ctx, &raw, &reg)) {
            ++model.regularizations;
            if (observer)
              observer->on_regularization({it, k, std::move(raw), std::move(reg), ctx.S, ctx.K, ctx.H, ctx.N, model.R()});
            // a regularised update is not the maximiser; only take it if it helps
            const auto w = resp.t.col(static_cast<Eigen::Index>(k));
            if (!improves(y, w, next.joint(), model.known[k].joint())) continue;
          }
          model.known[k] = std::move(next);
        }
      }
      for (std::size_t h = 0; h < model.H; ++h) {
        auto up = m_step_hidden(y, resp, model.K + h, ctx);
        if (up.regularized) {
          ++model.regularizations;
          if (observer)
            observer->on_regularization(
                {it, model.K + h, std::move(up.scatter), std::move(up.regularized_scatter), ctx.S, ctx.K, ctx.H, ctx.N, model.R()});
          const auto w = resp.t.col(static_cast<Eigen::Index>(model.K + h));
          if (!improves(y, w, up.params, model.hidden[h])) continue;
        }
        model.hidden[h] = std::move(up.params);
      }
    } catch (const NotPositiveDefinite& e) {
      throw FitFailure(fmt::format("M step, iteration {}: {}", it, e.what()));
    }
    model.iterations = it + 1;
  }
  model.bic = bic_h(model.loglik, model.H, model.K, model.R(), model.P, model.Q, n);
  return model;
}

namespace {

DamdaModel run_em_ward(const MatrixXd& y, const EddaModel& learned, std::size_t h, const EmConfig& config,
                       EmObserver* observer, const WardTree* tree) {
  const std::size_t c = learned.K + h;
  try {
    return run_em_from(y, initialize(y, learned, c, tree), config, observer);
  } catch (const ComponentCollapse& e) {
    spdlog::debug("H={}: {}; restarting from a perturbed start", h, e.what());
  }
  try {
    auto m = run_em_from(y, initialize(y, learned, c, tree, derive_seed(config.seed, 0x5EED0000ULL + h)), config,
                         observer);
    m.restarted = true;
    return m;
  } catch (const ComponentCollapse& e) {
    throw FitFailure(fmt::format("H={}: {} after a perturbed restart", h, e.what()));
  }
}

}  // namespace

DamdaModel run_em(const MatrixXd& y, const EddaModel& learned, std::size_t h, const EmConfig& config,
                  EmObserver* observer, const WardTree* tree) {
  std::optional<DamdaModel> best;
  std::string ward_error;
  try {
    best = run_em_ward(y, learned, h, config, observer, tree);
  } catch (const FitFailure& e) {
    ward_error = e.what();
  }
  if (!config.learned_start) {
    if (!best) throw FitFailure(ward_error);
    return std::move(*best);
  }
  // Ward can merge a learned class with an unseen one; EM cannot undo that
  // because the learned block is fixed. A second start built from the learned
  // densities covers it; the higher likelihood wins.
  try {
    auto m = run_em_from(y, initialize_from_learned(y, learned, learned.K + h, config.learned_coverage), config,
                         observer);
    m.learned_start = true;
    if (!best || m.loglik > best->loglik) best = std::move(m);
  } catch (const FitFailure& e) {
    spdlog::debug("H={}: learned start failed: {}", h, e.what());
    if (!best) throw FitFailure(fmt::format("{}; learned start: {}", ward_error, e.what()));
    return std::move(*best);
  }
  // with several unseen classes the split between them is the fragile part
  if (h < 2) return std::move(*best);
  for (std::size_t t = 0; t < config.perturbed_starts; ++t) {
    try {
      const auto seed = derive_seed(config.seed, 0x1EA20000ULL + 64 * h + t);
      auto m = run_em_from(y, initialize_from_learned(y, learned, learned.K + h, config.learned_coverage, seed),
                           config, observer);
      m.learned_start = true;
      if (m.loglik > best->loglik) best = std::move(m);
    } catch (const FitFailure& e) {
      spdlog::debug("H={}: perturbed learned start {} failed: {}", h, t, e.what());
    }
  }
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Model selection

std::size_t bic_h_parameters(std::size_t k, std::size_t h, std::size_t p, std::size_t q) {
  const std::size_t r = p + q;
  const auto choose2 = [](std::size_t x) { return x * (x - (x > 0 ? 1 : 0)) / 2; };
  const std::size_t props = (h + k) > 0 ? h + k - 1 : 0;
  return props + 2 * h * r + h * choose2(r) + 2 * k * q + k * p * q + k * choose2(q);
}

double bic_h(double loglik, std::size_t h, std::size_t k, std::size_t r, std::size_t p, std::size_t q,
             std::size_t n) {
  if (p + q != r) throw DimensionMismatch(fmt::format("bic_h: P + Q = {} but R = {}", p + q, r));
  return 2.0 * loglik - static_cast<double>(bic_h_parameters(k, h, p, q)) * std::log(static_cast<double>(n));
}

Discovery select_h(const MatrixXd& y, const EddaModel& learned, std::span<const std::size_t> h_range,
                   const EmConfig& config, EmObserver* observer) {
  if (h_range.empty()) throw ConfigError("select_h: empty H range");
  const WardTree tree(y);
  Discovery out;
  bool have = false;
  std::string causes;
  for (std::size_t h : h_range) {
    HFit fit;
    fit.H = h;
    try {
      EmConfig cfg = config;
      cfg.seed = derive_seed(config.seed, h);
      DamdaModel m = run_em(y, learned, h, cfg, observer, &tree);
      fit.ok = true;
      fit.loglik = m.loglik;
      fit.bic = m.bic;
      fit.iterations = m.iterations;
      if (!have || m.bic > out.model.bic) {
        out.model = std::move(m);
        have = true;
      }
    } catch (const Error& e) {
      fit.message = e.what();
      causes += fmt::format(" H={}: {};", h, e.what());
      spdlog::debug("select_h: H={} failed: {}", h, e.what());
    }
    out.table.push_back(std::move(fit));
  }
  if (!have) throw FitFailure("select_h: no H could be fitted:" + causes);
  return out;
}

}  // namespace damda
