#include "damda/varsel.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "damda/errors.hpp"

namespace damda {

std::string_view to_string(VarAction a) {
  switch (a) {
    case VarAction::Add: return "add";
    case VarAction::Remove: return "remove";
    case VarAction::Reject: return "reject";
  }
  return "?";
}

namespace {

std::size_t column_of(const std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw AlignmentError(fmt::format("variable '{}' not found among the test columns", name));
  return static_cast<std::size_t>(it - names.begin());
}

MatrixXd gather(const MatrixXd& y, const std::vector<std::string>& names, const std::vector<std::string>& pick) {
  MatrixXd out(y.rows(), static_cast<Eigen::Index>(pick.size()));
  for (std::size_t j = 0; j < pick.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = y.col(static_cast<Eigen::Index>(column_of(names, pick[j])));
  return out;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<std::string> with(std::vector<std::string> s, const std::string& v) {
  s.push_back(v);
  return sorted(std::move(s));
}

std::vector<std::string> without(std::vector<std::string> s, const std::string& v) {
  s.erase(std::remove(s.begin(), s.end(), v), s.end());
  return s;
}

bool has_trained(const EddaModel& learned, const std::vector<std::string>& s) {
  return std::any_of(s.begin(), s.end(), [&](const std::string& v) {
    return std::find(learned.variable_names.begin(), learned.variable_names.end(), v) != learned.variable_names.end();
  });
}

// BIC_class per variable subset, memoised for the whole search.
class Searcher {
 public:
  Searcher(const EddaModel& learned, const MatrixXd& y, const std::vector<std::string>& names,
           std::span<const std::size_t> h_range, const EmConfig& em)
      : learned_(learned), y_(y), names_(names), h_range_(h_range.begin(), h_range.end()), em_(em) {}

  // nullopt with `why` set when the fit fails.
  std::optional<double> bic_class(const std::vector<std::string>& subset, std::string* why = nullptr) {
    const auto key = fmt::format("{}", fmt::join(subset, "\x1f"));
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      Entry e;
      try {
        e.bic = fit_class_model(learned_, y_, names_, subset, h_range_, em_).bic;
      } catch (const AlignmentError&) {
        throw;
      } catch (const Error& err) {
        e.why = err.what();
      }
      it = cache_.emplace(key, std::move(e)).first;
    }
    if (!it->second.bic && why) *why = it->second.why;
    return it->second.bic;
  }

  double bic_reg(const std::string& v, const std::vector<std::string>& predictors) {
    const VectorXd target = y_.col(static_cast<Eigen::Index>(column_of(names_, v)));
    return stepwise_regression_bic(target, gather(y_, names_, predictors)).bic;
  }

  CandidateResult evaluate(const std::vector<std::string>& selected, const std::string& v, VarAction action) {
    CandidateResult r;
    std::string why;
    if (action == VarAction::Add) {
      const auto big = bic_class(with(selected, v), &why);
      if (!big) {
        r.reason = why;
        return r;
      }
      const auto cur = bic_class(selected, &why);
      if (!cur) {
        r.reason = "current set: " + why;
        return r;
      }
      r.delta_bic = *big - (*cur + bic_reg(v, selected));
    } else if (action == VarAction::Remove) {
      const auto small_set = without(selected, v);
      if (!has_trained(learned_, small_set)) {
        r.reason = "the last trained variable cannot be removed";
        return r;
      }
      const auto small = bic_class(small_set, &why);
      if (!small) {
        r.reason = why;
        return r;
      }
      const auto cur = bic_class(selected, &why);
      if (!cur) {
        r.reason = "current set: " + why;
        return r;
      }
      r.delta_bic = *small + bic_reg(v, small_set) - *cur;
    } else {
      throw ConfigError("evaluate_candidate: action must be add or remove");
    }
    r.ok = true;
    r.accept = r.delta_bic > 0.0;
    return r;
  }

 private:
  struct Entry {
    std::optional<double> bic;
    std::string why;
  };
  const EddaModel& learned_;
  const MatrixXd& y_;
  const std::vector<std::string>& names_;
  std::vector<std::size_t> h_range_;
  EmConfig em_;
  std::map<std::string, Entry> cache_;
};

}  // namespace

ClassFit fit_class_model(const EddaModel& learned, const MatrixXd& y, const std::vector<std::string>& names,
                         const std::vector<std::string>& subset, std::span<const std::size_t> h_range,
                         const EmConfig& em) {
  if (names.size() != static_cast<std::size_t>(y.cols()))
    throw DimensionMismatch("fit_class_model: one name per column required");
  ClassFit out;
  std::vector<std::size_t> keep;
  for (const auto& v : sorted(subset)) {
    const auto it = std::find(learned.variable_names.begin(), learned.variable_names.end(), v);
    if (it != learned.variable_names.end()) {
      out.trained.push_back(v);
      keep.push_back(static_cast<std::size_t>(it - learned.variable_names.begin()));
    } else {
      out.test_only.push_back(v);
    }
  }
  if (out.trained.empty()) throw FitFailure("fit_class_model: the subset has no trained variable");
  const EddaModel sub = marginal_submodel(learned, keep);
  std::vector<std::string> order = out.trained;
  order.insert(order.end(), out.test_only.begin(), out.test_only.end());
  out.discovery = select_h(gather(y, names, order), sub, h_range, em);
  out.discovery.model.variable_names = order;
  out.bic = out.discovery.model.bic;
  return out;
}

CandidateResult evaluate_candidate(const EddaModel& learned, const MatrixXd& y,
                                   const std::vector<std::string>& names,
                                   const std::vector<std::string>& selected, const std::string& variable,
                                   VarAction action, std::span<const std::size_t> h_range, const EmConfig& em) {
  const bool in_selected = std::find(selected.begin(), selected.end(), variable) != selected.end();
  if (action == VarAction::Add && in_selected) throw ConfigError("evaluate_candidate: variable already selected");
  if (action == VarAction::Remove && !in_selected) throw ConfigError("evaluate_candidate: variable not selected");
  Searcher s(learned, y, names, h_range, em);
  return s.evaluate(sorted(selected), variable, action);
}

VarSelResult greedy_search(const EddaModel& learned, const MatrixXd& y, const std::vector<std::string>& names,
                           const VarSelConfig& config) {
  if (names.size() != static_cast<std::size_t>(y.cols()))
    throw DimensionMismatch("greedy_search: one name per column required");
  if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
    throw ConfigError("greedy_search: duplicate variable names");
  if (config.h_range.empty()) throw ConfigError("greedy_search: empty H range");

  std::vector<std::string> trained;
  for (const auto& v : learned.variable_names) {
    column_of(names, v);
    trained.push_back(v);
  }
  const std::size_t g = config.max_components ? config.max_components : learned.K + 2;
  if (g <= learned.K) throw ConfigError(fmt::format("greedy_search: G = {} must exceed K = {}", g, learned.K));
  const std::size_t s = std::min(config.seed_size, trained.size());
  if (s == 0) throw ConfigError("greedy_search: seed size must be positive");

  Searcher searcher(learned, y, names, config.h_range, config.em);
  VarSelResult res;
  res.seed = rank_initial_subset(gather(y, names, trained), trained, g, s, config.seed);

  // Shrink the seed until a discovery fit succeeds.
  std::string why;
  std::vector<std::string> selected;
  for (std::size_t size = res.seed.size();; --size) {
    std::vector<std::string> trial(res.seed.begin(), res.seed.begin() + static_cast<std::ptrdiff_t>(size));
    if (searcher.bic_class(sorted(trial), &why)) {
      selected = sorted(trial);
      res.seed = trial;
      break;
    }
    spdlog::debug("seed of size {} failed: {}", size, why);
    if (size <= 2) throw FitFailure("greedy_search: no seed subset could be fitted: " + why);
  }

  std::vector<std::string> candidates;
  for (const auto& v : sorted(names))
    if (std::find(selected.begin(), selected.end(), v) == selected.end()) candidates.push_back(v);

  std::size_t steps = 0;
  while (steps < config.max_steps) {
    bool changed = false;

    if (!candidates.empty()) {
      ++steps;
      std::optional<std::pair<std::string, double>> best;
      std::vector<std::string> failed;
      for (const auto& v : candidates) {
        const auto r = searcher.evaluate(selected, v, VarAction::Add);
        if (!r.ok) {
          failed.push_back(v);
          res.history.push_back({steps, v, VarAction::Reject, r.delta_bic, r.reason});
          continue;
        }
        if (!best || r.delta_bic > best->second) best.emplace(v, r.delta_bic);
      }
      for (const auto& v : failed) {
        candidates = without(candidates, v);
        res.rejected.push_back(v);
      }
      if (best && best->second > 0.0) {
        selected = with(selected, best->first);
        candidates = without(candidates, best->first);
        res.history.push_back({steps, best->first, VarAction::Add, best->second, {}});
        changed = true;
      }
    }
    if (steps >= config.max_steps) break;

    if (selected.size() > 1) {
      ++steps;
      std::optional<std::pair<std::string, double>> best;
      for (const auto& v : selected) {
        const auto r = searcher.evaluate(selected, v, VarAction::Remove);
        if (!r.ok) continue;
        if (!best || r.delta_bic > best->second) best.emplace(v, r.delta_bic);
      }
      if (best && best->second > 0.0) {
        selected = without(selected, best->first);
        candidates = with(candidates, best->first);
        res.history.push_back({steps, best->first, VarAction::Remove, best->second, {}});
        changed = true;
      }
    }
    if (!changed) break;
  }

  const auto final_fit = fit_class_model(learned, y, names, selected, config.h_range, config.em);
  res.selected = selected;
  std::sort(res.rejected.begin(), res.rejected.end());
  res.model = final_fit.discovery.model;
  res.H = res.model.H;
  res.bic = final_fit.bic;
  return res;
}

}  // namespace damda
