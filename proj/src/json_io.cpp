#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "damda/errors.hpp"
#include "damda/io.hpp"

namespace damda {

namespace {

void dump(const Json& j, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
  const std::string close(static_cast<std::size_t>(indent), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        out += pad + Json(k).dump() + ": ";
        dump(v, out, indent + 2);
      }
      out += "\n" + close + "}";
      return;
    }
    case Json::value_t::array: {
      // Arrays of scalars stay on one line.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
      out += "[";
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += flat ? ", " : ",";
        first = false;
        if (!flat) out += "\n" + pad;
        dump(e, out, indent + 2);
      }
      if (!flat && !j.empty()) out += "\n" + close;
      out += "]";
      return;
    }
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? fmt::format("{:.17g}", v) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

Json vec(const VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json mat(const MatrixXd& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    a.push_back(std::move(r));
  }
  return a;
}

double num(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw ParseError(fmt::format("expected a number, found {}", j.dump()));
  return j.get<double>();
}

VectorXd read_vec(const nlohmann::json& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n) throw ParseError(fmt::format("model: '{}' must be an array of {}", what, n));
  VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = num(j[i]);
  return v;
}

MatrixXd read_mat(const nlohmann::json& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n) throw ParseError(fmt::format("model: '{}' must be {} x {}", what, n, n));
  MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) m.row(static_cast<Eigen::Index>(i)) = read_vec(j[i], n, what).transpose();
  return m;
}

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(fmt::format("model: missing field '{}'", key));
  return j.at(key);
}

}  // namespace

std::string dump_json(const Json& j) {
  std::string out;
  dump(j, out, 0);
  out += "\n";
  return out;
}

Json to_json(const EddaModel& m) {
  Json j;
  j["structure"] = std::string(to_string(m.structure));
  j["tau"] = vec(m.tau);
  Json means = Json::array(), covs = Json::array();
  for (const auto& c : m.classes) {
    means.push_back(vec(c.mean()));
    covs.push_back(mat(c.cov()));
  }
  j["means"] = std::move(means);
  j["covs"] = std::move(covs);
  j["variable_names"] = m.variable_names;
  j["loglik"] = m.loglik;
  j["bic"] = m.bic;
  j["K"] = m.K;
  j["P"] = m.P;
  j["class_labels"] = m.class_labels;
  return j;
}

EddaModel edda_from_json(const nlohmann::json& j) {
  EddaModel m;
  try {
    m.structure = parse_structure(field(j, "structure").get<std::string>());
    m.K = field(j, "K").get<std::size_t>();
    m.P = field(j, "P").get<std::size_t>();
    m.variable_names = field(j, "variable_names").get<std::vector<std::string>>();
    if (j.contains("class_labels")) m.class_labels = j.at("class_labels").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("model: {}", e.what()));
  } catch (const ConfigError& e) {
    throw ParseError(fmt::format("model: {}", e.what()));
  }
  if (m.K == 0 || m.P == 0) throw ParseError("model: K and P must be positive");
  if (m.variable_names.size() != m.P) throw ParseError("model: variable_names must have P entries");
  if (m.class_labels.empty())
    for (std::size_t k = 0; k < m.K; ++k) m.class_labels.push_back(std::to_string(k));
  if (m.class_labels.size() != m.K) throw ParseError("model: class_labels must have K entries");
  m.tau = read_vec(field(j, "tau"), m.K, "tau");
  const auto& means = field(j, "means");
  const auto& covs = field(j, "covs");
  if (!means.is_array() || means.size() != m.K || !covs.is_array() || covs.size() != m.K)
    throw ParseError("model: means and covs need K entries");
  for (std::size_t k = 0; k < m.K; ++k) {
    try {
      m.classes.emplace_back(read_vec(means[k], m.P, "means"), read_mat(covs[k], m.P, "covs"));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(fmt::format("model: class {}: {}", k, e.what()));
    }
  }
  m.loglik = num(field(j, "loglik"));
  m.bic = num(field(j, "bic"));
  return m;
}

void save_model(const std::filesystem::path& path, const EddaModel& m) { write_text(path, dump_json(to_json(m))); }

EddaModel load_model(const std::filesystem::path& path) { return edda_from_json(read_json(path)); }

nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i)
      if (text[i] == '\n') ++line;
    throw ParseError(fmt::format("{}: invalid JSON", path.string()), line);
  }
}

Json to_json(const DamdaModel& m) {
  Json j;
  j["tau"] = vec(m.tau);
  Json known = Json::array();
  for (std::size_t k = 0; k < m.known.size(); ++k) {
    const auto& c = m.known[k];
    Json e;
    e["label"] = k < m.class_labels.size() ? m.class_labels[k] : std::to_string(k);
    e["mu_fixed"] = vec(c.fixed.mean());
    e["mu_aug"] = vec(c.aug_mean);
    e["cov_blocks"] = {{"fixed", mat(c.aug_cov.fixed_block)}, {"cross", mat(c.aug_cov.cross_block)},
                       {"new", mat(c.aug_cov.new_block)}};
    known.push_back(std::move(e));
  }
  j["known"] = std::move(known);
  Json hidden = Json::array();
  for (std::size_t h = 0; h < m.hidden.size(); ++h) {
    Json e;
    const std::size_t idx = m.K + h;
    e["label"] = idx < m.class_labels.size() ? m.class_labels[idx] : fmt::format("hidden{}", h + 1);
    e["mu"] = vec(m.hidden[h].mean());
    e["cov"] = mat(m.hidden[h].cov());
    hidden.push_back(std::move(e));
  }
  j["hidden"] = std::move(hidden);
  j["H"] = m.H;
  j["loglik_trace"] = m.loglik_trace;
  j["bic"] = m.bic;
  j["K"] = m.K;
  j["P"] = m.P;
  j["Q"] = m.Q;
  j["loglik"] = m.loglik;
  j["iterations"] = m.iterations;
  j["converged"] = m.converged;
  j["restarted"] = m.restarted;
  j["regularizations"] = m.regularizations;
  j["variable_names"] = m.variable_names;
  j["class_labels"] = m.class_labels;
  return j;
}

Json to_json(const VarSelResult& r) {
  Json j;
  j["seed"] = r.seed;
  Json hist = Json::array();
  for (const auto& s : r.history) {
    Json e;
    e["step"] = s.step;
    e["var"] = s.variable;
    e["action"] = std::string(to_string(s.action));
    e["delta_bic"] = s.delta_bic;
    if (!s.reason.empty()) e["reason"] = s.reason;
    hist.push_back(std::move(e));
  }
  j["history"] = std::move(hist);
  j["selected"] = r.selected;
  j["H"] = r.H;
  j["bic"] = r.bic;
  j["rejected"] = r.rejected;
  return j;
}

namespace {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config: field '{}': {}", key, e.what()));
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} config must be a JSON object", what));
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw ConfigError(fmt::format("{} config: unknown field '{}'", what, k));
  }
}

}  // namespace

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"name", "n_gen", "n_cor", "n_noi", "proportions", "mean_half_ranges", "wishart_df_offset",
                  "wishart_offdiag", "covariance_scale", "noi_correlated", "noi_offdiag", "train_size", "test_size",
                  "hidden_classes_removed", "observed_rule", "n_observed", "min_separation", "seed"},
                 "scenario");
  ScenarioConfig c;
  take(j, "name", c.name);
  take(j, "n_gen", c.n_gen);
  take(j, "n_cor", c.n_cor);
  take(j, "n_noi", c.n_noi);
  take(j, "proportions", c.proportions);
  take(j, "mean_half_ranges", c.mean_half_ranges);
  take(j, "wishart_df_offset", c.wishart_df_offset);
  take(j, "wishart_offdiag", c.wishart_offdiag);
  take(j, "covariance_scale", c.covariance_scale);
  take(j, "noi_correlated", c.noi_correlated);
  take(j, "noi_offdiag", c.noi_offdiag);
  take(j, "train_size", c.train_size);
  take(j, "test_size", c.test_size);
  take(j, "hidden_classes_removed", c.hidden_classes_removed);
  take(j, "observed_rule", c.observed_rule);
  take(j, "n_observed", c.n_observed);
  take(j, "min_separation", c.min_separation);
  take(j, "seed", c.seed);
  c.validate();
  return c;
}

Json to_json(const ScenarioConfig& c) {
  Json j;
  j["name"] = c.name;
  j["n_gen"] = c.n_gen;
  j["n_cor"] = c.n_cor;
  j["n_noi"] = c.n_noi;
  j["proportions"] = c.proportions;
  j["mean_half_ranges"] = c.mean_half_ranges;
  j["wishart_df_offset"] = c.wishart_df_offset;
  j["wishart_offdiag"] = c.wishart_offdiag;
  j["covariance_scale"] = c.covariance_scale;
  j["noi_correlated"] = c.noi_correlated;
  j["noi_offdiag"] = c.noi_offdiag;
  j["train_size"] = c.train_size;
  j["test_size"] = c.test_size;
  j["hidden_classes_removed"] = c.hidden_classes_removed;
  j["observed_rule"] = c.observed_rule;
  j["n_observed"] = c.n_observed;
  j["min_separation"] = c.min_separation;
  j["seed"] = c.seed;
  return j;
}

VarSelConfig varsel_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"seed_size", "max_components", "h_range", "max_steps", "max_iter", "rel_tol", "seed"}, "selection");
  VarSelConfig c;
  take(j, "seed_size", c.seed_size);
  take(j, "max_components", c.max_components);
  take(j, "h_range", c.h_range);
  take(j, "max_steps", c.max_steps);
  take(j, "max_iter", c.em.max_iter);
  take(j, "rel_tol", c.em.rel_tol);
  take(j, "seed", c.seed);
  if (c.h_range.empty()) throw ConfigError("selection config: empty h_range");
  return c;
}

}  // namespace damda
