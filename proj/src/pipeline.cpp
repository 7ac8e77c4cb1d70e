#include "damda/pipeline.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "damda/edda.hpp"
#include "damda/errors.hpp"
#include "damda/io.hpp"
#include "damda/rng.hpp"

namespace damda {

std::string_view to_string(EvalMethod m) { return m == EvalMethod::Discover ? "discover" : "select"; }

EvalMethod parse_method(std::string_view s) {
  if (s == "discover") return EvalMethod::Discover;
  if (s == "select") return EvalMethod::Select;
  throw ConfigError(fmt::format("unknown evaluation method '{}'", s));
}

std::vector<int> map_assignment(const MatrixXd& y, const DamdaModel& model) {
  const auto resp = e_step(y, model);
  std::vector<int> out(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    Eigen::Index arg = 0;
    resp.t.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

EddaModel learn_world(const GeneratedWorld& world) {
  std::vector<int> labels;
  labels.reserve(world.labels_train.size());
  for (int l : world.labels_train) {
    const auto it = std::find(world.observed_classes.begin(), world.observed_classes.end(), l);
    labels.push_back(static_cast<int>(it - world.observed_classes.begin()));
  }
  std::vector<std::string> class_labels;
  for (int c : world.observed_classes) class_labels.push_back(fmt::format("class{}", c));
  return fit_edda(world.x_train, labels, kAllStructures, world.train_names(), class_labels);
}

ReplicateReport run_replicate(const ScenarioConfig& config, std::size_t replicate, EvalMethod method,
                              std::span<const std::size_t> h_range, const VarSelConfig& selection,
                              const EmConfig& em) {
  ScenarioConfig cfg = config;
  cfg.seed = config.seed + replicate;
  const GeneratedWorld world = generate_world(cfg);
  const EddaModel learned = learn_world(world);

  ReplicateReport rep;
  rep.replicate = replicate;
  rep.scenario = cfg.name;
  rep.method = method;
  rep.names = world.variable_names;
  rep.roles = world.roles;

  if (method == EvalMethod::Discover) {
    // Trained variables first, then the rest in column order.
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < world.observed.size(); ++j)
      if (world.observed[j]) order.push_back(j);
    for (std::size_t j = 0; j < world.observed.size(); ++j)
      if (!world.observed[j]) order.push_back(j);
    MatrixXd y(world.y_test.rows(), static_cast<Eigen::Index>(order.size()));
    for (std::size_t j = 0; j < order.size(); ++j)
      y.col(static_cast<Eigen::Index>(j)) = world.y_test.col(static_cast<Eigen::Index>(order[j]));
    EmConfig e = em;
    e.seed = derive_seed(cfg.seed, 0xD15C);
    const auto disc = select_h(y, learned, h_range, e);
    rep.H = disc.model.H;
    rep.assignment = map_assignment(y, disc.model);
  } else {
    VarSelConfig sel = selection;
    sel.h_range.assign(h_range.begin(), h_range.end());
    sel.em = em;
    sel.seed = derive_seed(cfg.seed, 0x5E1EC7);
    sel.em.seed = derive_seed(cfg.seed, 0xD15C);
    const auto res = greedy_search(learned, world.y_test, world.variable_names, sel);
    rep.H = res.H;
    rep.selected = res.selected;
    MatrixXd y(world.y_test.rows(), static_cast<Eigen::Index>(res.model.variable_names.size()));
    for (std::size_t j = 0; j < res.model.variable_names.size(); ++j) {
      const auto it = std::find(world.variable_names.begin(), world.variable_names.end(), res.model.variable_names[j]);
      y.col(static_cast<Eigen::Index>(j)) = world.y_test.col(it - world.variable_names.begin());
    }
    rep.assignment = map_assignment(y, res.model);
  }
  rep.ari = ari(world.labels_test, rep.assignment);
  rep.error = matched_error(world.labels_test, rep.assignment);
  return rep;
}

std::string metrics_csv(const std::vector<ReplicateReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports)
    rows.push_back({std::to_string(r.replicate), r.scenario, std::string(to_string(r.method)), format_double(r.ari),
                    format_double(r.error), std::to_string(r.H)});
  return to_csv({"replicate", "scenario", "method", "ari", "error", "H_selected"}, rows);
}

std::string selection_csv(const std::vector<ReplicateReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    if (r.method != EvalMethod::Select) continue;
    for (std::size_t j = 0; j < r.names.size(); ++j) {
      const bool sel = std::find(r.selected.begin(), r.selected.end(), r.names[j]) != r.selected.end();
      rows.push_back({std::to_string(r.replicate), r.names[j], std::string(to_string(r.roles[j])), sel ? "1" : "0"});
    }
  }
  return to_csv({"replicate", "variable", "role", "selected"}, rows);
}

}  // namespace damda
