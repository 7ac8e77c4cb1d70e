#pragma once
// Simulation replicates end to end: generate a world, learn on the training
// part, run discovery (optionally with variable selection) on the test part
// and score the MAP assignment against the truth.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "damda/discovery.hpp"
#include "damda/sim.hpp"
#include "damda/varsel.hpp"

namespace damda {

enum class EvalMethod { Discover, Select };
std::string_view to_string(EvalMethod m);
EvalMethod parse_method(std::string_view s);  // throws ConfigError

struct ReplicateReport {
  std::size_t replicate = 0;
  std::string scenario;
  EvalMethod method = EvalMethod::Discover;
  double ari = 0.0;
  double error = 0.0;
  std::size_t H = 0;
  std::vector<std::string> selected;  // Select only
  std::vector<std::string> names;
  std::vector<VarRole> roles;
  std::vector<int> assignment;
};

/// MAP component per row of y under a fitted discovery model.
std::vector<int> map_assignment(const MatrixXd& y, const DamdaModel& model);

/// Labels for the EDDA fit: the observed class ids mapped to 0..K-1.
EddaModel learn_world(const GeneratedWorld& world);

/// The world uses seed config.seed + replicate.
ReplicateReport run_replicate(const ScenarioConfig& config, std::size_t replicate, EvalMethod method,
                              std::span<const std::size_t> h_range, const VarSelConfig& selection = {},
                              const EmConfig& em = {});

/// replicate,scenario,method,ari,error,H_selected
std::string metrics_csv(const std::vector<ReplicateReport>& reports);
/// replicate,variable,role,selected (Select reports only)
std::string selection_csv(const std::vector<ReplicateReport>& reports);

}  // namespace damda
