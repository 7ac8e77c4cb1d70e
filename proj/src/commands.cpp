#include "damda/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "damda/discovery.hpp"
#include "damda/edda.hpp"
#include "damda/errors.hpp"
#include "damda/io.hpp"
#include "damda/pipeline.hpp"
#include "damda/sim.hpp"
#include "damda/varsel.hpp"

namespace fs = std::filesystem;

namespace damda::cli {

namespace {

struct Options {
  std::string model, test, train, labels = "label", structures, h_range, out, config;
  std::string truth, pred, column = "label", ignore, evaluate = "none", select_config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t jobs = 1;
  std::size_t replicates = 1;
};

struct Manifest {
  std::string command;
  std::vector<std::string> inputs, outputs;
  std::vector<std::string> args;
  std::uint64_t seed = 0;
  fs::path dir = ".";
};

void setup_logging() {
  static const bool done = [] {
    auto logger = spdlog::stderr_color_mt("damda");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* lvl = std::getenv("DAMDA_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
    return true;
  }();
  (void)done;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::size_t parse_count(const std::string& s) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw ConfigError(fmt::format("'{}' is not a non-negative integer", s));
  return v;
}

/// "0-4", "1,3" or "2".
std::vector<std::size_t> parse_h_range(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : split_list(s)) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_count(part));
      continue;
    }
    const auto lo = parse_count(part.substr(0, dash));
    const auto hi = parse_count(part.substr(dash + 1));
    if (hi < lo) throw ConfigError(fmt::format("empty H range '{}'", part));
    for (auto h = lo; h <= hi; ++h) out.push_back(h);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw ConfigError("empty H range");
  return out;
}

fs::path ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError(fmt::format("cannot create '{}': {}", dir, ec.message()));
  return p;
}

// Test matrix: model variables in model order, then the remaining numeric
// columns sorted by name.
struct TestData {
  MatrixXd y;
  std::vector<std::string> names;
  std::size_t p = 0;
};

TestData load_test(const CsvTable& t, const std::vector<std::string>& trained, const std::set<std::string>& ignore,
                   bool use_extra) {
  TestData d;
  d.names = trained;
  d.p = trained.size();
  std::vector<std::string> missing;
  for (const auto& v : trained)
    if (!t.find(v)) missing.push_back(v);
  if (!missing.empty())
    throw AlignmentError(fmt::format("test data lacks model variables: {}", fmt::join(missing, ", ")));
  if (use_extra) {
    std::vector<std::string> extra;
    for (const auto& h : t.header)
      if (!ignore.count(h) && std::find(trained.begin(), trained.end(), h) == trained.end()) extra.push_back(h);
    std::sort(extra.begin(), extra.end());
    d.names.insert(d.names.end(), extra.begin(), extra.end());
  }
  d.y = t.numeric(d.names);
  return d;
}

std::string assignments_csv(const MatrixXd& y, const DamdaModel& model) {
  const auto resp = e_step(y, model);
  std::vector<std::string> header = {"row_id", "map_class", "max_posterior"};
  for (const auto& l : model.class_labels) header.push_back("post_" + l);
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < resp.t.rows(); ++i) {
    Eigen::Index arg = 0;
    const double mx = resp.t.row(i).maxCoeff(&arg);
    std::vector<std::string> r = {std::to_string(i), model.class_labels[static_cast<std::size_t>(arg)], format_double(mx)};
    for (Eigen::Index c = 0; c < resp.t.cols(); ++c) r.push_back(format_double(resp.t(i, c)));
    rows.push_back(std::move(r));
  }
  return to_csv(header, rows);
}

std::string bic_table_csv(const std::vector<HFit>& table) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& f : table) {
    std::string msg = f.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    rows.push_back({std::to_string(f.H), f.ok ? "1" : "0", f.ok ? format_double(f.loglik) : "",
                    f.ok ? format_double(f.bic) : "", std::to_string(f.iterations), msg});
  }
  return to_csv({"H", "ok", "loglik", "bic", "iterations", "message"}, rows);
}

std::string short_double(double v) {
  std::string s = fmt::format("{}", v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

// ---- commands ----

int cmd_learn(const Options& o, Manifest& m, std::ostream& out) {
  m.inputs = {o.train};
  if (o.train.empty() || o.out.empty()) throw ConfigError("learn needs --train and --out");
  const CsvTable t = read_csv(o.train);
  const auto lab_col = t.find(o.labels);
  if (!lab_col) throw ParseError(fmt::format("{}: labels column '{}' not found", o.train, o.labels), 1);
  std::vector<std::string> vars;
  for (const auto& h : t.header)
    if (h != o.labels) vars.push_back(h);
  if (vars.empty()) throw ParseError(fmt::format("{}: no variable columns", o.train), 1);
  const MatrixXd x = t.numeric(vars);
  const auto raw = t.column(*lab_col);
  std::vector<std::string> classes(raw.begin(), raw.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw DegenerateClass(fmt::format("{}: need at least two classes", o.train));
  std::vector<int> labels;
  for (const auto& r : raw)
    labels.push_back(static_cast<int>(std::lower_bound(classes.begin(), classes.end(), r) - classes.begin()));
  std::vector<CovStructure> menu;
  if (o.structures.empty()) menu.assign(kAllStructures.begin(), kAllStructures.end());
  for (const auto& s : split_list(o.structures)) menu.push_back(parse_structure(s));
  if (menu.empty()) throw ConfigError("empty structure list");
  const EddaModel model = fit_edda(x, labels, menu, vars, classes);
  const fs::path out_path(o.out);
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path().string());
  save_model(out_path, model);
  m.outputs = {o.out};
  out << fmt::format("structure={} bic={} loglik={}\n", to_string(model.structure), format_double(model.bic),
                     format_double(model.loglik));
  return kOk;
}

int cmd_discover(const Options& o, Manifest& m, std::ostream& out) {
  m.inputs = {o.model, o.test};
  if (o.model.empty() || o.test.empty()) throw ConfigError("discover needs --model and --test");
  const fs::path dir = ensure_dir(o.out);
  const EddaModel learned = load_model(o.model);
  const CsvTable t = read_csv(o.test);
  const auto ignore = split_list(o.ignore);
  const TestData d = load_test(t, learned.variable_names, {ignore.begin(), ignore.end()}, true);
  const auto h_range = parse_h_range(o.h_range.empty() ? "0-4" : o.h_range);
  EmConfig em;
  em.seed = o.seed;
  Discovery disc = select_h(d.y, learned, h_range, em);
  disc.model.variable_names = d.names;
  write_text(dir / "fitted.json", dump_json(to_json(disc.model)));
  write_text(dir / "assignments.csv", assignments_csv(d.y, disc.model));
  write_text(dir / "bic.csv", bic_table_csv(disc.table));
  m.outputs = {(dir / "fitted.json").string(), (dir / "assignments.csv").string(), (dir / "bic.csv").string()};
  out << fmt::format("H={} bic={} loglik={} Q={}\n", disc.model.H, format_double(disc.model.bic),
                     format_double(disc.model.loglik), disc.model.Q);
  return kOk;
}

int cmd_select(const Options& o, Manifest& m, std::ostream& out) {
  m.inputs = {o.model, o.test};
  if (o.model.empty() || o.test.empty()) throw ConfigError("select needs --model and --test");
  const fs::path dir = ensure_dir(o.out);
  VarSelConfig cfg;
  if (!o.config.empty()) {
    cfg = varsel_config_from_json(read_json(o.config));
    m.inputs.push_back(o.config);
  }
  if (o.seed_given) cfg.seed = o.seed;
  cfg.em.seed = cfg.seed;
  const EddaModel learned = load_model(o.model);
  const CsvTable t = read_csv(o.test);
  const auto ignore = split_list(o.ignore);
  const TestData d = load_test(t, learned.variable_names, {ignore.begin(), ignore.end()}, true);
  if (!o.h_range.empty()) cfg.h_range = parse_h_range(o.h_range);
  const VarSelResult res = greedy_search(learned, d.y, d.names, cfg);
  write_text(dir / "selection.json", dump_json(to_json(res)));
  std::vector<std::vector<std::string>> hist;
  for (const auto& s : res.history)
    hist.push_back({std::to_string(s.step), s.variable, std::string(to_string(s.action)), format_double(s.delta_bic)});
  write_text(dir / "history.csv", to_csv({"step", "var", "action", "delta_bic"}, hist));
  std::vector<std::vector<std::string>> sel;
  for (const auto& v : d.names) {
    const bool in = std::find(res.selected.begin(), res.selected.end(), v) != res.selected.end();
    const bool seeded = std::find(res.seed.begin(), res.seed.end(), v) != res.seed.end();
    const bool trained = std::find(learned.variable_names.begin(), learned.variable_names.end(), v) !=
                         learned.variable_names.end();
    sel.push_back({v, trained ? "trained" : "test-only", seeded ? "1" : "0", in ? "1" : "0"});
  }
  write_text(dir / "selection.csv", to_csv({"variable", "provenance", "seed", "selected"}, sel));
  write_text(dir / "fitted.json", dump_json(to_json(res.model)));
  MatrixXd y(d.y.rows(), static_cast<Eigen::Index>(res.model.variable_names.size()));
  for (std::size_t j = 0; j < res.model.variable_names.size(); ++j) {
    const auto it = std::find(d.names.begin(), d.names.end(), res.model.variable_names[j]);
    y.col(static_cast<Eigen::Index>(j)) = d.y.col(it - d.names.begin());
  }
  write_text(dir / "assignments.csv", assignments_csv(y, res.model));
  for (const char* f : {"selection.json", "history.csv", "selection.csv", "fitted.json", "assignments.csv"})
    m.outputs.push_back((dir / f).string());
  out << fmt::format("selected={} H={} bic={}\n", fmt::join(res.selected, ","), res.H, format_double(res.bic));
  return kOk;
}

std::vector<std::string> read_labels(const std::string& path, const std::string& column) {
  const CsvTable t = read_csv(path);
  std::optional<std::size_t> j = t.find(column);
  if (!j && t.header.size() == 1) j = 0;
  if (!j) j = t.find("map_class");  // assignments.csv as written by discover/select
  if (!j) throw ParseError(fmt::format("{}: column '{}' not found", path, column), 1);
  return t.column(*j);
}

std::vector<int> encode(const std::vector<std::string>& labels) {
  std::map<std::string, int> ids;
  std::vector<int> out;
  for (const auto& l : labels) {
    auto it = ids.emplace(l, static_cast<int>(ids.size())).first;
    out.push_back(it->second);
  }
  return out;
}

int cmd_evaluate(const Options& o, Manifest& m, std::ostream& out) {
  m.inputs = {o.truth, o.pred};
  if (o.truth.empty() || o.pred.empty()) throw ConfigError("evaluate needs --truth and --pred");
  const auto truth = encode(read_labels(o.truth, o.column));
  const auto pred = encode(read_labels(o.pred, o.column));
  if (truth.size() != pred.size())
    throw DimensionMismatch(fmt::format("truth has {} rows, prediction {}", truth.size(), pred.size()));
  out << fmt::format("ari={} error={}\n", short_double(ari(truth, pred)), short_double(matched_error(truth, pred)));
  return kOk;
}

void write_world(const fs::path& dir, const GeneratedWorld& w) {
  fs::create_directories(dir);
  auto names = w.train_names();
  names.push_back("label");
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < w.x_train.rows(); ++i) {
    std::vector<std::string> r;
    for (Eigen::Index j = 0; j < w.x_train.cols(); ++j) r.push_back(format_double(w.x_train(i, j)));
    r.push_back(fmt::format("class{}", w.labels_train[static_cast<std::size_t>(i)]));
    rows.push_back(std::move(r));
  }
  write_text(dir / "train.csv", to_csv(names, rows));
  write_text(dir / "test.csv", matrix_csv(w.y_test, w.variable_names));
  std::vector<std::vector<std::string>> truth;
  for (int l : w.labels_test) truth.push_back({fmt::format("class{}", l)});
  write_text(dir / "truth.csv", to_csv({"label"}, truth));
  Json roles;
  Json vars = Json::array();
  for (std::size_t j = 0; j < w.variable_names.size(); ++j)
    vars.push_back({{"name", w.variable_names[j]}, {"role", std::string(to_string(w.roles[j]))},
                    {"observed", static_cast<bool>(w.observed[j])}});
  roles["variables"] = std::move(vars);
  roles["observed_classes"] = w.observed_classes;
  roles["cor_parents"] = w.cor_parents;
  write_text(dir / "roles.json", dump_json(roles));
}

int cmd_simulate(const Options& o, Manifest& m, std::ostream& out) {
  const fs::path dir = ensure_dir(o.out);
  ScenarioConfig cfg;
  if (!o.config.empty()) {
    cfg = scenario_from_json(read_json(o.config));
    m.inputs.push_back(o.config);
  }
  if (o.seed_given) cfg.seed = o.seed;
  m.seed = cfg.seed;
  std::optional<EvalMethod> method;
  if (o.evaluate != "none") method = parse_method(o.evaluate);
  VarSelConfig sel;
  if (!o.select_config.empty()) {
    sel = varsel_config_from_json(read_json(o.select_config));
    m.inputs.push_back(o.select_config);
  }
  const auto h_range = parse_h_range(o.h_range.empty() ? "0-4" : o.h_range);
  const std::size_t n = std::max<std::size_t>(o.replicates, 1);

  std::vector<ReplicateReport> reports(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t r) {
    try {
      ScenarioConfig rc = cfg;
      rc.seed = cfg.seed + r;
      write_world(dir / fmt::format("rep{:03}", r), generate_world(rc));
      if (method) reports[r] = run_replicate(cfg, r, *method, h_range, sel);
    } catch (...) {
      errors[r] = std::current_exception();
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(o.jobs, 1, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t r = t; r < n; r += jobs) work(r);
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t r = 0; r < n; ++r) m.outputs.push_back((dir / fmt::format("rep{:03}", r)).string());
  if (method) {
    write_text(dir / "metrics.csv", metrics_csv(reports));
    m.outputs.push_back((dir / "metrics.csv").string());
    if (*method == EvalMethod::Select) {
      write_text(dir / "selection.csv", selection_csv(reports));
      m.outputs.push_back((dir / "selection.csv").string());
    }
    double mean_ari = 0.0;
    for (const auto& r : reports) mean_ari += r.ari / static_cast<double>(n);
    out << fmt::format("replicates={} mean_ari={}\n", n, format_double(mean_ari));
  } else {
    out << fmt::format("replicates={}\n", n);
  }
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return kParse;
  if (dynamic_cast<const DegenerateClass*>(&e)) return kDegenerate;
  if (dynamic_cast<const AlignmentError*>(&e)) return kAlignment;
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const Error*>(&e)) return kFit;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kConfig;
  return kFit;
}

void append_manifest(const Manifest& m, int status, double seconds) {
  Json j;
  j["command"] = m.command;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["seed"] = m.seed;
  j["args"] = m.args;
  j["version"] = kVersion;
  j["wall_clock_s"] = seconds;
  j["exit_status"] = status;
  std::error_code ec;
  fs::create_directories(m.dir, ec);
  std::ofstream f(m.dir / "manifest.jsonl", std::ios::app);
  if (f) f << j.dump() << "\n";
  else spdlog::warn("cannot append to {}", (m.dir / "manifest.jsonl").string());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  setup_logging();
  Options o;
  CLI::App app{"Discriminant analysis with hidden-class discovery over additional variables", "damda"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto* learn = app.add_subcommand("learn", "Fit the classifier on labelled training data");
  learn->add_option("--train", o.train, "Training CSV")->required();
  learn->add_option("--labels", o.labels, "Label column")->capture_default_str();
  learn->add_option("--structures", o.structures, "Comma list of EII,VII,EEI,VVI,EEE,VVV (default all)");
  learn->add_option("--out", o.out, "Model JSON to write")->required();

  auto* discover = app.add_subcommand("discover", "Search the test data for hidden classes");
  discover->add_option("--model", o.model, "Model JSON")->required();
  discover->add_option("--test", o.test, "Test CSV")->required();
  discover->add_option("--h-range", o.h_range, "Hidden class counts (default 0-4)");
  discover->add_option("--ignore", o.ignore, "Comma list of test columns to skip");
  discover->add_option("--out", o.out, "Output directory")->required();

  auto* select = app.add_subcommand("select", "Greedy variable selection with hidden-class discovery");
  select->add_option("--model", o.model, "Model JSON")->required();
  select->add_option("--test", o.test, "Test CSV")->required();
  select->add_option("--config", o.config, "Selection config JSON");
  select->add_option("--h-range", o.h_range, "Hidden class counts, overrides the config");
  select->add_option("--ignore", o.ignore, "Comma list of test columns to skip");
  select->add_option("--out", o.out, "Output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Compare a predicted partition with the truth");
  evaluate->add_option("--truth", o.truth, "CSV with the true labels")->required();
  evaluate->add_option("--pred", o.pred, "CSV with the predicted labels")->required();
  evaluate->add_option("--column", o.column, "Label column in both files")->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "Generate synthetic worlds and optionally evaluate them");
  simulate->add_option("--config", o.config, "Scenario config JSON");
  simulate->add_option("--out", o.out, "Output directory")->required();
  simulate->add_option("--replicates", o.replicates, "Number of replicates")->capture_default_str();
  simulate->add_option("--jobs", o.jobs, "Replicates run in parallel")->capture_default_str();
  simulate->add_option("--evaluate", o.evaluate, "none, discover or select")->capture_default_str();
  simulate->add_option("--select-config", o.select_config, "Selection config JSON for --evaluate select");
  simulate->add_option("--h-range", o.h_range, "Hidden class counts (default 0-4)");

  for (auto* sub : {learn, discover, select, evaluate, simulate})
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& s) {
          o.seed = s;
          o.seed_given = true;
        },
        "Random seed");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "damda: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) err << sub->help();
    return kUsage;
  }

  Manifest m;
  m.command = app.get_subcommands().front()->get_name();
  m.args = args;
  m.seed = o.seed;
  if (m.command == "learn") {
    const fs::path p(o.out);
    m.dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  } else if (!o.out.empty() && m.command != "evaluate") {
    m.dir = o.out;
  }

  const auto start = std::chrono::steady_clock::now();
  int status = kOk;
  try {
    if (m.command == "learn") status = cmd_learn(o, m, out);
    else if (m.command == "discover") status = cmd_discover(o, m, out);
    else if (m.command == "select") status = cmd_select(o, m, out);
    else if (m.command == "evaluate") status = cmd_evaluate(o, m, out);
    else status = cmd_simulate(o, m, out);
  } catch (const std::exception& e) {
    status = exit_code_for(e);
    err << "damda " << m.command << ": " << e.what() << "\n";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  append_manifest(m, status, secs);
  return status;
}

}  // namespace damda::cli
