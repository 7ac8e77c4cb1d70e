#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "damda/cli.hpp"
#include "damda/errors.hpp"
#include "damda/io.hpp"
#include "helpers.hpp"

using namespace damda;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("damda_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(std::vector<std::string> args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  return code;
}

}  // namespace

TEST_CASE("csv parsing") {
  std::istringstream in("\xEF\xBB\xBF" "a, b ,c\r\n1,2,3\n\n4,5.5,-6e-1\n");
  const auto t = parse_csv(in);
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.line == std::vector<std::size_t>{2, 4});
  const MatrixXd m = t.numeric({"c", "a"});
  CHECK(m(1, 0) == -0.6);
  CHECK(m(1, 1) == 4.0);

  try {
    (void)t.numeric({"a", "zz", "yy"});
    FAIL("expected AlignmentError");
  } catch (const AlignmentError& e) {
    CHECK(std::string(e.what()).find("zz, yy") != std::string::npos);
  }

  std::istringstream bad("a,b\n1,2\n3\n");
  try {
    (void)parse_csv(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream nan("a\n1\nnan\n");
  const auto tn = parse_csv(nan);
  CHECK_THROWS_AS(tn.numeric({"a"}), ParseError);
  std::istringstream word("a\nx1\n");
  CHECK_THROWS_AS(parse_csv(word).numeric({"a"}), ParseError);
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_csv(empty), ParseError);
}

TEST_CASE("doubles survive a text round trip") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.uniform_index(20)) - 10.0);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("model json round trip") {
  Rng rng(2);
  MatrixXd x = testing::random_normal(rng, 30, 2);
  std::vector<int> lab(30);
  for (int i = 0; i < 30; ++i) {
    lab[i] = i % 2;
    x(i, 0) += 3.0 * lab[i];
  }
  const auto m = fit_edda(x, lab, kAllStructures, {"u", "v"}, {"A", "B"});
  const auto dir = scratch("json");
  save_model(dir / "m.json", m);
  const auto r = load_model(dir / "m.json");
  CHECK(r.structure == m.structure);
  CHECK(r.variable_names == m.variable_names);
  CHECK(r.class_labels == m.class_labels);
  CHECK(r.loglik == m.loglik);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(r.classes[k].mean() == m.classes[k].mean());
    CHECK(r.classes[k].cov() == m.classes[k].cov());
  }
  auto j = nlohmann::json::parse(read_text(dir / "m.json"));
  j["K"] = 3;
  CHECK_THROWS_AS(edda_from_json(j), ParseError);
  write_text(dir / "broken.json", "{\"K\": 2,\n  oops}");
  CHECK_THROWS_AS(read_json(dir / "broken.json"), ParseError);
}

TEST_CASE("config readers reject unknown keys") {
  CHECK_THROWS_AS(scenario_from_json(nlohmann::json::parse(R"({"n_gen": 3, "colour": 1})")), ConfigError);
  const auto s = scenario_from_json(nlohmann::json::parse(R"({"n_gen": 3, "seed": 9})"));
  CHECK(s.n_gen == 3);
  CHECK(s.seed == 9);
  const auto back = scenario_from_json(nlohmann::json::parse(to_json(s).dump()));
  CHECK(back.n_gen == 3);
  CHECK(back.mean_half_ranges == s.mean_half_ranges);
  CHECK_THROWS_AS(varsel_config_from_json(nlohmann::json::parse(R"({"seed_sz": 3})")), ConfigError);
  CHECK(varsel_config_from_json(nlohmann::json::parse(R"({"h_range": [1, 2]})")).h_range ==
        std::vector<std::size_t>{1, 2});
}

TEST_CASE("cli end to end on a simulated world") {
  const auto dir = scratch("cli");
  const auto cfg = dir / "world.json";
  write_text(cfg, R"({"n_gen": 3, "n_cor": 1, "n_noi": 1, "observed_rule": "prefix", "n_observed": 3,
                      "covariance_scale": 0.3333, "mean_half_ranges": [10, 10, 10, 10], "min_separation": 6,
                      "train_size": 120, "test_size": 240, "seed": 5})");
  std::string out;
  REQUIRE(run({"simulate", "--config", cfg.string(), "--out", (dir / "sim").string(), "--replicates", "1"}, &out) ==
          cli::kOk);
  const auto rep = dir / "sim" / "rep000";
  CHECK(fs::exists(rep / "train.csv"));
  CHECK(fs::exists(rep / "roles.json"));

  REQUIRE(run({"learn", "--train", (rep / "train.csv").string(), "--out", (dir / "model.json").string()}, &out) ==
          cli::kOk);
  CHECK(out.rfind("structure=", 0) == 0);

  REQUIRE(run({"discover", "--model", (dir / "model.json").string(), "--test", (rep / "test.csv").string(),
               "--out", (dir / "disc").string(), "--seed", "3"},
              &out) == cli::kOk);
  CHECK(out.find("H=2") != std::string::npos);
  const auto assign = read_csv(dir / "disc" / "assignments.csv");
  CHECK(assign.rows.size() == 240);
  CHECK(fs::exists(dir / "disc" / "bic.csv"));
  CHECK(fs::exists(dir / "disc" / "manifest.jsonl"));

  // MAP labels against the truth through the evaluate command
  std::vector<std::vector<std::string>> pred;
  for (const auto& r : assign.rows) pred.push_back({r[1]});
  write_text(dir / "pred.csv", to_csv({"label"}, pred));
  REQUIRE(run({"evaluate", "--truth", (rep / "truth.csv").string(), "--pred", (dir / "pred.csv").string()}, &out) ==
          cli::kOk);
  CHECK(out.rfind("ari=", 0) == 0);
  const double a = std::stod(out.substr(4));
  CHECK(a > 0.9);
  // assignments.csv directly, through its map_class column
  std::string out2;
  REQUIRE(run({"evaluate", "--truth", (rep / "truth.csv").string(), "--pred", (dir / "disc" / "assignments.csv").string()},
              &out2) == cli::kOk);
  CHECK(out2 == out);
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch("codes");
  CHECK(run({}) == cli::kUsage);
  CHECK(run({"learn"}) == cli::kUsage);
  CHECK(run({"frobnicate"}) == cli::kUsage);
  CHECK(run({"--version"}) == cli::kOk);
  CHECK(run({"learn", "--train", (dir / "missing.csv").string(), "--out", (dir / "m.json").string()}) == cli::kConfig);

  write_text(dir / "bad.csv", "a,b,label\n1,2,x\n3\n");
  CHECK(run({"learn", "--train", (dir / "bad.csv").string(), "--out", (dir / "m.json").string()}) == cli::kParse);
  write_text(dir / "nolabel.csv", "a,b\n1,2\n3,4\n");
  CHECK(run({"learn", "--train", (dir / "nolabel.csv").string(), "--out", (dir / "m.json").string()}) == cli::kParse);
  write_text(dir / "one.csv", "a,label\n1,x\n2,x\n3,x\n");
  CHECK(run({"learn", "--train", (dir / "one.csv").string(), "--out", (dir / "m.json").string()}) ==
        cli::kDegenerate);

  write_text(dir / "ok.csv", "a,b,label\n1,2,x\n2,1,x\n3,3,x\n7,8,y\n8,9,y\n9,7,y\n");
  REQUIRE(run({"learn", "--train", (dir / "ok.csv").string(), "--out", (dir / "m.json").string()}) == cli::kOk);
  write_text(dir / "test.csv", "a,c\n1,2\n");
  CHECK(run({"discover", "--model", (dir / "m.json").string(), "--test", (dir / "test.csv").string(), "--out",
             (dir / "o").string()}) == cli::kAlignment);
  CHECK(run({"simulate", "--config", (dir / "nope.json").string(), "--out", (dir / "s").string()}) == cli::kConfig);
}
