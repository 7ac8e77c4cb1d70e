#pragma once
// CSV and JSON persistence. CSV: comma separated, header row required, '.'
// decimal separator, no quoting. Doubles are written with 17 significant
// digits so they read back exactly.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damda/discovery.hpp"
#include "damda/edda.hpp"
#include "damda/sim.hpp"
#include "damda/varsel.hpp"

namespace damda {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;  // 1-based source line of each row

  std::optional<std::size_t> find(const std::string& name) const;
  /// Numeric block of the named columns (in that order). Throws ParseError
  /// carrying the line of the first bad cell; AlignmentError lists every
  /// missing column.
  MatrixXd numeric(const std::vector<std::string>& columns) const;
  std::vector<std::string> column(std::size_t j) const;
};

CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

std::string format_double(double v);  // "{:.17g}", "nan"/"inf" spelled out
std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Matrix with named columns as CSV text.
std::string matrix_csv(const MatrixXd& m, const std::vector<std::string>& names);

// ---- JSON ----

using Json = nlohmann::ordered_json;

/// Indented JSON with doubles as "{:.17g}" and non-finite values as null.
std::string dump_json(const Json& j);

Json to_json(const EddaModel& m);
EddaModel edda_from_json(const nlohmann::json& j);  // throws ParseError
void save_model(const std::filesystem::path& path, const EddaModel& m);
EddaModel load_model(const std::filesystem::path& path);

Json to_json(const DamdaModel& m);
Json to_json(const VarSelResult& r);

ScenarioConfig scenario_from_json(const nlohmann::json& j);  // throws ConfigError
Json to_json(const ScenarioConfig& c);
VarSelConfig varsel_config_from_json(const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);  // throws ParseError

}  // namespace damda
