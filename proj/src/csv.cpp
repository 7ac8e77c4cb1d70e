#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "damda/errors.hpp"
#include "damda/io.hpp"

namespace damda {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::optional<std::size_t> CsvTable::find(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return j;
  return std::nullopt;
}

std::vector<std::string> CsvTable::column(std::size_t j) const {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.at(j));
  return out;
}

MatrixXd CsvTable::numeric(const std::vector<std::string>& columns) const {
  std::vector<std::size_t> idx;
  std::vector<std::string> missing;
  for (const auto& c : columns) {
    if (auto j = find(c)) idx.push_back(*j);
    else missing.push_back(c);
  }
  if (!missing.empty()) throw AlignmentError(fmt::format("missing columns: {}", fmt::join(missing, ", ")));
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::string& cell = rows[i][idx[j]];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v))
        throw ParseError(fmt::format("column '{}': '{}' is not a finite number", header[idx[j]], cell), line[i]);
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return m;
}

CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::string raw;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (lineno == 1 && raw.rfind("\xEF\xBB\xBF", 0) == 0) raw.erase(0, 3);
    if (trim(raw).empty()) continue;
    auto cells = split(raw);
    if (!have_header) {
      for (const auto& c : cells)
        if (c.empty()) throw ParseError("empty column name in header", lineno);
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(fmt::format("expected {} fields, found {}", t.header.size(), cells.size()), lineno);
    t.rows.push_back(std::move(cells));
    t.line.push_back(lineno);
  }
  if (!have_header) throw ParseError("missing header row", lineno == 0 ? 1 : lineno);
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  return parse_csv(in);
}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out = fmt::format("{}\n", fmt::join(header, ","));
  for (const auto& r : rows) out += fmt::format("{}\n", fmt::join(r, ","));
  return out;
}

std::string matrix_csv(const MatrixXd& m, const std::vector<std::string>& names) {
  if (names.size() != static_cast<std::size_t>(m.cols())) throw DimensionMismatch("matrix_csv: one name per column");
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> r;
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(format_double(m(i, j)));
    rows.push_back(std::move(r));
  }
  return to_csv(names, rows);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw ConfigError(fmt::format("write to '{}' failed", path.string()));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace damda
