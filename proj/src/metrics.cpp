#include <algorithm>
#include <map>
#include <tuple>

#include "damda/errors.hpp"
#include "damda/sim.hpp"

namespace damda {

namespace {

using Table = std::map<std::pair<int, int>, double>;

Table contingency(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw DimensionMismatch("partitions differ in length");
  Table t;
  for (std::size_t i = 0; i < a.size(); ++i) t[{a[i], b[i]}] += 1.0;
  return t;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

double ari(std::span<const int> a, std::span<const int> b) {
  const Table t = contingency(a, b);
  std::map<int, double> rows, cols;
  double cells = 0.0;
  for (const auto& [key, n] : t) {
    rows[key.first] += n;
    cols[key.second] += n;
    cells += choose2(n);
  }
  double sa = 0.0, sb = 0.0;
  for (const auto& [_, n] : rows) sa += choose2(n);
  for (const auto& [_, n] : cols) sb += choose2(n);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sa * sb / total : 0.0;
  const double maximum = 0.5 * (sa + sb);
  if (maximum == expected) return 1.0;
  return (cells - expected) / (maximum - expected);
}

double matched_error(std::span<const int> truth, std::span<const int> pred) {
  const Table t = contingency(truth, pred);
  if (truth.empty()) return 0.0;
  std::vector<std::tuple<double, int, int>> cells;
  for (const auto& [key, n] : t) cells.emplace_back(n, key.first, key.second);
  std::stable_sort(cells.begin(), cells.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
    return std::get<2>(x) < std::get<2>(y);
  });
  std::map<int, bool> truth_used, pred_used;
  double correct = 0.0;
  for (const auto& [n, tl, pl] : cells) {
    if (truth_used[tl] || pred_used[pl]) continue;
    truth_used[tl] = pred_used[pl] = true;
    correct += n;
  }
  const auto n = static_cast<double>(truth.size());
  return (n - correct) / n;
}

}  // namespace damda
