#include "damda/ward.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "damda/errors.hpp"

namespace damda {

WardTree::WardTree(const Eigen::MatrixXd& y) : n_(static_cast<std::size_t>(y.rows())) {
  const std::size_t n = n_;
  if (n == 0) return;
  // Full symmetric matrix of squared Euclidean distances; updated in place.
  Eigen::MatrixXd dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const Eigen::VectorXd sq = y.rowwise().squaredNorm();
  dist = (-2.0 * y * y.transpose()).colwise() + sq;
  dist.rowwise() += sq.transpose();
  dist = dist.cwiseMax(0.0);
  dist.diagonal().setZero();

  std::vector<double> size(n, 1.0);
  std::vector<char> active(n, 1);
  std::vector<std::size_t> chain;
  chain.reserve(n);
  merges_.reserve(n - 1);
  auto d = [&](std::size_t i, std::size_t j) -> double& {
    return dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };

  for (std::size_t remaining = n; remaining > 1; --remaining) {
    if (chain.empty()) {
      std::size_t first = 0;
      while (!active[first]) ++first;
      chain.push_back(first);
    }
    std::size_t a = 0, b = 0;
    for (;;) {
      a = chain.back();
      const bool has_prev = chain.size() >= 2;
      const std::size_t prev = has_prev ? chain[chain.size() - 2] : 0;
      // The chain predecessor wins ties so the chain always terminates.
      double best = has_prev ? d(a, prev) : std::numeric_limits<double>::infinity();
      b = has_prev ? prev : n;
      for (std::size_t c = 0; c < n; ++c) {
        if (!active[c] || c == a) continue;
        const double v = d(a, c);
        if (v < best) {
          best = v;
          b = c;
        }
      }
      if (has_prev && b == prev) break;
      chain.push_back(b);
    }
    chain.pop_back();
    chain.pop_back();

    const std::size_t keep = std::min(a, b);
    const std::size_t drop = std::max(a, b);
    const double dab = d(a, b);
    merges_.push_back({keep, drop, dab});
    const double na = size[a], nb = size[b];
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == a || c == b) continue;
      const double nc = size[c];
      const double v = ((na + nc) * d(a, c) + (nb + nc) * d(b, c) - nc * dab) / (na + nb + nc);
      d(keep, c) = v;
      d(c, keep) = v;
    }
    size[keep] = na + nb;
    active[drop] = 0;
  }
  std::stable_sort(merges_.begin(), merges_.end(),
                   [](const WardMerge& x, const WardMerge& y) { return x.height < y.height; });
}

std::vector<int> WardTree::cut(std::size_t clusters) const {
  if (clusters == 0 || clusters > n_) throw ConfigError("WardTree::cut: cluster count out of range");
  std::vector<std::size_t> parent(n_);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  };
  for (std::size_t m = 0; m + clusters < n_; ++m) {
    const std::size_t ra = find(merges_[m].a);
    const std::size_t rb = find(merges_[m].b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> label(n_, -1);
  std::vector<int> root_label(n_, -1);
  int next = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    label[i] = root_label[r];
  }
  return label;
}

}  // namespace damda
