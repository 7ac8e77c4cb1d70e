#pragma once
// Ward-linkage agglomerative clustering (nearest-neighbour chain).

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace damda {

struct WardMerge {
  std::size_t a;  // surviving slot (smaller index)
  std::size_t b;  // absorbed slot
  double height;  // Lance-Williams Ward distance on squared Euclidean input
};

class WardTree {
 public:
  /// Builds the full hierarchy over the rows of y. O(N^2) memory.
  explicit WardTree(const Eigen::MatrixXd& y);

  std::size_t size() const { return n_; }
  /// Merges sorted by non-decreasing height (stable in discovery order).
  const std::vector<WardMerge>& merges() const { return merges_; }

  /// Cluster label per row after the first N - clusters merges. Labels are
  /// 0..clusters-1, numbered by first appearance in row order.
  std::vector<int> cut(std::size_t clusters) const;

 private:
  std::size_t n_ = 0;
  std::vector<WardMerge> merges_;
};

}  // namespace damda
