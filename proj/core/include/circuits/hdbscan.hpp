#pragma once

#include <cstddef>
#include <vector>

#include "circuits/tensor.hpp"

namespace circuits {

struct ClusterResult {
  std::vector<int> labels;  // cluster id >= 0, or -1 for noise
  std::size_t cluster_count = 0;
  std::size_t min_cluster_size = 0;
  std::vector<double> stabilities;  // per cluster label
  bool operator==(const ClusterResult&) const = default;
};

/// HDBSCAN over the rows of an n x d matrix with the Euclidean metric.
///
/// Core distance is the distance to the min_cluster_size-th nearest point
/// counting the point itself; the minimum spanning tree of the
/// mutual-reachability graph is built with Prim's algorithm (ties to the
/// lower index), condensed with min_cluster_size, and flat clusters are
/// chosen by excess of mass with the root excluded. Labels number the
/// selected clusters in condensed-tree order. If all rows coincide every
/// row forms one cluster.
///
/// Throws ValidationError when n < min_cluster_size, d == 0 or
/// min_cluster_size < 2.
ClusterResult hdbscan(const Tensor& points, std::size_t min_cluster_size = 10);

/// Adjusted Rand index of two labelings; noise (-1) counts as its own label.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace circuits
