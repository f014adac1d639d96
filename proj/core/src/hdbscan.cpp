#include "circuits/hdbscan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "circuits/error.hpp"

namespace circuits {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct MstEdge {
  std::size_t a;
  std::size_t b;
  double weight;
};

struct Merge {
  std::size_t left;
  std::size_t right;
  double distance;
  std::size_t size;
};

struct CondensedRow {
  std::size_t parent;
  std::size_t child;
  double lambda;
  std::size_t child_size;
};

std::vector<double> pairwise_distances(const Tensor& x) {
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
    }
  }
  return dist;
}

std::vector<MstEdge> prim_mst(const std::vector<double>& mr, std::size_t n) {
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, kInf);
  std::vector<std::size_t> from(n, 0);
  std::vector<MstEdge> edges;
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double w = mr[current * n + j];
      if (w < best[j]) {
        best[j] = w;
        from[j] = current;
      }
    }
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
    }
    edges.push_back(MstEdge{from[next], next, best[next]});
    in_tree[next] = 1;
    current = next;
  }
  return edges;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(2 * n - 1), size_(2 * n - 1, 1), next_(n) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  std::size_t merge(std::size_t a, std::size_t b) {
    const std::size_t node = next_++;
    parent_[a] = parent_[b] = node;
    size_[node] = size_[a] + size_[b];
    return node;
  }
  std::size_t size(std::size_t x) const { return size_[x]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
  std::size_t next_;
};

std::vector<Merge> single_linkage(std::vector<MstEdge> edges, std::size_t n) {
  std::stable_sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) { return x.weight < y.weight; });
  UnionFind uf(n);
  std::vector<Merge> out;
  for (const auto& e : edges) {
    const std::size_t ra = uf.find(e.a), rb = uf.find(e.b);
    out.push_back(Merge{ra, rb, e.weight, uf.size(ra) + uf.size(rb)});
    uf.merge(ra, rb);
  }
  return out;
}

std::vector<std::size_t> bfs_hierarchy(const std::vector<Merge>& h, std::size_t root, std::size_t n) {
  std::vector<std::size_t> result;
  std::vector<std::size_t> queue{root};
  while (!queue.empty()) {
    result.insert(result.end(), queue.begin(), queue.end());
    std::vector<std::size_t> next;
    for (std::size_t x : queue) {
      if (x >= n) {
        next.push_back(h[x - n].left);
        next.push_back(h[x - n].right);
      }
    }
    queue = std::move(next);
  }
  return result;
}

std::vector<CondensedRow> condense(const std::vector<Merge>& h, std::size_t n, std::size_t mcs) {
  const std::size_t root = 2 * n - 2;
  std::vector<std::size_t> relabel(root + 1, 0);
  std::vector<char> ignore(root + 1, 0);
  relabel[root] = n;
  std::size_t next_label = n + 1;
  std::vector<CondensedRow> rows;
  auto count = [&](std::size_t node) { return node >= n ? h[node - n].size : std::size_t{1}; };
  auto spill = [&](std::size_t from, std::size_t parent_label, double lambda) {
    for (std::size_t sub : bfs_hierarchy(h, from, n)) {
      if (sub < n) rows.push_back(CondensedRow{parent_label, sub, lambda, 1});
      ignore[sub] = 1;
    }
  };
  for (std::size_t node : bfs_hierarchy(h, root, n)) {
    if (node < n || ignore[node]) continue;
    const Merge& m = h[node - n];
    const double lambda = m.distance > 0 ? 1.0 / m.distance : kInf;
    const std::size_t lc = count(m.left), rc = count(m.right);
    if (lc >= mcs && rc >= mcs) {
      relabel[m.left] = next_label++;
      rows.push_back(CondensedRow{relabel[node], relabel[m.left], lambda, lc});
      relabel[m.right] = next_label++;
      rows.push_back(CondensedRow{relabel[node], relabel[m.right], lambda, rc});
    } else if (lc < mcs && rc < mcs) {
      spill(m.left, relabel[node], lambda);
      spill(m.right, relabel[node], lambda);
    } else if (lc < mcs) {
      relabel[m.right] = relabel[node];
      spill(m.left, relabel[node], lambda);
    } else {
      relabel[m.left] = relabel[node];
      spill(m.right, relabel[node], lambda);
    }
  }
  return rows;
}

}  // namespace

ClusterResult hdbscan(const Tensor& points, std::size_t min_cluster_size) {
  if (points.shape().rank() != 2) throw ValidationError("hdbscan expects an n x d matrix");
  const std::size_t n = points.shape()[0], d = points.shape()[1];
  if (d == 0) throw ValidationError("hdbscan needs at least one feature column");
  if (min_cluster_size < 2) throw ValidationError("min_cluster_size must be at least 2");
  if (n < min_cluster_size) {
    throw ValidationError("hdbscan needs at least min_cluster_size (" + std::to_string(min_cluster_size) +
                          ") points, got " + std::to_string(n));
  }
  for (double v : points.values()) {
    if (!std::isfinite(v)) throw ValidationError("hdbscan input contains a non-finite value");
  }
  ClusterResult result;
  result.min_cluster_size = min_cluster_size;

  const auto dist = pairwise_distances(points);
  if (std::all_of(dist.begin(), dist.end(), [](double v) { return v == 0.0; })) {
    result.labels.assign(n, 0);
    result.cluster_count = 1;
    result.stabilities = {kInf};
    return result;
  }

  std::vector<double> core(n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(dist.begin() + static_cast<std::ptrdiff_t>(i * n), dist.begin() + static_cast<std::ptrdiff_t>((i + 1) * n), row.begin());
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(min_cluster_size - 1), row.end());
    core[i] = row[min_cluster_size - 1];
  }
  std::vector<double> mr(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) mr[i * n + j] = std::max({dist[i * n + j], core[i], core[j]});
  }

  const auto hierarchy = single_linkage(prim_mst(mr, n), n);
  const auto tree = condense(hierarchy, n, min_cluster_size);

  // Stability of every condensed cluster.
  std::size_t largest = n;
  for (const auto& r : tree) largest = std::max({largest, r.parent, r.child});
  std::vector<double> birth(largest + 1, 0.0);
  for (const auto& r : tree) birth[r.child] = r.lambda;
  birth[n] = 0.0;
  std::map<std::size_t, double> stability;
  for (const auto& r : tree) {
    stability[r.parent];
    if (r.child_size > 1) stability[r.child];
  }
  for (const auto& r : tree) stability[r.parent] += (r.lambda - birth[r.parent]) * static_cast<double>(r.child_size);

  // Excess of mass, deepest clusters first, root excluded.
  std::map<std::size_t, std::vector<std::size_t>> children;
  std::map<std::size_t, std::size_t> parent_of;
  for (const auto& r : tree) {
    parent_of[r.child] = r.parent;
    if (r.child_size > 1) children[r.parent].push_back(r.child);
  }
  std::map<std::size_t, bool> selected;
  for (auto it = stability.rbegin(); it != stability.rend(); ++it) {
    if (it->first != n) selected[it->first] = true;
  }
  for (auto it = stability.rbegin(); it != stability.rend(); ++it) {
    const std::size_t node = it->first;
    if (node == n) continue;
    double subtree = 0;
    for (std::size_t c : children[node]) subtree += stability[c];
    if (subtree > stability[node]) {
      selected[node] = false;
      stability[node] = subtree;
    } else {
      std::vector<std::size_t> stack(children[node]);
      while (!stack.empty()) {
        const std::size_t c = stack.back();
        stack.pop_back();
        selected[c] = false;
        for (std::size_t g : children[c]) stack.push_back(g);
      }
    }
  }

  std::map<std::size_t, int> label_of;
  for (const auto& [node, is] : selected) {
    if (is) {
      label_of[node] = static_cast<int>(label_of.size());
    }
  }
  result.cluster_count = label_of.size();
  result.stabilities.assign(label_of.size(), 0.0);
  for (const auto& [node, label] : label_of) {
    double s = 0;
    for (const auto& r : tree) {
      if (r.parent == node) s += (r.lambda - birth[node]) * static_cast<double>(r.child_size);
    }
    result.stabilities[static_cast<std::size_t>(label)] = s;
  }
  result.labels.assign(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t node = parent_of.at(p);
    while (true) {
      auto it = label_of.find(node);
      if (it != label_of.end()) {
        result.labels[p] = it->second;
        break;
      }
      if (node == n) break;
      node = parent_of.at(node);
    }
  }
  return result;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ValidationError("adjusted_rand_index needs equally long labelings");
  const std::size_t n = a.size();
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : joint) index += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double total = c2(static_cast<double>(n));
  const double expected = total > 0 ? sa * sb / total : 0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace circuits
