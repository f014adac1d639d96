#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "circuits/error.hpp"
#include "circuits/hdbscan.hpp"

using namespace circuits;

namespace {

nlohmann::json reference() {
  std::ifstream in(std::string(CIRCUITS_TEST_DATA_DIR) + "/hdbscan_reference.json");
  return nlohmann::json::parse(in);
}

Tensor to_points(const nlohmann::json& rows) {
  const std::size_t n = rows.size(), d = rows[0].size();
  Tensor t(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) t.at(i, j) = rows[i][j].get<double>();
  return t;
}

// Relabel clusters by order of first appearance; noise stays -1.
std::vector<int> canonical(const std::vector<int>& labels) {
  std::map<int, int> next;
  std::vector<int> out;
  for (int l : labels) {
    if (l < 0) {
      out.push_back(-1);
      continue;
    }
    auto it = next.emplace(l, static_cast<int>(next.size())).first;
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

TEST(Hdbscan, TwoFarBlobs) {
  const nlohmann::json ref = reference();
  const auto& ex = ref["examples"][0];
  ASSERT_EQ(ex["name"], "two_far_blobs");
  const ClusterResult r = hdbscan(to_points(ex["points"]), 10);
  EXPECT_EQ(r.cluster_count, 2u);
  EXPECT_EQ(std::count(r.labels.begin(), r.labels.end(), -1), 0);
  EXPECT_EQ(adjusted_rand_index(r.labels, ex["labels"].get<std::vector<int>>()), 1.0);
}

TEST(Hdbscan, UniformSquareHasAtMostOneCluster) {
  const nlohmann::json ref = reference();
  const auto& ex = ref["examples"][1];
  ASSERT_EQ(ex["name"], "uniform_square");
  const ClusterResult r = hdbscan(to_points(ex["points"]), 30);
  EXPECT_LE(r.cluster_count, 1u);
  EXPECT_EQ(adjusted_rand_index(r.labels, ex["labels"].get<std::vector<int>>()), 1.0);
}

TEST(Hdbscan, IdenticalPointsFormOneCluster) {
  const ClusterResult r = hdbscan(Tensor(Shape{25, 3}, 1.5), 10);
  EXPECT_EQ(r.cluster_count, 1u);
  for (int l : r.labels) EXPECT_EQ(l, 0);
}

TEST(Hdbscan, AgreesWithReferenceBattery) {
  const nlohmann::json ref = reference();
  for (const auto& ds : ref["datasets"]) {
    const ClusterResult r = hdbscan(to_points(ds["points"]), 10);
    EXPECT_GT(adjusted_rand_index(r.labels, ds["labels"].get<std::vector<int>>()), 0.9) << ds["name"];
    std::map<int, std::size_t> sizes;
    for (int l : r.labels)
      if (l >= 0) ++sizes[l];
    EXPECT_EQ(sizes.size(), r.cluster_count);
    for (const auto& [label, size] : sizes) EXPECT_GE(size, 10u) << ds["name"];
  }
}

TEST(Hdbscan, PermutationEquivariant) {
  const nlohmann::json ref = reference();
  const Tensor pts = to_points(ref["datasets"][0]["points"]);
  const std::size_t n = pts.shape()[0], d = pts.shape()[1];
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  Tensor shuffled(pts.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) shuffled.at(i, j) = pts.at(perm[i], j);
  const ClusterResult a = hdbscan(pts, 10), b = hdbscan(shuffled, 10);
  std::vector<int> a_perm(n);
  for (std::size_t i = 0; i < n; ++i) a_perm[i] = a.labels[perm[i]];
  EXPECT_EQ(canonical(a_perm), canonical(b.labels));
}

TEST(Hdbscan, Preconditions) {
  EXPECT_THROW(hdbscan(Tensor(Shape{5, 2}), 10), ValidationError);
  EXPECT_THROW(hdbscan(Tensor(Shape{20, 2}), 1), ValidationError);
}

TEST(AdjustedRand, KnownValues) {
  EXPECT_EQ(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}), -0.5, 1e-12);
}
