#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "circuits/connectivity.hpp"
#include "circuits/error.hpp"
#include "circuits/metrics.hpp"
#include "reference.hpp"

using namespace circuits;
using namespace circuits::testkit;

TEST(Pearson, AbsoluteCorrelation) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_DOUBLE_EQ(pearson_abs(a, a), 1.0);
  EXPECT_DOUBLE_EQ(pearson_abs(a, std::vector<double>{-2, -4, -6}), 1.0);
  EXPECT_EQ(pearson_abs(a, std::vector<double>{5, 5, 5}), 0.0);
  EXPECT_THROW(pearson_abs(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
  EXPECT_THROW(pearson_abs(a, std::vector<double>{1, 2}), ValidationError);
}

TEST(Pearson, InvariantUnderPositiveAffineMaps) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> x(50), y(50), z(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = n(rng);
    y[i] = x[i] + 0.5 * n(rng);
    z[i] = 3.5 * y[i] - 7;
  }
  EXPECT_NEAR(pearson_abs(x, y), pearson_abs(x, z), 1e-12);
}

TEST(DeltaF, NormalizedMeanAbsoluteChange) {
  const std::vector<double> o{2, 4};
  EXPECT_EQ(delta_f_norm(o, o), 0.0);
  EXPECT_DOUBLE_EQ(delta_f_norm(o, std::vector<double>{1, 3}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(delta_f_norm(std::vector<double>{10}, std::vector<double>{8.5}), 0.15);
  EXPECT_THROW(delta_f_norm(std::vector<double>{1, -1}, std::vector<double>{0, 0}), ValidationError);
  EXPECT_THROW(delta_f_norm(std::vector<double>{}, std::vector<double>{}), ValidationError);
}

TEST(DeltaF, TriangleBound) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(8), y(8), z(8);
    double mx = 0, myz = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      x[i] = u(rng);
      y[i] = u(rng);
      z[i] = u(rng);
      mx += x[i] / 8;
      myz += std::abs(y[i] - z[i]) / 8;
    }
    EXPECT_LE(delta_f_norm(x, z), delta_f_norm(x, y) + myz / mx + 1e-12);
  }
}

TEST(SparsityList, ParsesRangesAndLists) {
  const auto log13 = parse_sparsity_list("0.99:0.001:log13");
  ASSERT_EQ(log13.size(), 13u);
  EXPECT_DOUBLE_EQ(log13.front(), 0.99);
  EXPECT_DOUBLE_EQ(log13.back(), 0.001);
  for (std::size_t i = 1; i < log13.size(); ++i) {
    EXPECT_LT(log13[i], log13[i - 1]);
    EXPECT_NEAR(log13[i] / log13[i - 1], log13[1] / log13[0], 1e-12);
  }
  const auto lin = parse_sparsity_list("0.5:0.005:lin70");
  ASSERT_EQ(lin.size(), 70u);
  EXPECT_NEAR(lin[1] - lin[0], lin[69] - lin[68], 1e-12);
  EXPECT_EQ(parse_sparsity_list("1,0.5,0.1"), (std::vector<double>{1, 0.5, 0.1}));
  EXPECT_THROW(parse_sparsity_list("0.1,0.5"), ValidationError);
  EXPECT_THROW(parse_sparsity_list("1.5"), ValidationError);
  EXPECT_THROW(parse_sparsity_list("abc"), ValidationError);
}

TEST(Sweep, KeepAllEntryIsExactlyOne) {
  const ModelGraph m = random_chain_model(41);
  const FeatureTarget t = FeatureTarget::sum_abs(m.layer(m.conv_layers().back()).name, 0);
  const auto images = random_images(1, m.input_shape(), 6);
  const std::vector<double> sp{1.0, 0.5, 0.2};
  const PreservationReport r = sparsity_sweep(m, t, {}, sp, images);
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[0].metric, 1.0);
  EXPECT_EQ(r.entries[0].kept, r.relevant_count);
  EXPECT_EQ(r.entries[0].circuit_values, r.original_values);
  for (std::size_t i = 1; i < r.entries.size(); ++i) {
    EXPECT_LE(r.entries[i].effective_sparsity, r.entries[i - 1].effective_sparsity);
  }
}

TEST(Sweep, DisconnectedEntryScoresZero) {
  std::uint64_t seed = 42;
  while (random_chain_model(seed, {.max_conv_layers = 3}).conv_layers().size() < 2) ++seed;
  const ModelGraph m = random_chain_model(seed, {.max_conv_layers = 3});
  const std::size_t tl = m.conv_layers().back();
  const FeatureTarget t = FeatureTarget::sum_abs(m.layer(tl).name, 0);
  std::vector<std::size_t> kept;
  for (std::size_t k : relevant_kernel_indices(m, t))
    if (m.locate_kernel(k).layer == tl) kept.push_back(k);
  const std::vector<CircuitMask> masks{keep_all(m, t), make_mask(m, t, kept, BiasMode::pruned)};
  const std::vector<double> sp{1.0, masks[1].sparsity};
  const auto images = random_images(2, m.input_shape(), 4);
  const PreservationReport r = evaluate_sweep(m, t, {.bias_mode = BiasMode::pruned}, sp, masks, images);
  EXPECT_TRUE(r.entries[0].connected);
  EXPECT_FALSE(r.entries[1].connected);
  EXPECT_EQ(r.entries[1].metric, 0.0);
}

TEST(Sweep, RejectsUnorderedSparsities) {
  const ModelGraph m = random_chain_model(43);
  const FeatureTarget t = FeatureTarget::sum_abs(m.layer(m.conv_layers().back()).name, 0);
  const std::vector<double> sp{0.2, 0.5};
  EXPECT_THROW(sparsity_sweep(m, t, {}, sp, random_images(1, m.input_shape(), 2)), ValidationError);
}

TEST(Sweep, UnitTargetsUseDeltaF) {
  const ModelGraph m = random_chain_model(44);
  const FeatureTarget t = FeatureTarget::unit_at_max(m.layer(m.conv_layers().back()).name, 0);
  EXPECT_EQ(default_metric(t), MetricKind::delta_f_norm);
  EXPECT_EQ(default_metric(FeatureTarget::sum_abs("x", 0)), MetricKind::pearson_abs);
}

TEST(Subcircuit, IdenticalSetsGiveIdenticalCircuits) {
  const ModelGraph m = planted_line_model(1);
  const FeatureTarget t = FeatureTarget::unit_at_max("conv3", 0);
  const auto a = line_images(1, true, 6);
  const std::vector<double> sp = parse_sparsity_list("1:0.05:log8");
  const SubcircuitReport r = subcircuit_separation(m, t, a, a, sp);
  ASSERT_EQ(r.a_on_a.entries.size(), r.b_on_b.entries.size());
  for (std::size_t i = 0; i < r.a_on_a.entries.size(); ++i) {
    EXPECT_EQ(r.a_on_a.entries[i].metric, r.b_on_b.entries[i].metric);
    EXPECT_EQ(r.a_on_b.entries[i].metric, r.a_on_a.entries[i].metric);
  }
  ASSERT_FALSE(r.iou.empty());
  for (const auto& l : r.iou) EXPECT_EQ(l.iou, 1.0);
}

TEST(Subcircuit, LastEntryBelowThreshold) {
  PreservationReport r;
  for (double v : {0.0, 0.05, 0.1, 0.2, 0.1}) r.entries.push_back(SweepEntry{.metric = v});
  EXPECT_EQ(last_entry_below(r, 0.15), std::optional<std::size_t>(2));
  EXPECT_EQ(last_entry_below(r, -1.0), std::nullopt);
}
