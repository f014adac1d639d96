#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "circuits/error.hpp"
#include "circuits/report.hpp"
#include "reference.hpp"

using namespace circuits;
using namespace circuits::testkit;

namespace {

PreservationReport sample_sweep() {
  const ModelGraph m = random_chain_model(77);
  const FeatureTarget t = FeatureTarget::sum_abs(m.layer(m.conv_layers().back()).name, 0);
  const std::vector<double> sp{1.0, 0.5, 0.1};
  return sparsity_sweep(m, t, {.criterion = Criterion::snip}, sp, random_images(4, m.input_shape(), 5));
}

}  // namespace

TEST(Report, PreservationRoundTripIsLossless) {
  const PreservationReport r = sample_sweep();
  const nlohmann::json j = to_report(r);
  EXPECT_EQ(j["schema"], "circuits.preservation");
  EXPECT_EQ(j["version"], kReportVersion);
  const auto path = std::filesystem::temp_directory_path() / "circuits_report_test.json";
  save_json(j, path);
  const PreservationReport back = preservation_report_from_json(load_json(path));
  std::filesystem::remove(path);
  EXPECT_EQ(back.target, r.target);
  EXPECT_EQ(back.original_values, r.original_values);
  ASSERT_EQ(back.entries.size(), r.entries.size());
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].metric, r.entries[i].metric);
    EXPECT_EQ(back.entries[i].circuit_values, r.entries[i].circuit_values);
    EXPECT_EQ(back.entries[i].connected, r.entries[i].connected);
  }
  EXPECT_EQ(report_digest(to_report(back)), report_digest(j));
}

TEST(Report, NonFiniteValuesBecomeNull) {
  PreservationReport r = sample_sweep();
  r.entries[1].metric = std::numeric_limits<double>::quiet_NaN();
  const nlohmann::json j = to_report(r);
  EXPECT_TRUE(j["entries"][1]["metric"].is_null());
  EXPECT_TRUE(std::isnan(preservation_report_from_json(j).entries[1].metric));
}

TEST(Report, SchemaAndVersionAreChecked) {
  nlohmann::json j = to_report(sample_sweep());
  EXPECT_THROW(subcircuit_report_from_json(j), FormatError);
  j["version"] = 99;
  EXPECT_THROW(preservation_report_from_json(j), VersionError);
  nlohmann::json broken = to_report(sample_sweep());
  broken.erase("entries");
  EXPECT_THROW(preservation_report_from_json(broken), FormatError);
  EXPECT_THROW(load_json("/nonexistent/report.json"), IoError);
}

TEST(Report, SubcircuitAndSurfaceRoundTrip) {
  const ModelGraph m = planted_line_model(2);
  const FeatureTarget t = FeatureTarget::unit_at_max("conv3", 0);
  const auto a = line_images(3, true, 4), b = line_images(4, false, 4);
  const std::vector<double> sp{1.0, 0.5, 0.2};
  const SubcircuitReport r = subcircuit_separation(m, t, a, b, sp);
  const nlohmann::json j = to_report(r);
  EXPECT_EQ(to_report(subcircuit_report_from_json(j)), j);

  ActivationSurface s;
  s.target = FeatureTarget::unit("conv2", 1, {3, 4});
  s.radii = {1, 2};
  s.rotations = {0, 45};
  s.values = {{0.1, 0.2}, {0.3, std::numeric_limits<double>::infinity()}};
  s.provenance = "circuit";
  s.kept = 7;
  const ActivationSurface back = activation_surface_from_json(to_report(s));
  EXPECT_EQ(back.target, s.target);
  EXPECT_EQ(back.values[0], s.values[0]);
  EXPECT_TRUE(std::isnan(back.values[1][1]));
  EXPECT_EQ(back.kept, 7u);
}

TEST(Report, MaskReportDescribesConnectivity) {
  const ModelGraph m = tiny_net(1);
  const FeatureTarget t = FeatureTarget::sum_abs("conv2", 0);
  const nlohmann::json j = to_report(m, keep_all(m, t));
  EXPECT_EQ(j["schema"], "circuits.mask");
  EXPECT_EQ(j["connected"], true);
  EXPECT_EQ(j["kept"].size(), 16u);
  EXPECT_EQ(j["effective_sparsity"], 1.0);
}
