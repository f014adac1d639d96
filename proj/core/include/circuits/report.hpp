#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "circuits/circuit.hpp"
#include "circuits/cluster.hpp"
#include "circuits/metrics.hpp"
#include "circuits/probes.hpp"
#include "circuits/trainer.hpp"

namespace circuits {

inline constexpr int kReportVersion = 1;

/// Every report is a JSON object {"schema": "circuits.<kind>", "version": 1,
/// ...}. Non-finite numbers are written as null and read back as NaN.
nlohmann::json to_report(const PreservationReport& report);
nlohmann::json to_report(const SubcircuitReport& report);
nlohmann::json to_report(const ActivationSurface& surface);
nlohmann::json to_report(const PolysemanticScan& scan);
nlohmann::json to_report(const TrainHistory& history);
nlohmann::json to_report(const ModelGraph& model, const CircuitMask& mask);

PreservationReport preservation_report_from_json(const nlohmann::json& j);
SubcircuitReport subcircuit_report_from_json(const nlohmann::json& j);
ActivationSurface activation_surface_from_json(const nlohmann::json& j);

/// Throws FormatError on a schema mismatch and VersionError on an unknown
/// version.
void check_schema(const nlohmann::json& j, const std::string& schema);

/// sha256 of the compact serialization.
std::string report_digest(const nlohmann::json& j);

void save_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace circuits
