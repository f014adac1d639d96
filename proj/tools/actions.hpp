#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuits/circuit.hpp"
#include "circuits/diagram.hpp"
#include "circuits/model.hpp"
#include "circuits/saliency.hpp"
#include "circuits/tensor.hpp"

namespace circuits::tools {

/// Data root layout:
///   models/*.cfm   datasets/*.cfdata   masks/<id>.mask (+ .saliency)   reports/<id>.json
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);
  /// CIRCUITS_DATA_ROOT, or the current directory.
  static Workspace from_env();

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path models_dir() const { return root_ / "models"; }
  std::filesystem::path datasets_dir() const { return root_ / "datasets"; }
  std::filesystem::path masks_dir() const { return root_ / "masks"; }
  std::filesystem::path reports_dir() const { return root_ / "reports"; }

  /// An existing path, or a name under models/ (".cfm" optional). Throws IoError.
  std::filesystem::path model_path(const std::string& ref) const;
  std::filesystem::path dataset_path(const std::string& ref) const;
  std::optional<std::filesystem::path> find_model_by_digest(const std::string& digest) const;
  std::vector<std::filesystem::path> models() const;
  std::vector<std::filesystem::path> datasets() const;

 private:
  std::filesystem::path root_;
};

/// Requests are JSON objects. normalize_* validates a request and fills in
/// defaults; the normalized form is what job ids are digested from and what
/// run_* consumes, so the CLI and the service share one code path.
///
/// Image selections: "name" or {"dataset": ref, "label": L, "offset": O, "count": N}.
std::vector<Tensor> select_images(const Workspace& ws, const nlohmann::json& selection);

nlohmann::json normalize_prune(const Workspace& ws, const nlohmann::json& request);
nlohmann::json normalize_sweep(const Workspace& ws, const nlohmann::json& request);
nlohmann::json normalize_subcircuit(const Workspace& ws, const nlohmann::json& request);
nlohmann::json normalize_surface(const Workspace& ws, const nlohmann::json& request);
nlohmann::json normalize_cluster(const Workspace& ws, const nlohmann::json& request);

struct PruneArtifacts {
  ModelGraph model;
  CircuitMask mask;
  SaliencyMap saliency;
  std::string mask_text;
  std::string saliency_text;
  std::string mask_id;        // sha256 of mask_text
  nlohmann::json mask_report;  // schema circuits.mask
  nlohmann::json report;       // schema circuits.preservation, one entry
};
PruneArtifacts run_prune(const Workspace& ws, const nlohmann::json& normalized);
nlohmann::json run_sweep(const Workspace& ws, const nlohmann::json& normalized);
nlohmann::json run_subcircuit(const Workspace& ws, const nlohmann::json& normalized);
nlohmann::json run_surface(const Workspace& ws, const nlohmann::json& normalized);
nlohmann::json run_cluster(const Workspace& ws, const nlohmann::json& normalized);

/// Diagram of a mask file; the model is looked up by the mask's digest when
/// model_ref is empty. Without a saliency file edges are weighted by mean |w|.
DiagramGraph diagram_for_mask(const Workspace& ws, const std::filesystem::path& mask_path,
                              const std::string& model_ref = {},
                              const std::optional<std::filesystem::path>& saliency_path = std::nullopt);

nlohmann::json model_summary(const ModelGraph& model, const std::string& name);
nlohmann::json feature_list(const ModelGraph& model);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace circuits::tools
