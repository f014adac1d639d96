#include <filesystem>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "actions.hpp"
#include "circuits/dataset.hpp"
#include "circuits/error.hpp"
#include "circuits/model_io.hpp"
#include "circuits/probes.hpp"
#include "circuits/report.hpp"
#include "circuits/trainer.hpp"
#include "service.hpp"

using namespace circuits;
using namespace circuits::tools;
using json = nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;

std::vector<double> parse_numbers(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(std::string("bad number '") + item + "' in " + what);
    }
  }
  if (out.empty()) throw ValidationError(std::string(what) + " is empty");
  return out;
}

struct Selection {
  std::string dataset;
  std::optional<std::size_t> label;
  std::optional<std::size_t> offset;
  std::optional<std::size_t> count;

  json to_json() const {
    json j{{"dataset", dataset}};
    if (label) j["label"] = *label;
    if (offset) j["offset"] = *offset;
    if (count) j["count"] = *count;
    return j;
  }
};

void add_selection(CLI::App* cmd, Selection& s, const std::string& suffix = {}) {
  cmd->add_option("--images" + suffix, s.dataset, "Image set: a .cfdata archive, a directory of them, or a name under datasets/")
      ->required();
  cmd->add_option("--label" + suffix, s.label, "Keep only images of this class");
  cmd->add_option("--offset" + suffix, s.offset, "Skip this many images");
  cmd->add_option("--count" + suffix, s.count, "Use at most this many images");
}

struct PruneFlags {
  std::string model, target, criterion = "actgrad", bias_mode = "masked";
  std::optional<std::string> metric;
  std::uint64_t seed = 0;
  std::size_t force_iterations = 10;
  bool normalize = false;
  Selection images;

  json to_json() const {
    json j{{"model", model},       {"target", target}, {"criterion", criterion},
           {"bias_mode", bias_mode}, {"seed", seed},    {"force_iterations", force_iterations},
           {"normalize", normalize}, {"images", images.to_json()}};
    if (metric) j["metric"] = *metric;
    return j;
  }
};

void add_prune_flags(CLI::App* cmd, PruneFlags& f) {
  cmd->add_option("--model", f.model, "Model file or name under models/")->required();
  cmd->add_option("--target", f.target, "LAYER:CHANNEL[@H,W|@max] or LAYER:dir=...")->required();
  cmd->add_option("--criterion", f.criterion, "actgrad | snip | force | magnitude | random")->capture_default_str();
  cmd->add_option("--bias-mode", f.bias_mode, "masked | pruned")->capture_default_str();
  cmd->add_option("--metric", f.metric, "pearson_abs | delta_f_norm (default by target kind)");
  cmd->add_option("--seed", f.seed, "Seed for the random criterion")->capture_default_str();
  cmd->add_option("--force-iterations", f.force_iterations, "FORCE iterations")->capture_default_str();
  cmd->add_flag("--normalize", f.normalize, "Min-max normalize scores per layer before ranking");
}

const std::string& with_parent(const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  return path;
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    write_file(path, j.dump(2) + "\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extract, evaluate and diagram kernel-level circuits in small convolutional networks"};
  app.require_subcommand(1);
  std::string data_root;
  app.add_option("--data-root", data_root, "Data root (default: $CIRCUITS_DATA_ROOT or the working directory)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labelled image set");
  SyntheticDatasetSpec ds;
  std::string gen_kind = "two_category_shapes", gen_out;
  gen->add_option("--kind", gen_kind, "two_category_shapes | blobs | arcs_vs_corners")->capture_default_str();
  gen->add_option("--image-size", ds.image_size)->capture_default_str();
  gen->add_option("--samples-per-class", ds.samples_per_class)->capture_default_str();
  gen->add_option("--seed", ds.seed)->capture_default_str();
  gen->add_option("--noise", ds.noise)->capture_default_str();
  gen->add_option("--texture", ds.texture)->capture_default_str();
  gen->add_option("--out", gen_out, "Output .cfdata archive")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the toy classifier with the sparsity regularizer");
  std::string tr_data, tr_out, tr_history, tr_widths = "8,12,12,12";
  TrainConfig tc;
  RegularizerConfig rc;
  std::uint64_t init_seed = 0;
  tr->add_option("--data", tr_data, "Training set (.cfdata)")->required();
  tr->add_option("--widths", tr_widths, "Conv widths, comma separated")->capture_default_str();
  tr->add_option("--epochs", tc.epochs)->capture_default_str();
  tr->add_option("--lr", tc.learning_rate)->capture_default_str();
  tr->add_option("--momentum", tc.momentum)->capture_default_str();
  tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
  tr->add_option("--seed", tc.seed, "Shuffling seed")->capture_default_str();
  tr->add_option("--init-seed", init_seed, "Weight initialization seed")->capture_default_str();
  tr->add_option("--lambda1", rc.lambda1)->capture_default_str();
  tr->add_option("--lambda2", rc.lambda2)->capture_default_str();
  tr->add_option("--out", tr_out, "Output model (.cfm)")->required();
  tr->add_option("--history", tr_history, "Write the training history JSON here");

  // prune
  auto* pr = app.add_subcommand("prune", "Select a circuit at one sparsity");
  PruneFlags pf;
  double pr_sparsity = 0;
  std::string pr_out, pr_saliency, pr_report;
  add_prune_flags(pr, pf);
  add_selection(pr, pf.images);
  pr->add_option("--sparsity", pr_sparsity, "Fraction of relevant kernels kept, in (0, 1]")->required();
  pr->add_option("--out", pr_out, "Output mask file")->required();
  pr->add_option("--saliency-out", pr_saliency, "Write the saliency scores here");
  pr->add_option("--report", pr_report, "Write the preservation report here");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Preservation metric across sparsities");
  PruneFlags sf;
  std::string sw_sparsities, sw_out;
  add_prune_flags(sw, sf);
  add_selection(sw, sf.images);
  sw->add_option("--sparsities", sw_sparsities, "HI:LO:logN, HI:LO:linN or a comma list")->required();
  sw->add_option("--out", sw_out, "Report path (stdout when omitted)");

  // subcircuit
  auto* sc = app.add_subcommand("subcircuit", "Prune on two image sets and cross-evaluate");
  PruneFlags cf;
  Selection sel_a, sel_b;
  std::string sc_sparsities, sc_out;
  double sc_threshold = 0.15;
  add_prune_flags(sc, cf);
  add_selection(sc, sel_a, "-a");
  add_selection(sc, sel_b, "-b");
  sc->add_option("--sparsities", sc_sparsities, "HI:LO:logN, HI:LO:linN or a comma list")->required();
  sc->add_option("--threshold", sc_threshold, "Delta-f threshold for the IoU sparsity")->capture_default_str();
  sc->add_option("--out", sc_out, "Report path (stdout when omitted)");

  // cluster
  auto* cl = app.add_subcommand("cluster", "Find polysemantic candidates in one layer");
  std::string cl_model, cl_layer, cl_out;
  std::size_t cl_n = 300, cl_mcs = 10;
  Selection cl_sel;
  cl->add_option("--model", cl_model)->required();
  cl->add_option("--layer", cl_layer)->required();
  add_selection(cl, cl_sel);
  cl->add_option("--n", cl_n, "Top activations per channel")->capture_default_str();
  cl->add_option("--min-cluster-size", cl_mcs)->capture_default_str();
  cl->add_option("--out", cl_out, "Report path (stdout when omitted)");

  // probe
  auto* pb = app.add_subcommand("probe", "Activation surface over arc or corner probes");
  std::string pb_model, pb_target, pb_kind = "arc", pb_radii, pb_rotations, pb_mask, pb_out, pb_csv;
  double pb_stroke = 1.0;
  pb->add_option("--model", pb_model)->required();
  pb->add_option("--target", pb_target, "LAYER:CHANNEL@H,W")->required();
  pb->add_option("--kind", pb_kind, "arc | corner")->capture_default_str();
  pb->add_option("--radii", pb_radii, "Comma list")->required();
  pb->add_option("--rotations", pb_rotations, "Comma list, degrees")->required();
  pb->add_option("--stroke-width", pb_stroke)->capture_default_str();
  pb->add_option("--mask", pb_mask, "Evaluate this circuit instead of the full model");
  pb->add_option("--out", pb_out, "Report path (stdout when omitted)");
  pb->add_option("--csv", pb_csv, "Also write the surface as CSV");

  // diagram
  auto* dg = app.add_subcommand("diagram", "Export a circuit diagram");
  std::string dg_mask, dg_model, dg_saliency, dg_format = "dot", dg_out;
  dg->add_option("--mask", dg_mask, "Mask file")->required();
  dg->add_option("--model", dg_model, "Model (default: found under the data root by digest)");
  dg->add_option("--saliency", dg_saliency, "Saliency file for edge widths (default: mean |w|)");
  dg->add_option("--format", dg_format, "dot | json")->capture_default_str();
  dg->add_option("--out", dg_out, "Output path (stdout when omitted)");

  // serve
  auto* sv = app.add_subcommand("serve", "Serve the JSON API");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t workers = 1;
  sv->add_option("--host", host)->capture_default_str();
  sv->add_option("--port", port)->capture_default_str();
  sv->add_option("--workers", workers)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    const Workspace ws = data_root.empty() ? Workspace::from_env() : Workspace(data_root);

    if (gen->parsed()) {
      ds.kind = dataset_kind_from_string(gen_kind);
      save_dataset(generate_dataset(ds), with_parent(gen_out));
    } else if (tr->parsed()) {
      const Dataset data = load_dataset(ws.dataset_path(tr_data));
      std::vector<std::size_t> widths;
      for (double w : parse_numbers(tr_widths, "--widths")) {
        if (w < 1 || w != static_cast<double>(static_cast<std::size_t>(w))) throw ValidationError("--widths must be positive integers");
        widths.push_back(static_cast<std::size_t>(w));
      }
      ModelGraph model = ModelGraph::build(toy_classifier(data.spec.image_size, data.class_names.size(), widths));
      model.initialize(init_seed);
      TrainResult r = train(std::move(model), data, tc, rc);
      r.model.metadata().seed = init_seed;
      r.model.metadata().train_config_digest = train_config_digest(tc, rc, data.spec);
      save_model(r.model, with_parent(tr_out));
      if (!tr_history.empty()) write_json(tr_history, to_report(r.history));
      std::printf("accuracy %.4f, small kernels %zu of %zu\n", accuracy(r.model, data), count_small_kernels(r.model),
                  r.model.kernel_count());
    } else if (pr->parsed()) {
      json req = pf.to_json();
      req["sparsity"] = pr_sparsity;
      const PruneArtifacts a = run_prune(ws, normalize_prune(ws, req));
      write_file(pr_out, a.mask_text);
      if (!pr_saliency.empty()) write_file(pr_saliency, a.saliency_text);
      if (!pr_report.empty()) write_json(pr_report, a.report);
      std::printf("mask %s: kept %zu of %zu relevant kernels, effective sparsity %.4f, connected %s\n",
                  a.mask_id.substr(0, 12).c_str(), a.mask.kept.size(), a.mask.relevant_count,
                  a.mask_report["effective_sparsity"].get<double>(), a.mask_report["connected"].get<bool>() ? "yes" : "no");
    } else if (sw->parsed()) {
      json req = sf.to_json();
      req["sparsities"] = sw_sparsities;
      write_json(sw_out, run_sweep(ws, normalize_sweep(ws, req)));
    } else if (sc->parsed()) {
      json req = cf.to_json();
      req.erase("images");
      req["images_a"] = sel_a.to_json();
      req["images_b"] = sel_b.to_json();
      req["sparsities"] = sc_sparsities;
      req["threshold"] = sc_threshold;
      write_json(sc_out, run_subcircuit(ws, normalize_subcircuit(ws, req)));
    } else if (cl->parsed()) {
      const json req{{"model", cl_model}, {"layer", cl_layer}, {"images", cl_sel.to_json()}, {"n", cl_n},
                     {"min_cluster_size", cl_mcs}};
      write_json(cl_out, run_cluster(ws, normalize_cluster(ws, req)));
    } else if (pb->parsed()) {
      json req{{"model", pb_model},
               {"target", pb_target},
               {"kind", pb_kind},
               {"radii", parse_numbers(pb_radii, "--radii")},
               {"rotations", parse_numbers(pb_rotations, "--rotations")},
               {"stroke_width", pb_stroke}};
      if (!pb_mask.empty()) req["mask"] = pb_mask;
      const json report = run_surface(ws, normalize_surface(ws, req));
      write_json(pb_out, report);
      if (!pb_csv.empty()) write_file(pb_csv, surface_to_csv(activation_surface_from_json(report)));
    } else if (dg->parsed()) {
      if (dg_format != "dot" && dg_format != "json") throw ValidationError("--format must be dot or json");
      const DiagramGraph g = diagram_for_mask(ws, dg_mask, dg_model,
                                              dg_saliency.empty() ? std::nullopt : std::optional<std::filesystem::path>(dg_saliency));
      const std::string text = dg_format == "dot" ? diagram_to_dot(g) : diagram_to_json(g).dump(2) + "\n";
      if (dg_out.empty() || dg_out == "-") std::cout << text;
      else write_file(dg_out, text);
    } else if (sv->parsed()) {
      Service service(ws, workers);
      httplib::Server server;
      service.mount(server);
      std::printf("serving %s on http://%s:%d/api\n", ws.root().string().c_str(), host.c_str(), port);
      std::fflush(stdout);
      if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s (%s)\n", e.what(), e.dimension().c_str());
    return kExitValidation;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
