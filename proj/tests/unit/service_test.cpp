#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "circuits/circuit.hpp"
#include "circuits/connectivity.hpp"
#include "circuits/diagram.hpp"
#include "circuits/saliency.hpp"
#include "service.hpp"
#include "tool_fixture.hpp"

using namespace circuits;
using namespace circuits::tools;
using circuits::testkit::run_cli;
using circuits::testkit::slurp;
using json = nlohmann::json;

namespace {

class Api : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { root_ = new testkit::ToolRoot(); }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  void SetUp() override { service_ = std::make_unique<Service>(Workspace(root_->path()), 1); }

  ApiResponse post(const std::string& kind, const json& body) { return service_->handle("POST", "/api/" + kind, body.dump()); }
  ApiResponse get(const std::string& path, const std::multimap<std::string, std::string>& q = {}) {
    return service_->handle("GET", path, "", q);
  }
  json finished(const std::string& id) {
    EXPECT_TRUE(service_->wait_idle(std::chrono::seconds(120)));
    const ApiResponse r = get("/api/jobs/" + id);
    EXPECT_EQ(r.status, 200);
    return r.body;
  }

  static testkit::ToolRoot* root_;
  std::unique_ptr<Service> service_;
};

testkit::ToolRoot* Api::root_ = nullptr;

json prune_request(double sparsity = 0.1) {
  return {{"model", "toy"},
          {"target", "conv3:5"},
          {"criterion", "actgrad"},
          {"sparsity", sparsity},
          {"images", {{"dataset", "toy"}, {"count", 20}}}};
}

}  // namespace

TEST_F(Api, ListsModelsAndFeatures) {
  const ApiResponse models = get("/api/models");
  ASSERT_EQ(models.status, 200);
  ASSERT_EQ(models.body["models"].size(), 1u);
  EXPECT_EQ(models.body["models"][0]["name"], "toy");
  EXPECT_EQ(models.body["models"][0]["digest"], root_->model().digest());

  const ApiResponse f = get("/api/models/toy/features");
  ASSERT_EQ(f.status, 200);
  EXPECT_EQ(f.body["features"].size(), 8u + 12 + 12 + 12);
  EXPECT_EQ(f.body["features"][0]["target"], "conv1:0");
  EXPECT_EQ(get("/api/models/nosuch/features").status, 404);
  EXPECT_EQ(get("/api/datasets").body["datasets"][0]["images"], 40);
}

TEST_F(Api, PruneJobIsIdempotentAndReturnsMaskAndMetrics) {
  const ApiResponse first = post("prune", prune_request());
  ASSERT_EQ(first.status, 202) << first.body.dump();
  const std::string id = first.body["job_id"];
  EXPECT_EQ(post("prune", prune_request()).body["job_id"], id);

  const json job = finished(id);
  ASSERT_EQ(job["status"], "done") << job.dump();
  const std::size_t m = relevant_kernel_indices(root_->model(), FeatureTarget::sum_abs("conv3", 5)).size();
  EXPECT_EQ(job["result"]["mask"]["kept"].size(), static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(m))));
  EXPECT_EQ(job["result"]["report"]["entries"].size(), 1u);
  EXPECT_EQ(post("prune", prune_request()).body["status"], "done");

  const std::string report_id = job["result"]["report_id"];
  const ApiResponse rep = get("/api/reports/" + report_id);
  ASSERT_EQ(rep.status, 200);
  EXPECT_EQ(rep.body, job["result"]["report"]);
  const ApiResponse mask = get("/api/masks/" + job["result"]["mask_id"].get<std::string>());
  ASSERT_EQ(mask.status, 200);
  EXPECT_EQ(mask.body["kept"], job["result"]["mask"]["kept"]);
}

TEST_F(Api, CliAndApiArtifactsAreByteIdentical) {
  const ApiResponse r = post("prune", prune_request(0.25));
  const json job = finished(r.body["job_id"]);
  ASSERT_EQ(job["status"], "done");
  const std::string mask_id = job["result"]["mask_id"];

  const auto mask = root_->file("cli.mask"), sal = root_->file("cli.saliency"), rep = root_->file("cli.json");
  const auto cli = run_cli(*root_, "prune --model toy --target conv3:5 --criterion actgrad --sparsity 0.25 --images toy "
                                   "--count 20 --out '" + mask.string() + "' --saliency-out '" + sal.string() +
                                       "' --report '" + rep.string() + "'");
  ASSERT_EQ(cli.code, 0) << cli.err;
  EXPECT_EQ(slurp(mask), slurp(root_->file("masks/" + mask_id + ".mask")));
  EXPECT_EQ(slurp(sal), slurp(root_->file("masks/" + mask_id + ".saliency")));
  EXPECT_EQ(slurp(rep), slurp(root_->file("reports/" + job["result"]["report_id"].get<std::string>() + ".json")));

  const ApiResponse dot = get("/api/diagram/" + mask_id, {{"format", "dot"}});
  ASSERT_EQ(dot.status, 200);
  const auto cli_dot = run_cli(*root_, "diagram --mask '" + mask.string() + "' --saliency '" + sal.string() + "'");
  EXPECT_EQ(dot.text, cli_dot.out);
}

TEST_F(Api, DiagramMatchesExport) {
  const ApiResponse r = post("prune", prune_request(0.4));
  const json job = finished(r.body["job_id"]);
  const std::string mask_id = job["result"]["mask_id"];
  const ApiResponse d = get("/api/diagram/" + mask_id, {{"format", "json"}});
  ASSERT_EQ(d.status, 200) << d.body.dump();

  const CircuitMask mask = load_mask(root_->model(), root_->file("masks/" + mask_id + ".mask"));
  const SaliencyMap s = load_saliency(root_->model(), root_->file("masks/" + mask_id + ".saliency"));
  const DiagramGraph g = build_diagram(root_->model(), mask, &s);
  EXPECT_EQ(d.body["edges"].size(), g.edges.size());
  EXPECT_EQ(d.body["vertices"].size(), g.vertices.size());
  EXPECT_EQ(d.body, diagram_to_json(g));
  EXPECT_EQ(get("/api/diagram/" + mask_id, {{"format", "svg"}}).status, 400);
}

TEST_F(Api, ErrorsMapToStatusCodes) {
  EXPECT_EQ(post("prune", prune_request(1.5)).status, 400);
  json bad_target = prune_request();
  bad_target["target"] = "conv3";
  EXPECT_EQ(post("prune", bad_target).status, 400);
  json no_model = prune_request();
  no_model["model"] = "nosuch";
  EXPECT_EQ(post("prune", no_model).status, 404);
  EXPECT_EQ(service_->handle("POST", "/api/prune", "{not json").status, 400);
  EXPECT_EQ(post("frobnicate", prune_request()).status, 404);
  EXPECT_EQ(get("/api/jobs/0123").status, 404);
  EXPECT_EQ(get("/api/reports/abc").status, 404);
  EXPECT_EQ(get("/api/reports/../../etc").status, 404);
  EXPECT_EQ(get("/api/diagram/ffff").status, 404);
  EXPECT_EQ(get("/api/nothing").status, 404);
  EXPECT_EQ(service_->handle("DELETE", "/api/jobs/1", "").status, 405);
}

TEST_F(Api, ConflictingJobIdIs409) {
  json a = prune_request(0.5);
  a["job_id"] = "abc123";
  EXPECT_EQ(post("prune", a).status, 202);
  EXPECT_EQ(post("prune", a).status, 202);
  json b = prune_request(0.6);
  b["job_id"] = "abc123";
  EXPECT_EQ(post("prune", b).status, 409);
  b["job_id"] = "NotHex";
  EXPECT_EQ(post("prune", b).status, 400);
  service_->wait_idle(std::chrono::seconds(60));
}

TEST_F(Api, SweepSubcircuitAndSurfaceJobs) {
  const json sweep{{"model", "toy"}, {"target", "conv4:3"}, {"sparsities", "1:0.05:log5"}, {"images", "toy"}};
  const json sub{{"model", "toy"},
                 {"target", "conv4:3"},
                 {"sparsities", {1.0, 0.5, 0.2}},
                 {"images_a", {{"dataset", "toy"}, {"label", 0}}},
                 {"images_b", {{"dataset", "toy"}, {"label", 1}}}};
  const json surface{{"model", "toy"}, {"target", "conv2:1@4,4"}, {"kind", "corner"}, {"radii", {1, 1.5}},
                     {"rotations", {0, 45, 90}}};
  const json far{{"model", "toy"}, {"target", "conv2:1@4,4"}, {"radii", {7}}, {"rotations", {0}}};
  const std::string a = post("sweep", sweep).body["job_id"], b = post("subcircuit", sub).body["job_id"],
                    c = post("surface", surface).body["job_id"], d = post("surface", far).body["job_id"];
  const json ja = finished(a), jb = finished(b), jc = finished(c), jd = finished(d);
  ASSERT_EQ(ja["status"], "done") << ja.dump();
  EXPECT_EQ(ja["result"]["report"]["entries"].size(), 5u);
  ASSERT_EQ(jb["status"], "done") << jb.dump();
  EXPECT_EQ(jb["result"]["report"]["schema"], "circuits.subcircuit");
  ASSERT_EQ(jc["status"], "done") << jc.dump();
  EXPECT_EQ(jc["result"]["report"]["values"].size(), 2u);
  EXPECT_EQ(jd["status"], "failed");
  EXPECT_NE(jd["error"].get<std::string>().find("receptive field"), std::string::npos);

  const ApiResponse list = get("/api/reports");
  EXPECT_GE(list.body["reports"].size(), 3u);
}

TEST_F(Api, PatchesComeFromTheHarvest) {
  const ApiResponse r = get("/api/patches", {{"model", "toy"}, {"layer", "conv2"}, {"channel", "4"}, {"images", "toy"}, {"n", "5"}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  ASSERT_EQ(r.body["records"].size(), 5u);
  for (const auto& rec : r.body["records"]) {
    const auto shape = rec["shape"].get<std::vector<std::size_t>>();
    EXPECT_EQ(rec["pixels"].size(), shape[0] * shape[1] * shape[2]);
  }
  EXPECT_EQ(get("/api/patches", {{"model", "toy"}, {"layer", "conv2"}, {"channel", "x"}, {"images", "toy"}}).status, 400);
}

TEST_F(Api, ServesOverHttp) {
  httplib::Server server;
  service_->mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  const auto posted = client.Post("/api/prune", prune_request(0.7).dump(), "application/json");
  ASSERT_TRUE(posted);
  EXPECT_EQ(posted->status, 202);
  const std::string id = json::parse(posted->body)["job_id"];
  service_->wait_idle(std::chrono::seconds(60));
  const auto got = client.Get("/api/jobs/" + id);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->status, 200);
  EXPECT_EQ(json::parse(got->body)["status"], "done");
  const auto missing = client.Get("/api/jobs/feed");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  server.stop();
  t.join();
}
