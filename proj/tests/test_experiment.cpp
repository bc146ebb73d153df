#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "tedge/experiment.hpp"

using namespace tedge;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tedge_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig toy() { return load_config(fs::path(TEDGE_SOURCE_DIR) / "configs" / "toy.json"); }

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("table presets") {
  const auto m7 = preset_model(7);
  CHECK(m7.n_layers == 1);
  CHECK(m7.model_dim == 128);
  CHECK(m7.mlp_layers == 3);
  CHECK(m7.mlp_size == 256);
  CHECK(m7.n_heads == 8);
  const auto m1 = preset_model(1);
  CHECK(m1.model_dim == 32);
  CHECK(m1.mlp_layers == 1);
  CHECK(m1.n_heads == 8);
  CHECK(error_of([] { preset_model(6); }).find("divisible") != std::string::npos);
  CHECK_THROWS(preset_model(8));
  CHECK_THROWS(preset_model(10));
  for (int id : {1, 2, 3, 4, 5, 7, 9}) CHECK_NOTHROW(preset_model(id).validate());
}

TEST_CASE("config errors carry the key path") {
  CHECK(error_of([] { parse_config(R"({"pipeline": {"windw": 3}})"); }).find("pipeline.windw") != std::string::npos);
  CHECK(error_of([] { parse_config(R"({"workload": {"drift": {"kind": 4}}})"); }).find("workload.drift.kind") !=
        std::string::npos);
  CHECK(error_of([] { parse_config(R"({"model": {"preset": 6}})"); }).find("model.preset") != std::string::npos);
  CHECK_THROWS_AS(parse_config("{"), std::invalid_argument);
}

TEST_CASE("validation rejects K > N_c, W > T and l >= N_W") {
  auto c = toy();
  CHECK_NOTHROW(validate_config(c));
  c.pipeline.k = 21;
  CHECK(error_of([&] { validate_config(c); }).find("pipeline.k") != std::string::npos);
  c = toy();
  c.pipeline.window = 4000;
  CHECK_THROWS(validate_config(c));
  c = toy();
  c.pipeline.history_len = 20;
  CHECK_THROWS(validate_config(c));
}

TEST_CASE("overrides and config round trip") {
  std::string text = slurp(fs::path(TEDGE_SOURCE_DIR) / "configs" / "toy.json");
  apply_override(text, "pipeline.k=4");
  apply_override(text, "simulation.scope=all");
  const auto c = parse_config(text);
  CHECK(c.pipeline.k == 4);
  CHECK(c.simulation.scope == "all");
  CHECK(config_to_json(parse_config(config_to_json(c))) == config_to_json(c));
  CHECK_THROWS(apply_override(text, "no_equals_sign"));
}

TEST_CASE("stages refuse to run without their inputs") {
  const auto dir = fresh_dir("missing");
  const auto c = toy();
  CHECK(error_of([&] { run_stage(Stage::simulate, c, dir); }).find("run prepare first") != std::string::npos);
  CHECK(error_of([&] { run_stage(Stage::train, c, dir); }).find("run prepare first") != std::string::npos);
  CHECK(error_of([&] { run_stage(Stage::report, c, dir); }).find("run simulate first") != std::string::npos);
  CHECK(error_of([&] { run_stage(Stage::prepare, c, dir); }).find("run gen-trace first") != std::string::npos);
  CHECK_THROWS(parse_stage("deploy"));
}

TEST_CASE("toy pipeline runs end to end and reruns byte for byte") {
  const auto c = toy();
  const Stage stages[] = {Stage::gen_topology, Stage::gen_trace, Stage::prepare, Stage::train,
                          Stage::eval,         Stage::simulate,  Stage::report};
  const fs::path dirs[] = {fresh_dir("toy_a"), fresh_dir("toy_b")};
  for (const auto& dir : dirs)
    for (Stage s : stages) run_stage(s, c, dir);
  for (const char* name : {artifact::topology, artifact::trace, artifact::dataset, artifact::model, artifact::metrics,
                           artifact::results, artifact::report, artifact::intervals}) {
    INFO(name);
    REQUIRE(fs::exists(dirs[0] / name));
    CHECK(slurp(dirs[0] / name) == slurp(dirs[1] / name));
  }
  for (Stage s : stages) CHECK(fs::exists(dirs[0] / (to_string(s) + ".manifest.json")));
  const std::string report = slurp(dirs[0] / artifact::report);
  CHECK(report.rfind("policy,K,events,hits,hit_ratio,fraction_of_optimal\n", 0) == 0);
  CHECK(report.find("\ntedge,2,") != std::string::npos);
  CHECK(report.find("\nserve_all,") != std::string::npos);
  CHECK(slurp(dirs[0] / artifact::metrics).find("\"evaluation\"") != std::string::npos);
}

TEST_CASE("a different seed changes the trace") {
  auto c = toy();
  const auto a = fresh_dir("seed_a"), b = fresh_dir("seed_b");
  run_stage(Stage::gen_trace, c, a);
  c.seed += 1;
  run_stage(Stage::gen_trace, c, b);
  CHECK(slurp(a / artifact::trace) != slurp(b / artifact::trace));
}

TEST_CASE("file workloads are ingested") {
  const auto dir = fresh_dir("ingest");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "u.data");
    for (int i = 0; i < 400; ++i) out << (i % 37 + 1) << '\t' << (i * 7 % 13 + 1) << "\t3\t" << 1000 + i * 60 << '\n';
  }
  auto c = toy();
  c.workload.source = "file";
  c.workload.path = (dir / "u.data").string();
  c.workload.slot_seconds = 60;
  c.workload.n_contents = 13;
  c.pipeline.window = 20;
  c.simulation.policies = {"lru", "optimal"};
  run_stage(Stage::ingest, c, dir);
  run_stage(Stage::prepare, c, dir);
  run_stage(Stage::simulate, c, dir);
  CHECK(slurp(dir / artifact::results).find("\nlru,2,") != std::string::npos);
  CHECK(error_of([&] { run_stage(Stage::gen_trace, c, dir); }).find("ingest") != std::string::npos);
}
