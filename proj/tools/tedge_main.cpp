// tedge: stage runner for the edge-caching benchmark.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tedge/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Trace-driven edge caching benchmark with a ViT popularity predictor"};
  std::string stage_name;
  std::string config_path;
  std::string out_dir = "out";
  std::int64_t seed = -1;
  std::vector<std::string> overrides;
  app.add_option("stage", stage_name,
                 "gen-topology | gen-trace | ingest | prepare | train | eval | simulate | report")
      ->required();
  app.add_option("--config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "RNG seed (falls back to TEDGE_SEED, then the config's seed)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--out", out_dir, "artifact directory");
  app.add_option("--set", overrides, "override one config key, e.g. --set pipeline.k=10");
  CLI11_PARSE(app, argc, argv);

  try {
    const tedge::Stage stage = tedge::parse_stage(stage_name);
    std::ifstream in(config_path);
    std::stringstream text;
    text << in.rdbuf();
    std::string json_text = text.str();
    for (const auto& o : overrides) tedge::apply_override(json_text, o);
    if (seed >= 0) {
      tedge::apply_override(json_text, "seed=" + std::to_string(seed));
    } else if (const char* env = std::getenv("TEDGE_SEED"); env && *env) {
      tedge::apply_override(json_text, std::string("seed=") + env);
    }
    const tedge::ExperimentConfig config = tedge::parse_config(json_text);
    std::cerr << "tedge " << stage_name << ": resolved config\n" << tedge::config_to_json(config) << "\n";
    tedge::run_stage(stage, config, out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
