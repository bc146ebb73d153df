#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tedge/cachesim.hpp"
#include "tedge/pipeline.hpp"
#include "tedge/topology.hpp"
#include "tedge/train.hpp"
#include "tedge/vit.hpp"
#include "tedge/workload.hpp"

namespace tedge {

/// The nine published model variants. Ids whose head count does not divide d (6 and 8) throw.
ViTConfig preset_model(int id);

struct WorkloadConfig {
  std::string source = "synthetic";  // synthetic | file
  std::string path;                  // trace file for source = file
  std::string format = "movielens_tsv";
  std::int64_t slot_seconds = 1;     // ingestion slot length
  int n_contents = 200;
  double gamma = 0.8;
  double zeta = 0.0;
  int n_slots = 450;
  int requests_per_slot = 400;
  std::string drift = "rank_shuffle";  // none | rank_shuffle
  int drift_period = 50;
  bool assign_nodes = false;           // route requests to hgNBs of topology.json
};

struct PipelineConfig {
  int window = 1200;  // W, in log slots
  int history_len = 25;
  int k = 20;
  SkewnessKind skewness = SkewnessKind::temporal;
  ImageScaling image_scaling = ImageScaling::sample_log;
};

struct SimulationConfig {
  int capacity = 0;  // 0: same as pipeline.k
  std::vector<std::string> policies{"fifo", "lru", "lfu", "optimal", "tedge"};
  std::string scope = "test";  // test | all
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ScenarioOptions topology;
  WorkloadConfig workload;
  PipelineConfig pipeline;
  ViTConfig model = preset_model(1);
  InputMode input_mode = InputMode::per_content_gaf;
  TrainOptions training;
  SimulationConfig simulation;

  int capacity() const noexcept { return simulation.capacity > 0 ? simulation.capacity : pipeline.k; }
};

/// Reads the JSON config, rejecting unknown keys and wrong types with the key path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

/// Applies one `section.key=value` override (value parsed as JSON, falling
/// back to a plain string).
void apply_override(std::string& json_text, const std::string& assignment);

/// Checks K <= N_c, W <= T, l < N_W and the model geometry where the values
/// are known without touching data.
void validate_config(const ExperimentConfig& config);

enum class Stage { gen_topology, gen_trace, ingest, prepare, train, eval, simulate, report };

Stage parse_stage(const std::string& name);
std::string to_string(Stage stage);

/// Fixed artifact names inside the output directory.
namespace artifact {
inline constexpr const char* topology = "topology.json";
inline constexpr const char* trace = "trace.csv";
inline constexpr const char* dataset = "dataset.bin";
inline constexpr const char* model = "model.ckpt";
inline constexpr const char* metrics = "metrics.json";
inline constexpr const char* results = "results.csv";
inline constexpr const char* intervals = "intervals.csv";
inline constexpr const char* report = "report.csv";
}  // namespace artifact

/// Runs one stage, writing its artifacts and `<stage>.manifest.json` under
/// `out_dir`. Throws when an upstream artifact is missing.
void run_stage(Stage stage, const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string fnv1a_file(const std::filesystem::path& path);

/// Per-node logs of the prepared trace (one log without node assignment).
std::vector<RequestLog> node_logs(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// First update interval of the held-out split, the start of scored
/// simulation in "test" scope.
int held_out_start(const Dataset& dataset, double validation_fraction);

/// Simulates every configured policy on each node log and sums the results.
std::vector<PolicyResult> simulate_policies(const ExperimentConfig& config, const std::vector<RequestLog>& logs,
                                            const ViTModel* model, int count_from_window);

}  // namespace tedge
