#include "tedge/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace tedge {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---- config reading --------------------------------------------------------

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config: " + path + ": " + what);
}

class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) config_error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) config_error(key_path(key), "expected an integer");
      out = v->get<int>();
    }
  }
  void read(const std::string& key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) config_error(key_path(key), "expected an integer");
      out = v->get<std::int64_t>();
    }
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0) {
        config_error(key_path(key), "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) config_error(key_path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) config_error(key_path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) config_error(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  template <typename Parse>
  void read_enum(const std::string& key, Parse parse) {
    std::string name;
    if (node_.contains(key)) {
      read(key, name);
      try {
        parse(name);
      } catch (const std::invalid_argument& e) {
        config_error(key_path(key), e.what());
      }
    } else {
      seen_.insert(key);
    }
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.contains(it.key())) config_error(key_path(it.key()), "unknown key");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_topology(Section& s, ScenarioOptions& t) {
  if (const json* a = s.find("area")) {
    if (!a->is_array() || a->size() != 2 || !(*a)[0].is_number() || !(*a)[1].is_number()) {
      config_error(s.key_path("area"), "expected [width, height]");
    }
    t.area = {(*a)[0].get<double>(), (*a)[1].get<double>()};
  }
  s.read("fap_intensity", t.fap_intensity);
  s.read("fap_count", t.fixed_fap_count);
  s.read("n_uavs", t.n_uavs);
  s.read("n_users", t.n_users);
  s.read("fap_range", t.fap_range);
  s.read("uav_range", t.uav_range);
  s.read("kmeans_max_iters", t.kmeans_max_iters);
  s.finish();
}

void read_workload(Section& s, WorkloadConfig& w) {
  s.read("source", w.source);
  if (w.source != "synthetic" && w.source != "file") {
    config_error(s.key_path("source"), "expected \"synthetic\" or \"file\", got \"" + w.source + "\"");
  }
  s.read("path", w.path);
  s.read("format", w.format);
  s.read_enum("format", parse_trace_format);
  s.read("slot_seconds", w.slot_seconds);
  s.read("n_contents", w.n_contents);
  s.read("gamma", w.gamma);
  s.read("zeta", w.zeta);
  s.read("n_slots", w.n_slots);
  s.read("requests_per_slot", w.requests_per_slot);
  if (const json* d = s.find("drift")) {
    Section ds(*d, s.key_path("drift"));
    ds.read("kind", w.drift);
    if (w.drift != "none" && w.drift != "rank_shuffle") {
      config_error(ds.key_path("kind"), "expected \"none\" or \"rank_shuffle\", got \"" + w.drift + "\"");
    }
    ds.read("period", w.drift_period);
    ds.finish();
  }
  s.read("assign_nodes", w.assign_nodes);
  s.finish();
}

void read_pipeline(Section& s, PipelineConfig& p) {
  s.read("window", p.window);
  s.read("history_len", p.history_len);
  s.read("k", p.k);
  s.read_enum("skewness", [&](const std::string& v) { p.skewness = parse_skewness_kind(v); });
  s.read_enum("image_scaling", [&](const std::string& v) { p.image_scaling = parse_image_scaling(v); });
  s.finish();
}

void read_model(Section& s, ExperimentConfig& c) {
  if (const json* preset = s.find("preset")) {
    if (!preset->is_number_integer()) config_error(s.key_path("preset"), "expected an integer");
    try {
      c.model = preset_model(preset->get<int>());
    } catch (const std::invalid_argument& e) {
      config_error(s.key_path("preset"), e.what());
    }
  }
  s.read("n_layers", c.model.n_layers);
  s.read("model_dim", c.model.model_dim);
  s.read("n_heads", c.model.n_heads);
  s.read("mlp_layers", c.model.mlp_layers);
  s.read("mlp_size", c.model.mlp_size);
  s.read("patch_size", c.model.patch_size);
  s.read_enum("input_mode", [&](const std::string& v) { c.input_mode = parse_input_mode(v); });
  s.finish();
}

void read_training(Section& s, TrainOptions& t) {
  s.read("epochs", t.epochs);
  s.read("batch_size", t.batch_size);
  s.read("lr", t.adam.lr);
  s.read("weight_decay", t.adam.weight_decay);
  s.read("eps", t.adam.eps);
  if (const json* b = s.find("betas")) {
    if (!b->is_array() || b->size() != 2 || !(*b)[0].is_number() || !(*b)[1].is_number()) {
      config_error(s.key_path("betas"), "expected [beta1, beta2]");
    }
    t.adam.beta1 = (*b)[0].get<double>();
    t.adam.beta2 = (*b)[1].get<double>();
  }
  s.read("validation_fraction", t.validation_fraction);
  s.read("init_std", t.init_std);
  s.finish();
}

void read_simulation(Section& s, SimulationConfig& sim) {
  s.read("capacity", sim.capacity);
  if (const json* p = s.find("policies")) {
    if (!p->is_array()) config_error(s.key_path("policies"), "expected a list of policy names");
    sim.policies.clear();
    for (const auto& v : *p) {
      if (!v.is_string()) config_error(s.key_path("policies"), "expected a list of policy names");
      const auto name = v.get<std::string>();
      static const std::set<std::string> known{"fifo", "lru", "lfu", "optimal", "tedge", "heuristic"};
      if (!known.contains(name)) {
        config_error(s.key_path("policies"),
                     "unknown policy \"" + name + "\" (expected fifo, lru, lfu, optimal, tedge or heuristic)");
      }
      sim.policies.push_back(name);
    }
  }
  s.read("scope", sim.scope);
  if (sim.scope != "test" && sim.scope != "all") {
    config_error(s.key_path("scope"), "expected \"test\" or \"all\", got \"" + sim.scope + "\"");
  }
  s.finish();
}

// ---- artifacts -------------------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << bytes;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void require(const fs::path& dir, const char* name, const std::string& upstream) {
  if (!fs::exists(dir / name)) {
    throw std::runtime_error(std::string(name) + " not found in " + dir.string() + ": run " + upstream + " first");
  }
}

void write_manifest(const fs::path& dir, Stage stage, const ExperimentConfig& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  json m;
  m["stage"] = to_string(stage);
  m["version"] = kVersion;
  m["seed"] = config.seed;
  m["config"] = json::parse(config_to_json(config));
  json in = json::object(), out = json::object();
  for (const auto& f : inputs) in[f] = fnv1a_file(f.find('/') == std::string::npos ? dir / f : fs::path(f));
  for (const auto& f : outputs) out[f] = fnv1a_file(dir / f);
  m["inputs"] = in;
  m["outputs"] = out;
  write_file(dir / (to_string(stage) + ".manifest.json"), m.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / artifact::dataset, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + (dir / artifact::dataset).string());
  return read_dataset(in);
}

ViTModel load_model(const fs::path& dir) {
  std::ifstream in(dir / artifact::model, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + (dir / artifact::model).string());
  return read_checkpoint(in);
}

json eval_json(const EvalMetrics& m) {
  return {{"accuracy", m.accuracy}, {"loss", m.loss}, {"topk_jaccard", m.topk_jaccard}, {"samples", m.samples}};
}

PolicyResult sum_results(const std::vector<PolicyResult>& parts) {
  PolicyResult total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    total.hits += parts[i].hits;
    total.misses += parts[i].misses;
    for (std::size_t w = 0; w < total.intervals.size(); ++w) {
      total.intervals[w].hits += parts[i].intervals[w].hits;
      total.intervals[w].requests += parts[i].intervals[w].requests;
    }
  }
  const auto n = total.hits + total.misses;
  total.hit_ratio = n > 0 ? static_cast<double>(total.hits) / static_cast<double>(n) : 0.0;
  return total;
}

}  // namespace

// ---- public API ------------------------------------------------------------

ViTConfig preset_model(int id) {
  struct Row {
    int layers, dim, mlp_layers, mlp_size, heads;
  };
  static constexpr Row rows[] = {{1, 32, 1, 256, 8},  {1, 64, 1, 256, 8},  {1, 128, 1, 256, 8},
                                 {2, 128, 1, 256, 8}, {1, 128, 2, 256, 8}, {1, 128, 3, 256, 6},
                                 {1, 128, 3, 256, 8}, {1, 128, 3, 256, 10}, {1, 128, 1, 512, 8}};
  if (id < 1 || id > 9) throw std::invalid_argument("model preset id " + std::to_string(id) + " outside 1..9");
  const Row& r = rows[id - 1];
  if (r.dim % r.heads != 0) {
    throw std::invalid_argument("model preset " + std::to_string(id) + " is not constructible: d=" +
                                std::to_string(r.dim) + " is not divisible by h=" + std::to_string(r.heads) +
                                " (d_h = d/h must be an integer)");
  }
  ViTConfig c;
  c.n_layers = r.layers;
  c.model_dim = r.dim;
  c.mlp_layers = r.mlp_layers;
  c.mlp_size = r.mlp_size;
  c.n_heads = r.heads;
  c.patch_size = 5;
  c.image_size = 25;
  c.n_classes = 1;
  return c;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section root(doc, "");
  root.read("seed", c.seed);
  if (const json* t = root.find("topology")) {
    Section s(*t, "topology");
    read_topology(s, c.topology);
  }
  if (const json* w = root.find("workload")) {
    Section s(*w, "workload");
    read_workload(s, c.workload);
  }
  if (const json* p = root.find("pipeline")) {
    Section s(*p, "pipeline");
    read_pipeline(s, c.pipeline);
  }
  if (const json* m = root.find("model")) {
    Section s(*m, "model");
    read_model(s, c);
  }
  if (const json* t = root.find("training")) {
    Section s(*t, "training");
    read_training(s, c.training);
  }
  if (const json* s_ = root.find("simulation")) {
    Section s(*s_, "simulation");
    read_simulation(s, c.simulation);
  }
  root.finish();
  c.training.seed = c.seed;
  c.training.mode = c.input_mode;
  c.training.scaling = c.pipeline.image_scaling;
  return c;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["topology"] = {{"area", {c.topology.area.width, c.topology.area.height}},
                   {"fap_intensity", c.topology.fap_intensity},
                   {"fap_count", c.topology.fixed_fap_count},
                   {"n_uavs", c.topology.n_uavs},
                   {"n_users", c.topology.n_users},
                   {"fap_range", c.topology.fap_range},
                   {"uav_range", c.topology.uav_range},
                   {"kmeans_max_iters", c.topology.kmeans_max_iters}};
  const auto& w = c.workload;
  j["workload"] = {{"source", w.source},
                   {"path", w.path},
                   {"format", w.format},
                   {"slot_seconds", w.slot_seconds},
                   {"n_contents", w.n_contents},
                   {"gamma", w.gamma},
                   {"zeta", w.zeta},
                   {"n_slots", w.n_slots},
                   {"requests_per_slot", w.requests_per_slot},
                   {"drift", {{"kind", w.drift}, {"period", w.drift_period}}},
                   {"assign_nodes", w.assign_nodes}};
  j["pipeline"] = {{"window", c.pipeline.window},
                   {"history_len", c.pipeline.history_len},
                   {"k", c.pipeline.k},
                   {"skewness", to_string(c.pipeline.skewness)},
                   {"image_scaling", to_string(c.pipeline.image_scaling)}};
  j["model"] = {{"n_layers", c.model.n_layers},     {"model_dim", c.model.model_dim},
                {"n_heads", c.model.n_heads},       {"mlp_layers", c.model.mlp_layers},
                {"mlp_size", c.model.mlp_size},     {"patch_size", c.model.patch_size},
                {"input_mode", to_string(c.input_mode)}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"lr", c.training.adam.lr},
                   {"weight_decay", c.training.adam.weight_decay},
                   {"eps", c.training.adam.eps},
                   {"betas", {c.training.adam.beta1, c.training.adam.beta2}},
                   {"validation_fraction", c.training.validation_fraction},
                   {"init_std", c.training.init_std}};
  j["simulation"] = {{"capacity", c.simulation.capacity},
                     {"policies", c.simulation.policies},
                     {"scope", c.simulation.scope}};
  return j.dump(2);
}

void apply_override(std::string& json_text, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json doc = json_text.empty() ? json::object() : json::parse(json_text);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw std::invalid_argument("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
  json_text = doc.dump();
}

void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& path, const std::string& what) { config_error(path, what); };
  const auto& p = c.pipeline;
  if (p.window < 1) fail("pipeline.window", "must be >= 1");
  if (p.history_len < 1) fail("pipeline.history_len", "must be >= 1");
  if (p.k < 1) fail("pipeline.k", "must be >= 1");
  if (c.capacity() < 1) fail("simulation.capacity", "must be >= 1");
  const auto& w = c.workload;
  if (w.source == "synthetic") {
    if (w.n_contents < 1) fail("workload.n_contents", "must be >= 1");
    if (p.k > w.n_contents) {
      fail("pipeline.k", "K=" + std::to_string(p.k) + " exceeds the catalog size N_c=" + std::to_string(w.n_contents));
    }
    if (c.capacity() > w.n_contents) fail("simulation.capacity", "exceeds the catalog size");
    if (w.n_slots < 1 || w.requests_per_slot < 1) fail("workload", "n_slots and requests_per_slot must be >= 1");
    if (w.drift == "rank_shuffle" && w.drift_period < 1) fail("workload.drift.period", "must be >= 1");
    const std::int64_t horizon = static_cast<std::int64_t>(w.n_slots) * w.requests_per_slot;
    if (p.window > horizon) {
      fail("pipeline.window", "W=" + std::to_string(p.window) + " exceeds the trace horizon T=" + std::to_string(horizon));
    }
    const std::int64_t n_windows = horizon / p.window;
    if (p.history_len >= n_windows) {
      fail("pipeline.history_len", "l=" + std::to_string(p.history_len) + " must be below the window count N_W=" +
                                       std::to_string(n_windows));
    }
    if (w.assign_nodes && w.requests_per_slot > c.topology.n_users) {
      fail("workload.requests_per_slot", "exceeds topology.n_users (each request needs a distinct user per slot)");
    }
  } else if (w.path.empty()) {
    fail("workload.path", "required when workload.source is \"file\"");
  }
  try {
    fit_config(c.model, p.history_len, std::max(w.n_contents, p.k), c.input_mode);
  } catch (const std::invalid_argument& e) {
    fail("model", e.what());
  }
  if (c.training.epochs < 0) fail("training.epochs", "must be >= 0");
  if (c.training.batch_size < 1) fail("training.batch_size", "must be >= 1");
  if (!(c.training.validation_fraction >= 0.0 && c.training.validation_fraction < 1.0)) {
    fail("training.validation_fraction", "must be in [0, 1)");
  }
}

Stage parse_stage(const std::string& name) {
  static const std::pair<const char*, Stage> table[] = {
      {"gen-topology", Stage::gen_topology}, {"gen-trace", Stage::gen_trace}, {"ingest", Stage::ingest},
      {"prepare", Stage::prepare},           {"train", Stage::train},         {"eval", Stage::eval},
      {"simulate", Stage::simulate},         {"report", Stage::report}};
  for (const auto& [n, s] : table) {
    if (name == n) return s;
  }
  throw std::invalid_argument("unknown stage '" + name +
                              "' (expected gen-topology, gen-trace, ingest, prepare, train, eval, simulate or report)");
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::gen_topology: return "gen-topology";
    case Stage::gen_trace: return "gen-trace";
    case Stage::ingest: return "ingest";
    case Stage::prepare: return "prepare";
    case Stage::train: return "train";
    case Stage::eval: return "eval";
    case Stage::simulate: return "simulate";
    case Stage::report: return "report";
  }
  return "?";
}

std::string fnv1a_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<RequestLog> node_logs(const ExperimentConfig& config, const fs::path& out_dir) {
  require(out_dir, artifact::trace, config.workload.source == "file" ? "ingest" : "gen-trace");
  std::ifstream in(out_dir / artifact::trace, std::ios::binary);
  const std::int64_t slot = config.workload.source == "file" ? config.workload.slot_seconds : 1;
  RequestLog log = parse_trace(in, TraceFormat::events_csv, slot);
  if (config.workload.source == "synthetic") log = widen_catalog(std::move(log), config.workload.n_contents);
  if (!config.workload.assign_nodes) return {std::move(log)};

  require(out_dir, artifact::topology, "gen-topology");
  const Topology topo = topology_from_json(read_file(out_dir / artifact::topology));
  NodeAssignment assigned = assign_requests_to_nodes(log, topo);
  std::vector<RequestLog> logs;
  for (auto& node_log : assigned.per_node) {
    if (!node_log.events.empty()) logs.push_back(std::move(node_log));
  }
  if (logs.empty()) throw std::runtime_error("no request falls inside any hgNB's range");
  return logs;
}

int held_out_start(const Dataset& dataset, double validation_fraction) {
  const TimeSplit split = split_by_time(dataset, validation_fraction);
  if (split.n_train >= split.order.size()) return dataset.samples[split.order.back()].target + 1;
  return dataset.samples[split.order[split.n_train]].target;
}

std::vector<PolicyResult> simulate_policies(const ExperimentConfig& config, const std::vector<RequestLog>& logs,
                                            const ViTModel* model, int count_from_window) {
  const int K = config.capacity();
  const SimulationWindow window{config.pipeline.window, count_from_window};
  const int l = config.pipeline.history_len;
  std::vector<PolicyResult> results;
  for (const auto& name : config.simulation.policies) {
    std::vector<PolicyResult> parts;
    for (const auto& log : logs) {
      if (name == "optimal") {
        parts.push_back(simulate_optimal(log, K, window));
      } else if (name == "tedge") {
        if (!model) throw std::runtime_error("policy tedge needs model.ckpt: run train first");
        const Predictor predict = [&](const CountMatrix& history, int) {
          return top_k_indices(score_contents(*model, history, config.input_mode, config.pipeline.image_scaling), K);
        };
        parts.push_back(simulate_predictive(log, predict, l, K, window, "tedge"));
      } else if (name == "heuristic") {
        const Predictor predict = [&](const CountMatrix& history, int) {
          const auto label = label_top_k(history, K, config.pipeline.skewness);
          std::vector<int> ids;
          for (std::size_t c = 0; c < label.size(); ++c) {
            if (label[c]) ids.push_back(static_cast<int>(c));
          }
          return ids;
        };
        parts.push_back(simulate_predictive(log, predict, l, K, window, "heuristic"));
      } else {
        parts.push_back(simulate_reactive(log, parse_reactive_policy(name), K, window));
      }
    }
    results.push_back(sum_results(parts));
  }
  std::vector<PolicyResult> all;
  for (const auto& log : logs) all.push_back(serve_all(log, window));
  results.push_back(sum_results(all));
  return results;
}

void run_stage(Stage stage, const ExperimentConfig& config, const fs::path& out_dir) {
  validate_config(config);
  fs::create_directories(out_dir);
  const auto& dir = out_dir;
  switch (stage) {
    case Stage::gen_topology: {
      const Topology topo = generate_topology(config.topology, config.seed);
      write_file(dir / artifact::topology, topology_to_json(topo) + "\n");
      write_manifest(dir, stage, config, {}, {artifact::topology});
      break;
    }
    case Stage::gen_trace: {
      const auto& w = config.workload;
      if (w.source != "synthetic") throw std::runtime_error("workload.source is \"file\": run ingest instead of gen-trace");
      SyntheticTraceOptions opts;
      opts.n_slots = w.n_slots;
      opts.requests_per_slot = w.requests_per_slot;
      opts.drift = w.drift == "rank_shuffle" ? Drift::rank_shuffle(w.drift_period) : Drift::none();
      opts.n_users = w.assign_nodes ? config.topology.n_users : 0;
      const RequestLog log = generate_synthetic_trace(make_zipf(w.n_contents, w.gamma, w.zeta), opts, config.seed);
      std::ofstream out(dir / artifact::trace, std::ios::binary);
      write_events_csv(out, log);
      out.close();
      write_manifest(dir, stage, config, {}, {artifact::trace});
      break;
    }
    case Stage::ingest: {
      const auto& w = config.workload;
      if (w.source != "file") throw std::runtime_error("workload.source is \"synthetic\": run gen-trace instead of ingest");
      std::ifstream in(w.path, std::ios::binary);
      if (!in) throw std::runtime_error("cannot open trace file " + w.path);
      const RequestLog log = parse_trace(in, parse_trace_format(w.format), w.slot_seconds);
      std::cerr << "ingest: " << log.events.size() << " events, N_c=" << log.catalog_size << ", T=" << log.horizon
                << ", dropped duplicates=" << log.dropped_duplicates << "\n";
      std::ofstream out(dir / artifact::trace, std::ios::binary);
      write_events_csv(out, log);
      out.close();
      write_manifest(dir, stage, config, {w.path}, {artifact::trace});
      break;
    }
    case Stage::prepare: {
      const auto logs = node_logs(config, dir);
      const int n_contents = logs.front().catalog_size;
      if (config.pipeline.k > n_contents) {
        config_error("pipeline.k", "K=" + std::to_string(config.pipeline.k) + " exceeds the catalog size N_c=" +
                                       std::to_string(n_contents));
      }
      const DatasetOptions opts{config.pipeline.history_len, config.pipeline.k, config.pipeline.skewness};
      Dataset dataset{opts.history_len, n_contents, opts.k, {}};
      for (const auto& log : logs) {
        if (config.pipeline.window > log.horizon) {
          config_error("pipeline.window", "W=" + std::to_string(config.pipeline.window) +
                                              " exceeds the trace horizon T=" + std::to_string(log.horizon));
        }
        const WindowMatrix windows = window_counts(log, config.pipeline.window);
        if (opts.history_len >= windows.n_windows()) {
          config_error("pipeline.history_len", "l=" + std::to_string(opts.history_len) +
                                                   " must be below the window count N_W=" +
                                                   std::to_string(windows.n_windows()));
        }
        const int node = log.events.empty() ? 0 : log.events.front().node_id;
        append_dataset(dataset, build_dataset(windows, opts, node));
      }
      std::ofstream out(dir / artifact::dataset, std::ios::binary);
      write_dataset(out, dataset);
      out.close();
      std::vector<std::string> inputs{artifact::trace};
      if (config.workload.assign_nodes) inputs.push_back(artifact::topology);
      write_manifest(dir, stage, config, inputs, {artifact::dataset});
      break;
    }
    case Stage::train: {
      require(dir, artifact::dataset, "prepare");
      const Dataset dataset = load_dataset(dir);
      const TrainResult result = train(dataset, config.model, config.training);
      {
        std::ofstream out(dir / artifact::model, std::ios::binary);
        write_checkpoint(out, result.model);
      }
      json m;
      m["parameters"] = result.model.params.parameter_count();
      m["n_train"] = result.split.n_train;
      m["n_validation"] = result.split.order.size() - result.split.n_train;
      json epochs = json::array();
      for (const auto& e : result.history) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"train_accuracy", e.train_accuracy},
                          {"validation", eval_json(e.validation)}});
        std::cerr << "epoch " << e.epoch << ": loss " << e.train_loss << ", acc " << e.train_accuracy
                  << ", val acc " << e.validation.accuracy << ", val jaccard " << e.validation.topk_jaccard << "\n";
      }
      m["epochs"] = epochs;
      write_file(dir / artifact::metrics, m.dump(2) + "\n");
      write_manifest(dir, stage, config, {artifact::dataset}, {artifact::model, artifact::metrics});
      break;
    }
    case Stage::eval: {
      require(dir, artifact::dataset, "prepare");
      require(dir, artifact::model, "train");
      const Dataset dataset = load_dataset(dir);
      const ViTModel model = load_model(dir);
      const TimeSplit split = split_by_time(dataset, config.training.validation_fraction);
      std::span<const std::size_t> held(split.order.data() + split.n_train, split.order.size() - split.n_train);
      if (held.empty()) held = std::span<const std::size_t>(split.order);
      const EvalMetrics metrics =
          evaluate(model, dataset, held, dataset.k, config.input_mode, config.pipeline.image_scaling);
      json m = fs::exists(dir / artifact::metrics) ? json::parse(read_file(dir / artifact::metrics)) : json::object();
      m["evaluation"] = eval_json(metrics);
      write_file(dir / artifact::metrics, m.dump(2) + "\n");
      std::cerr << "eval: accuracy " << metrics.accuracy << ", loss " << metrics.loss << ", top-K jaccard "
                << metrics.topk_jaccard << " over " << metrics.samples << " held-out samples\n";
      write_manifest(dir, stage, config, {artifact::dataset, artifact::model}, {artifact::metrics});
      break;
    }
    case Stage::simulate: {
      require(dir, artifact::dataset, "prepare");
      const bool needs_model = std::find(config.simulation.policies.begin(), config.simulation.policies.end(),
                                         "tedge") != config.simulation.policies.end();
      if (needs_model) require(dir, artifact::model, "train");
      const Dataset dataset = load_dataset(dir);
      std::optional<ViTModel> model;
      if (needs_model) model = load_model(dir);
      const auto logs = node_logs(config, dir);
      const int from =
          config.simulation.scope == "test" ? held_out_start(dataset, config.training.validation_fraction) : 0;
      const auto results = simulate_policies(config, logs, model ? &*model : nullptr, from);
      {
        std::ofstream out(dir / artifact::results, std::ios::binary);
        write_results_csv(out, results);
      }
      {
        std::ofstream out(dir / artifact::intervals, std::ios::binary);
        write_interval_csv(out, results);
      }
      std::vector<std::string> inputs{artifact::dataset, artifact::trace};
      if (needs_model) inputs.push_back(artifact::model);
      write_manifest(dir, stage, config, inputs, {artifact::results, artifact::intervals});
      break;
    }
    case Stage::report: {
      require(dir, artifact::results, "simulate");
      std::istringstream in(read_file(dir / artifact::results));
      std::string line;
      std::getline(in, line);
      struct Row {
        std::string policy;
        std::string k, events, hits, misses;
        double ratio;
      };
      std::vector<Row> rows;
      double optimal = 0.0;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw std::runtime_error("results.csv: malformed row '" + line + "'");
        rows.push_back({f[0], f[1], f[2], f[3], f[4], std::stod(f[5])});
        if (f[0] == "optimal") optimal = rows.back().ratio;
      }
      std::ostringstream out;
      out << "policy,K,events,hits,hit_ratio,fraction_of_optimal\n";
      std::cout << "policy      hit ratio   vs optimal\n";
      for (const auto& r : rows) {
        const double frac = optimal > 0.0 ? r.ratio / optimal : 0.0;
        out << r.policy << ',' << r.k << ',' << r.events << ',' << r.hits << ',' << json(r.ratio).dump() << ','
            << json(frac).dump() << '\n';
        char buf[96];
        std::snprintf(buf, sizeof buf, "%-10s  %9.4f  %10.3f\n", r.policy.c_str(), r.ratio, frac);
        std::cout << buf;
      }
      write_file(dir / artifact::report, out.str());
      write_manifest(dir, stage, config, {artifact::results}, {artifact::report});
      break;
    }
  }
}

}  // namespace tedge
