#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

#include "tedge/cachesim.hpp"
#include "tedge/experiment.hpp"
#include "tedge/pipeline.hpp"
#include "tedge/topology.hpp"
#include "tedge/vit.hpp"

namespace py = pybind11;
using namespace tedge;

namespace {

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out[r].assign(t.row(r).begin(), t.row(r).end());
  return out;
}

CountMatrix count_matrix(const std::vector<std::vector<long long>>& rows) {
  if (rows.empty()) throw std::invalid_argument("history must have at least one row");
  CountMatrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw std::invalid_argument("history rows differ in length");
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

RequestLog log_of(const std::vector<int>& contents) {
  RequestLog log;
  log.catalog_size = contents.empty() ? 1 : *std::max_element(contents.begin(), contents.end());
  log.horizon = std::max<std::int64_t>(1, static_cast<std::int64_t>(contents.size()));
  for (std::size_t i = 0; i < contents.size(); ++i) {
    log.events.push_back({static_cast<std::int64_t>(i), static_cast<std::int64_t>(i), contents[i], 0});
  }
  log.validate();
  return log;
}

py::dict result_dict(const PolicyResult& r) {
  py::dict d;
  d["policy"] = r.policy;
  d["capacity"] = r.capacity;
  d["hits"] = r.hits;
  d["misses"] = r.misses;
  d["hit_ratio"] = r.hit_ratio;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tedge, m) {
  m.doc() = "Edge-caching benchmark core: workloads, labeling, ViT, cache simulation.";

  m.def("mzipf_pmf", &mzipf_pmf, py::arg("n_contents"), py::arg("gamma"), py::arg("zeta") = 0.0);
  m.def("sample_skewness", [](const std::vector<double>& s) { return sample_skewness(s); });
  m.def(
      "label_top_k",
      [](const std::vector<std::vector<long long>>& history, int k, const std::string& skewness) {
        return label_top_k(count_matrix(history), k, parse_skewness_kind(skewness));
      },
      py::arg("history"), py::arg("k"), py::arg("skewness") = "temporal");
  m.def("gaf_encode", [](const std::vector<double>& s) { return rows_of(gaf_encode(s).pixels); });

  m.def("count_params", [](int id) { return count_params(preset_model(id)); }, py::arg("preset"));
  m.def(
      "preset_model",
      [](int id) {
        const ViTConfig c = preset_model(id);
        py::dict d;
        d["n_layers"] = c.n_layers;
        d["model_dim"] = c.model_dim;
        d["n_heads"] = c.n_heads;
        d["mlp_layers"] = c.mlp_layers;
        d["mlp_size"] = c.mlp_size;
        d["patch_size"] = c.patch_size;
        return d;
      },
      py::arg("id"));

  m.def(
      "simulate_reactive",
      [](const std::vector<int>& contents, const std::string& policy, int capacity) {
        return result_dict(simulate_reactive(log_of(contents), parse_reactive_policy(policy), capacity));
      },
      py::arg("contents"), py::arg("policy"), py::arg("capacity"));
  m.def(
      "simulate_optimal",
      [](const std::vector<int>& contents, int capacity, int window_len) {
        return result_dict(simulate_optimal(log_of(contents), capacity, {window_len, 0}));
      },
      py::arg("contents"), py::arg("capacity"), py::arg("window_len"));

  m.def(
      "run_stage",
      [](const std::string& stage, const std::filesystem::path& config, const std::filesystem::path& out,
         const std::vector<std::string>& overrides) {
        std::ifstream in(config);
        if (!in) throw std::invalid_argument("cannot open config " + config.string());
        std::stringstream text;
        text << in.rdbuf();
        std::string json_text = text.str();
        for (const auto& o : overrides) apply_override(json_text, o);
        py::gil_scoped_release release;
        run_stage(parse_stage(stage), parse_config(json_text), out);
      },
      py::arg("stage"), py::arg("config"), py::arg("out"), py::arg("overrides") = std::vector<std::string>{});
}
