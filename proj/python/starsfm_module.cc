#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "starsfm/pipeline.h"
#include "starsfm/sampling.h"

namespace py = pybind11;
using namespace starsfm;

namespace {

std::string LoadConfigJson(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                           std::optional<uint64_t> seed) {
  return ConfigToJson(LoadConfig(path, overrides, seed)).dump();
}

PipelineConfig ParseConfig(const std::string& config_json) {
  return ConfigFromJson(nlohmann::json::parse(config_json));
}

void Simulate(const std::string& config_json, const std::string& out_dir) {
  WriteBundleDirectory(out_dir, SimulateBundle(ParseConfig(config_json)));
}

std::string Run(const std::string& config_json, const std::string& bundle_dir, const std::string& out_dir) {
  const PipelineConfig config = ParseConfig(config_json);
  PipelineResult result;
  {
    py::gil_scoped_release release;
    const BundleDirectory bundle = bundle_dir.empty() ? SimulateBundle(config) : ReadBundleDirectory(bundle_dir);
    result = RunPipeline(config, bundle);
  }
  if (!out_dir.empty()) WritePipelineOutputs(out_dir, result);
  return EvalReportToJson(result.report).dump();
}

ViewGraph GraphFromEdges(int n, const std::vector<std::pair<int, int>>& edges) {
  ViewGraph g;
  for (int v = 0; v < n; ++v) g.AddVertex(v);
  for (const auto& [i, j] : edges) g.AddEdge(i, j, EdgeData{1.0, 1.0});
  return g;
}

std::vector<std::tuple<int, int, int>> Sample(int length, uint64_t seed) {
  std::vector<std::tuple<int, int, int>> out;
  for (const SubsequenceWindow& w : SampleSubsequences(length, seed)) out.emplace_back(w.center, w.stride, w.length);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Global structure from motion on star reconstructions.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def("load_config", &LoadConfigJson, py::arg("path") = std::nullopt,
        py::arg("overrides") = std::vector<std::string>{}, py::arg("seed") = std::nullopt,
        "Defaults, then the optional file, then overrides, then the seed, as a JSON string.");
  m.def("simulate_bundle", &Simulate, py::arg("config"), py::arg("out_dir"),
        "Writes a simulated bundle directory.");
  m.def("run_pipeline", &Run, py::arg("config"), py::arg("bundle_dir") = "", py::arg("out_dir") = "",
        "Runs every stage and returns the report as a JSON string.");
  m.def("auc_at", &AucAt, py::arg("errors_deg"), py::arg("threshold_deg"));
  m.def("transitive_overlap", &TransitiveOverlap, py::arg("raw"));
  m.def(
      "fiedler_value", [](int n, const std::vector<std::pair<int, int>>& edges) {
        return FiedlerValue(GraphFromEdges(n, edges));
      },
      py::arg("n"), py::arg("edges"));
  m.def(
      "graph_radius", [](int n, const std::vector<std::pair<int, int>>& edges) {
        return GraphRadius(GraphFromEdges(n, edges));
      },
      py::arg("n"), py::arg("edges"));
  m.def("sample_subsequences", &Sample, py::arg("length"), py::arg("seed"),
        "Windows as (center, stride, length) tuples.");
}
