#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "starsfm/pipeline.h"
#include "starsfm/sampling.h"

namespace fs = std::filesystem;
using namespace starsfm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;

  PipelineConfig Load() const {
    return LoadConfig(config_path.empty() ? std::nullopt : std::optional<std::string>(config_path), overrides,
                      seed);
  }
};

void AddCommon(CLI::App* app, CommonOptions* common) {
  app->add_option("--config", common->config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", common->overrides, "Override a config key, key=value")->take_all();
  app->add_option("--seed", common->seed, "Seed for all randomness");
}

// Runs `fn` and tags every non-config failure with `stage`.
template <typename Fn>
auto InStage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

BundleDirectory LoadBundle(const std::string& dir) {
  return InStage("ingest", [&] { return ReadBundleDirectory(dir); });
}

void EnsureDir(const std::string& dir) { fs::create_directories(dir); }

struct OverlapStage {
  std::vector<OverlapResult> overlaps;
  ViewGraph filtered;
  std::vector<ImageId> registered;
};

OverlapStage RunOverlap(const PipelineConfig& config, const BundleDirectory& bundle) {
  return InStage("overlap", [&] {
    if (bundle.stars.empty()) throw std::runtime_error("no star reconstructions");
    for (const auto& star : bundle.stars) star.Validate();
    OverlapStage out;
    out.overlaps = ComputeOverlaps(config, bundle.stars);
    out.filtered = FilterEdges(bundle.graph, out.overlaps, config.min_overlap);
    out.registered = ConfidentComponent(out.filtered, config.min_overlap);
    return out;
  });
}

int Synth(const CommonOptions& common, const std::string& out) {
  const PipelineConfig config = common.Load();
  const BundleDirectory bundle = SimulateBundle(config);
  InStage("write", [&] { WriteBundleDirectory(out, bundle); });
  return 0;
}

int ViewGraphCommand(const CommonOptions& common, const std::string& out) {
  const PipelineConfig config = common.Load();
  const ViewGraph graph = InStage("viewgraph", [&] {
    const SyntheticScene scene = GenerateScene(config.scene);
    return DynamicThresholdConnect(BuildCandidates(scene, config.candidates), config.schedule);
  });
  const GraphStats stats = ComputeGraphStats(graph);
  json j = ViewGraphToJson(graph);
  j["stats"] = {{"radius", stats.radius}, {"fiedler", stats.fiedler}, {"components", stats.num_components}};
  WriteJson(out, j);
  return 0;
}

int OverlapCommand(const CommonOptions& common, const std::string& bundle_dir, const std::string& out) {
  const PipelineConfig config = common.Load();
  const BundleDirectory bundle = LoadBundle(bundle_dir);
  const OverlapStage stage = RunOverlap(config, bundle);
  EnsureDir(out);
  for (const OverlapResult& o : stage.overlaps) {
    WriteJson((fs::path(out) / ("overlap_" + std::to_string(o.star) + ".json")).string(), OverlapToJson(o));
  }
  WriteJson((fs::path(out) / "filtered_viewgraph.json").string(), ViewGraphToJson(stage.filtered));
  WriteJson((fs::path(out) / "registered.json").string(), json(stage.registered));
  return 0;
}

int AverageCommand(const CommonOptions& common, const std::string& bundle_dir, const std::string& out) {
  const PipelineConfig config = common.Load();
  const BundleDirectory bundle = LoadBundle(bundle_dir);
  const OverlapStage stage = RunOverlap(config, bundle);
  const AveragingOutput averaged = InStage(
      "averaging", [&] { return RunAveraging(config, bundle, stage.overlaps, stage.filtered, stage.registered); });
  EnsureDir(out);
  WriteJson((fs::path(out) / "spanning_tree.json").string(), ReconstructionToJson(averaged.spanning_tree));
  WriteJson((fs::path(out) / "averaging.json").string(), ReconstructionToJson(averaged.averaged));
  return 0;
}

int BaCommand(const CommonOptions& common, const std::string& bundle_dir, const std::string& recon_path,
              const std::string& out) {
  const PipelineConfig config = common.Load();
  const BundleDirectory bundle = LoadBundle(bundle_dir);
  GlobalReconstruction recon = InStage("ingest", [&] { return ReconstructionFromJson(ReadJson(recon_path)); });
  const OverlapStage stage = RunOverlap(config, bundle);
  std::vector<Track> tracks = InStage("tracks", [&] {
    auto t = BuildTracks(config, bundle, stage.overlaps, recon);
    if (t.empty()) throw std::runtime_error("no tracks for bundle adjustment");
    return t;
  });
  const BundleAdjustmentReport report = InStage("ba", [&] { return BundleAdjust(&recon, &tracks, config.ba); });
  EnsureDir(out);
  WriteJson((fs::path(out) / "reconstruction.json").string(), ReconstructionToJson(recon));
  WriteJson((fs::path(out) / "tracks.json").string(), TracksToJson(tracks));
  WriteJson((fs::path(out) / "ba.json").string(), BundleReportToJson(report));
  return 0;
}

int PipelineCommand(const CommonOptions& common, const std::string& bundle_dir, const std::string& out) {
  const PipelineConfig config = common.Load();
  const BundleDirectory bundle = bundle_dir.empty() ? SimulateBundle(config) : LoadBundle(bundle_dir);
  const PipelineResult result = RunPipeline(config, bundle);
  InStage("write", [&] { WritePipelineOutputs(out, result); });
  std::cout << EvalReportToJson(result.report).at("auc").dump() << "\n";
  return 0;
}

int EvalCommand(const std::string& estimate_path, const std::string& truth_path, const std::string& graph_path,
                const std::string& out) {
  const json report = InStage("eval", [&] {
    const GlobalReconstruction estimate = ReconstructionFromJson(ReadJson(estimate_path));
    const GlobalReconstruction truth = ReconstructionFromJson(ReadJson(truth_path));
    EvalReport r;
    r.pairs = PairwisePoseErrors(estimate, truth);
    r.auc = ComputeAucTable(r.pairs);
    r.checkpoints["final"] = r.auc;
    r.num_images = static_cast<int>(truth.poses.size());
    r.registered = static_cast<int>(estimate.poses.size());
    if (!graph_path.empty()) r.graph = ComputeGraphStats(ViewGraphFromJson(ReadJson(graph_path)));
    return EvalReportToJson(r);
  });
  if (out.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    WriteJson(out, report);
  }
  return 0;
}

int SampleCommand(const CommonOptions& common, int length, const std::string& out) {
  const PipelineConfig config = common.Load();
  const json windows =
      InStage("sample", [&] { return WindowsToJson(SampleSubsequences(length, config.seed)); });
  if (out.empty()) {
    std::cout << windows.dump(2) << "\n";
  } else {
    WriteJson(out, windows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global structure from motion on star reconstructions"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string out, bundle_dir, recon_path, estimate_path, truth_path, graph_path;
  int length = 0;

  auto* synth = app.add_subcommand("synth", "Simulate a bundle directory");
  AddCommon(synth, &common);
  synth->add_option("--out", out, "Output bundle directory")->required();

  auto* viewgraph = app.add_subcommand("viewgraph", "Build the thresholded view graph of a synthetic scene");
  AddCommon(viewgraph, &common);
  viewgraph->add_option("--out", out, "Output view graph JSON")->required();

  auto* overlap = app.add_subcommand("overlap", "Compute star overlaps and filter the view graph");
  AddCommon(overlap, &common);
  overlap->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  overlap->add_option("--out", out, "Output directory")->required();

  auto* average = app.add_subcommand("average", "Rotation and similarity averaging");
  AddCommon(average, &common);
  average->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  average->add_option("--out", out, "Output directory")->required();

  auto* ba = app.add_subcommand("ba", "Build tracks and run bundle adjustment");
  AddCommon(ba, &common);
  ba->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  ba->add_option("--recon", recon_path, "Initial reconstruction JSON")->required();
  ba->add_option("--out", out, "Output directory")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage end to end");
  AddCommon(pipeline, &common);
  pipeline->add_option("--bundle", bundle_dir, "Bundle directory; simulated when omitted");
  pipeline->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Score a reconstruction against ground truth");
  eval->add_option("--estimate", estimate_path, "Estimated reconstruction JSON")->required();
  eval->add_option("--truth", truth_path, "Ground truth reconstruction JSON")->required();
  eval->add_option("--viewgraph", graph_path, "View graph JSON for radius and Fiedler value");
  eval->add_option("--out", out, "Report JSON; standard output when omitted");

  auto* sample = app.add_subcommand("sample", "Sample subsequence windows");
  AddCommon(sample, &common);
  sample->add_option("--length", length, "Sequence length")->required();
  sample->add_option("--out", out, "Windows JSON; standard output when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (synth->parsed()) return Synth(common, out);
    if (viewgraph->parsed()) return ViewGraphCommand(common, out);
    if (overlap->parsed()) return OverlapCommand(common, bundle_dir, out);
    if (average->parsed()) return AverageCommand(common, bundle_dir, out);
    if (ba->parsed()) return BaCommand(common, bundle_dir, recon_path, out);
    if (pipeline->parsed()) return PipelineCommand(common, bundle_dir, out);
    if (eval->parsed()) return EvalCommand(estimate_path, truth_path, graph_path, out);
    if (sample->parsed()) return SampleCommand(common, length, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "stage " << e.Stage() << " failed: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "stage unknown failed: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
