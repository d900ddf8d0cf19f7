#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "starsfm/averaging.h"
#include "starsfm/bundle_adjustment.h"
#include "starsfm/config.h"
#include "starsfm/io.h"
#include "starsfm/metrics.h"
#include "starsfm/overlap.h"
#include "starsfm/synthetic.h"
#include "starsfm/view_graph.h"

namespace starsfm {

// A failure inside one pipeline stage, tagged with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& Stage() const { return stage_; }

 private:
  std::string stage_;
};

// AUC per threshold keyed "1", "3", ... "30".
using AucTable = std::map<std::string, double>;

AucTable ComputeAucTable(const std::vector<PairError>& errors);

struct EvalReport {
  AucTable auc;
  // Per checkpoint: "spanning_tree", "averaging", "final".
  std::map<std::string, AucTable> checkpoints;
  std::vector<PairError> pairs;
  GraphStats graph;
  int num_images = 0;
  int registered = 0;
  std::map<std::string, double> timings;
};

// {"auc", "radius", "fiedler", "components", "num_images", "registered",
//  "checkpoints", "pairs", "timings"}. Angles in "pairs" are radians.
nlohmann::json EvalReportToJson(const EvalReport& report);

// Synthetic scene, retrieval scores, thresholded view graph, star
// decomposition, simulated local inference, keypoints, classical tracks and
// ground truth. The result is canonical: writing and reading it back yields
// the same bundle bit for bit.
BundleDirectory SimulateBundle(const PipelineConfig& config, SyntheticScene* scene = nullptr);

struct PipelineResult {
  std::vector<OverlapResult> overlaps;
  // View graph after overlap filtering.
  ViewGraph filtered;
  // Largest component of the edges whose overlap reaches min_overlap.
  std::vector<ImageId> registered;
  GlobalReconstruction spanning_tree;
  GlobalReconstruction averaging;
  GlobalReconstruction final_recon;
  std::vector<Track> tracks;
  std::optional<BundleAdjustmentReport> ba;
  EvalReport report;
};

// Overlap, averaging, tracks, bundle adjustment and evaluation on an
// ingested or simulated bundle. Throws StageError.
PipelineResult RunPipeline(const PipelineConfig& config, const BundleDirectory& bundle);

// Individual stages, shared by the CLI subcommands.
std::vector<OverlapResult> ComputeOverlaps(const PipelineConfig& config,
                                           const std::vector<LocalStarReconstruction>& stars);
std::vector<ImageId> ConfidentComponent(const ViewGraph& filtered, double min_overlap);

struct AveragingOutput {
  GlobalReconstruction spanning_tree;
  GlobalReconstruction averaged;
};
AveragingOutput RunAveraging(const PipelineConfig& config, const BundleDirectory& bundle,
                             const std::vector<OverlapResult>& overlaps, const ViewGraph& filtered,
                             const std::vector<ImageId>& registered);

// Snapped feedforward, classical and virtual tracks, mixed and triangulated
// against `recon`.
std::vector<Track> BuildTracks(const PipelineConfig& config, const BundleDirectory& bundle,
                               const std::vector<OverlapResult>& overlaps, const GlobalReconstruction& recon);

// Writes spanning_tree.json, averaging.json, reconstruction.json,
// tracks.json, ba.json (when bundle adjustment ran) and report.json.
void WritePipelineOutputs(const std::string& dir, const PipelineResult& result);

// Similarity from estimate to truth camera centers over common images.
Similarity AlignCenters(const GlobalReconstruction& estimate, const GlobalReconstruction& truth);

}  // namespace starsfm
