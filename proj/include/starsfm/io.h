#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "starsfm/bundle_adjustment.h"
#include "starsfm/overlap.h"
#include "starsfm/reconstruction.h"
#include "starsfm/sampling.h"
#include "starsfm/tracks.h"
#include "starsfm/view_graph.h"

namespace starsfm {

using nlohmann::json;

// Parse failures and schema violations.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json ReadJson(const std::string& path);
// Two-space indented with a trailing newline.
void WriteJson(const std::string& path, const json& j);

// {"vertices": [...], "edges": [{"i", "j", "alpha", "overlap"}]}
json ViewGraphToJson(const ViewGraph& graph);
ViewGraph ViewGraphFromJson(const json& j);

// {"star", "tau", "raw", "transitive"}; matrices as row lists over the
// sorted members, which are listed under "members".
json OverlapToJson(const OverlapResult& overlap);
OverlapResult OverlapFromJson(const json& j);

// [{"class", "point": [x, y, z] | null, "obs": [{"img", "u", "v"}]}]
json TracksToJson(const std::vector<Track>& tracks);
std::vector<Track> TracksFromJson(const json& j);

json BundleReportToJson(const BundleAdjustmentReport& report);

// {"images": [{"id", "camera", "quaternion": [w, x, y, z], "center",
//   "translation", "width", "height"}], "cameras": [{"id", "focal"}],
//  "stars": [{"id", "scale"}], "points": [[x, y, z]]}
json ReconstructionToJson(const GlobalReconstruction& recon);
GlobalReconstruction ReconstructionFromJson(const json& j);

json WindowsToJson(const std::vector<SubsequenceWindow>& windows);

// {"images": [{"img", "keypoints": [[u, v]]}]}; keypoint ids are list
// positions.
json KeypointsToJson(const KeypointIndex& keypoints);
KeypointIndex KeypointsFromJson(const json& j);

// star_<l>/meta.json, star_<l>/depth_<i>.dpth per member, star_<l>/tracks.json.
void WriteStarBundle(const std::string& root, const LocalStarReconstruction& star,
                     const std::map<ImageId, CameraId>& camera_of_image);
LocalStarReconstruction ReadStarBundle(const std::string& star_dir, std::map<ImageId, CameraId>* camera_of_image);

// Everything the pipeline ingests: view graph, star bundles, and optional
// keypoints, classical tracks and ground truth.
struct BundleDirectory {
  ViewGraph graph;
  std::vector<LocalStarReconstruction> stars;
  std::map<ImageId, CameraId> camera_of_image;
  KeypointIndex keypoints;
  std::vector<Track> classical;
  std::optional<GlobalReconstruction> truth;
};

// Brings an in-memory bundle to exactly what a write/read round trip
// yields: f32 depths and no provenance ids.
void CanonicalizeBundle(BundleDirectory* bundle);

// Root files: viewgraph.json, keypoints.json, tracks.json, truth.json.
void WriteBundleDirectory(const std::string& root, const BundleDirectory& bundle);
BundleDirectory ReadBundleDirectory(const std::string& root);

}  // namespace starsfm
