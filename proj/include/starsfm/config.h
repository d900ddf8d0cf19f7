#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "starsfm/averaging.h"
#include "starsfm/bundle_adjustment.h"
#include "starsfm/overlap.h"
#include "starsfm/synthetic.h"
#include "starsfm/tracks.h"
#include "starsfm/view_graph.h"

namespace starsfm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  // Seeds the scene, the simulated local inference, keypoints and virtual
  // track sampling.
  uint64_t seed = 1;
  int threads = 1;

  SceneConfig scene;
  NoiseModel noise;
  CandidateOptions candidates;

  ThresholdSchedule schedule;
  int neighbor_cap = kDefaultNeighborCap;

  double tau = kDefaultReprojectionTau;
  int overlap_stride = kDefaultOverlapStride;
  double min_overlap = kDefaultMinOverlap;

  RotationAveragingOptions rotation;
  SimilarityAveragingOptions similarity;
  bool similarity_variant = false;
  // Scale of the anchor star.
  double anchor_scale = 1.0;

  double snap_radius = kDefaultSnapRadiusPx;
  int pair_budget = kDefaultPairBudget;
  VirtualTrackOptions virtual_tracks;
  bool classical_tracks = true;
  bool feedforward_tracks = true;
  bool use_virtual_tracks = true;
  double min_parallax = kDefaultMinParallax;

  BundleAdjustmentOptions ba;

  bool skip_tracking = false;
  bool skip_aba = false;
  bool timings = false;
};

nlohmann::json ConfigToJson(const PipelineConfig& config);

// Reads a complete config object; throws ConfigError on missing keys, type
// mismatches or out-of-range values.
PipelineConfig ConfigFromJson(const nlohmann::json& j);

// Recursively overlays `overrides` onto `base`; every key must already
// exist in `base` with a compatible type.
void MergeConfig(nlohmann::json* base, const nlohmann::json& overrides, const std::string& prefix = "");

// Applies "dotted.key=value". The value is parsed as JSON when possible and
// taken as a string otherwise.
void ApplyOverride(nlohmann::json* config, const std::string& assignment);

// Defaults, then the optional JSON file, then the overrides, then the seed.
PipelineConfig LoadConfig(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                          std::optional<uint64_t> seed);

}  // namespace starsfm
