#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "starsfm/geometry.h"
#include "starsfm/reconstruction.h"
#include "starsfm/view_graph.h"

namespace starsfm {

constexpr double kDefaultSnapRadiusPx = 1.0;
constexpr int kDefaultPairBudget = 512;
constexpr int kDefaultVirtualSamples = 100;
constexpr double kDefaultGlobalRatio = 0.1;
constexpr double kDefaultMinParallax = 1e-4;

// Feedforward tracks of one star plus the weight of each member image, used
// to pick between competing observations after merging. Images without an
// entry weigh 1.
struct StarTrackSet {
  ImageId star = 0;
  std::vector<Track> tracks;
  std::map<ImageId, double> weights;

  double Weight(ImageId image) const;
};

using KeypointIndex = std::map<ImageId, std::vector<Keypoint>>;

// Moves every observation to its nearest keypoint within beta pixels, merges
// tracks that share a snapped keypoint, and keeps one observation per image
// per merged track (higher star weight first, then smaller star id).
// Output tracks are ordered by their first contributing input track.
std::vector<Track> SnapAndMerge(const std::vector<StarTrackSet>& stars, const KeypointIndex& keypoints,
                                double beta = kDefaultSnapRadiusPx);

// Canonical admission order: longer tracks first, then smaller first image,
// then lexicographic observations.
bool TrackPrecedes(const Track& a, const Track& b);

// Every unordered image pair a track spans.
std::vector<ImagePair> SpannedPairs(const Track& track);

// Classical tracks are admitted unconditionally; feedforward and then
// virtual tracks are admitted while some pair they span holds fewer than
// pair_budget matches. Per-pair counts are written to pair_counts if given.
std::vector<Track> MixTracks(const std::vector<Track>& classical, const std::vector<Track>& feedforward,
                             const std::vector<Track>& virtual_tracks, int pair_budget = kDefaultPairBudget,
                             std::map<ImagePair, int>* pair_counts = nullptr);

struct VirtualTrackOptions {
  int samples = kDefaultVirtualSamples;
  double global_ratio = kDefaultGlobalRatio;
  double plane_epsilon = kDefaultPlaneEpsilon;
  // Jittered retries per grid cell when the sampled depth is invalid.
  int attempts_per_cell = 4;
};

// Samples pixels of the star's center image, lifts them with the center
// depth divided by `scale`, and places the fixed point in the world through
// the center's global pose. Observations come from the star's relative
// poses (virtual-local) or from the global poses (virtual-global).
std::vector<Track> GenerateVirtualTracks(const LocalStarReconstruction& star, const GlobalReconstruction& global,
                                         double scale, const VirtualTrackOptions& options, uint64_t seed);

// DLT triangulation followed by one Gauss-Newton reprojection step. Throws
// when the parallax at the point is below min_parallax.
Vec3 Triangulate(const Track& track, const GlobalReconstruction& recon, double min_parallax = kDefaultMinParallax);

// Triangulates every non-virtual track, dropping tracks that are degenerate,
// reference unregistered images, or lie behind all observing cameras.
std::vector<Track> TriangulateTracks(const std::vector<Track>& tracks, const GlobalReconstruction& recon,
                                     double min_parallax = kDefaultMinParallax);

}  // namespace starsfm
