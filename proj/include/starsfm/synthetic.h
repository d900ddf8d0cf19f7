#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "starsfm/geometry.h"
#include "starsfm/reconstruction.h"
#include "starsfm/view_graph.h"

namespace starsfm {

// Finite planar rectangle: center + a * axis_u + b * axis_v, |a| <= half_u,
// |b| <= half_v. Axes are unit length and orthogonal.
struct Rectangle {
  Vec3 center = Vec3::Zero();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
  double half_u = 1.0;
  double half_v = 1.0;
  int room = 0;

  Vec3 Normal() const { return axis_u.cross(axis_v); }
  // Ray parameter of the hit, or false when the ray misses.
  bool Intersect(const Vec3& origin, const Vec3& direction, double* t) const;
};

enum class Trajectory { kLoop, kCorridor, kCluster, kTwoRooms };

std::string TrajectoryName(Trajectory t);
Trajectory ParseTrajectory(const std::string& name);

struct SceneConfig {
  Trajectory trajectory = Trajectory::kLoop;
  int num_cameras = 20;
  int width = 320;
  int height = 240;
  double focal = 280.0;
  uint64_t seed = 1;
  // All images share one physical camera when true; otherwise one each.
  bool shared_camera = false;
  // Spacing of texture feature points on every surface.
  double feature_spacing = 0.25;
  // Corridor: camera spacing along the wall.
  double corridor_spacing = 0.5;
  // Two rooms: add a hallway with doorway cameras linking the rooms.
  bool bridge = false;
  // Two rooms: number of cross-room pairs marked as doppelgangers.
  int num_doppelgangers = 4;
};

struct SyntheticScene {
  SceneConfig config;
  std::vector<Pose> poses;  // indexed by image id
  std::vector<CameraId> camera_of_image;
  std::map<CameraId, double> focals;
  std::vector<Rectangle> surfaces;
  std::vector<Vec3> points;
  std::vector<int> room_of_image;
  std::set<ImagePair> doppelgangers;
  // Per image: exact projections of visible, isolated feature points as
  // (point id, pixel).
  std::vector<std::vector<std::pair<int, Vec2>>> features;
  std::shared_ptr<const std::vector<DepthMap>> depths;

  int NumImages() const { return static_cast<int>(poses.size()); }
  PinholeCamera Camera(ImageId id) const;
  GlobalReconstruction Truth() const;
  // Largest distance between two camera centers.
  double Diameter() const;
  const DepthMap& TruthDepth(ImageId id) const { return depths->at(id); }

  // Builds the derived caches (depths, features) for hand-constructed scenes.
  void Finalize();
};

// Deterministic for a fixed config (including seed).
SyntheticScene GenerateScene(const SceneConfig& config);

// Nearest positive hit along a ray; +inf when nothing is hit.
double CastRay(const std::vector<Rectangle>& surfaces, const Vec3& origin, const Vec3& direction);

DepthMap RenderDepth(const SyntheticScene& scene, ImageId id);

// Fraction of grid pixels of image i whose surface point is visible in j.
double CovisibleFraction(const SyntheticScene& scene, ImageId i, ImageId j, int stride = 8);

// Doppelganger band for simulated retrieval scores.
constexpr double kDoppelgangerScoreMin = 0.3;
constexpr double kDoppelgangerScoreMax = 0.6;

// sqrt of the symmetric co-visible fraction; doppelganger pairs instead get
// a seeded score in [0.3, 0.6].
double SimulateSimilarity(const SyntheticScene& scene, ImageId i, ImageId j);

struct CandidateOptions {
  // Index window (ring-aware for loops). Used when budget == 0.
  int window = 4;
  // Retrieval budget: top-c most similar images per image.
  int budget = 0;
};

// Doppelganger pairs are always retrieved.
CandidateScores BuildCandidates(const SyntheticScene& scene, const CandidateOptions& options);

// Candidate pairs with positive true co-visibility.
ViewGraph GroundTruthViewGraph(const SyntheticScene& scene, const CandidateOptions& options);

struct NoiseModel {
  // Mean geodesic angle of the per-member rotation perturbation, degrees.
  double rotation_deg = 0.0;
  // Per-axis center noise as a fraction of the star's median baseline.
  double center_fraction = 0.0;
  // Per-pixel multiplicative depth noise.
  double depth_relative = 0.0;
  double focal_relative = 0.0;
  // Per-star gauge scale drawn log-uniformly from [scale_min, scale_max].
  double scale_min = 1.0;
  double scale_max = 1.0;
  // Probability that one non-center member gets a random pose.
  double outlier_probability = 0.0;
  // Snap track observations to pixel centers, plus optional jitter.
  bool quantize_tracks = false;
  double track_jitter_px = 0.0;
  // Keypoint localization noise for the classical detector.
  double keypoint_px = 0.0;
  int max_tracks_per_star = 200;

  static NoiseModel Zero() { return NoiseModel{}; }
  void Validate() const;
};

// Feedforward stand-in: ground truth mapped through a random similarity
// gauge, then perturbed per the noise model.
LocalStarReconstruction SimulateLocalStar(const SyntheticScene& scene, const StarGraph& star,
                                          const NoiseModel& noise, uint64_t seed);

std::vector<Keypoint> ExtractKeypoints(const SyntheticScene& scene, ImageId id, double noise_px,
                                       uint64_t seed);

// Classical tracks: a feature point's keypoints, split into components over
// the view graph edges between the observing images.
std::vector<Track> BuildClassicalTracks(const std::vector<std::vector<Keypoint>>& keypoints,
                                        const ViewGraph& graph);

uint64_t MixSeed(uint64_t seed, uint64_t a, uint64_t b = 0);

}  // namespace starsfm
