#pragma once

#include <map>
#include <vector>

#include "starsfm/geometry.h"
#include "starsfm/overlap.h"
#include "starsfm/reconstruction.h"
#include "starsfm/view_graph.h"

namespace starsfm {

// Relative motion from star `star` between members i and j:
//   rotation    = R_j R_i^T               (star gauge cancels)
//   translation = t_j - rotation * t_i    (star units)
struct RelativeMeasurement {
  int star = 0;
  ImageId i = 0;
  ImageId j = 0;
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  double weight = 1.0;
};

// Every member pair of every star that is an edge of `graph`, weighted by
// the star's own transitive overlap. `overlaps` must be aligned with `stars`.
std::vector<RelativeMeasurement> ExtractMeasurements(const std::vector<LocalStarReconstruction>& stars,
                                                     const std::vector<OverlapResult>& overlaps,
                                                     const ViewGraph& graph);

double Median(std::vector<double> values);

// Median focal per physical camera over every observation in every star.
std::map<CameraId, double> AverageIntrinsics(const std::vector<LocalStarReconstruction>& stars,
                                             const std::map<ImageId, CameraId>& camera_of_image);

// ---------------------------------------------------------------------------
// Rotation averaging: min_R sum rho(|w * log(R_ij^T R_j R_i^T)|^2).
// The lowest image id is fixed to identity.

// Huber scale in radians. The Huber optimum moves away from the truth by an
// amount proportional to this scale for every gross outlier edge, so it is
// kept small.
constexpr double kDefaultRotationHuber = 1e-3;

struct RotationAveragingOptions {
  RobustLoss loss = RobustLoss::Huber(kDefaultRotationHuber);
  int max_iterations = 200;
  double step_tolerance = 1e-10;
  int num_threads = 1;
};

struct RotationAveragingResult {
  std::map<ImageId, Rotation> rotations;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
};

// Chains relative rotations along the maximum-weight spanning tree.
std::map<ImageId, Rotation> InitializeRotationsSpanningTree(
    const std::vector<RelativeMeasurement>& measurements);

// Objective value; optionally the gradient with respect to left tangent
// perturbations R_k <- exp(delta_k) R_k.
double RotationAveragingCost(const std::vector<RelativeMeasurement>& measurements,
                             const std::map<ImageId, Rotation>& rotations, const RobustLoss& loss,
                             std::map<ImageId, Vec3>* gradient = nullptr);

RotationAveragingResult AverageRotations(const std::vector<RelativeMeasurement>& measurements,
                                         const RotationAveragingOptions& options = {});

// ---------------------------------------------------------------------------
// Similarity averaging: min_{c,s} sum rho(|w * (R_j^T t_ij - s_l (c_i - c_j))|^2)
// with the lowest star anchored at s = 1 and the lowest image at the origin.
// The variant instead minimizes |w * (s~_l R_j^T t_ij - (c_i - c_j))|^2.

struct SimilarityAveragingOptions {
  LossKind loss = LossKind::kHuber;
  // Huber / arctan scale as a fraction of the median initial baseline.
  double loss_baseline_fraction = 0.01;
  int max_iterations = 200;
  double cost_tolerance = 1e-12;
  int num_threads = 1;
};

struct SimilarityAveragingResult {
  std::map<ImageId, Vec3> centers;
  // s_l for the standard form, s~_l for the variant.
  std::map<int, double> scales;
  int anchor_star = 0;
  double loss_scale = 0.0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
};

struct SimilarityInitialization {
  std::map<ImageId, Vec3> centers;
  std::map<int, double> scales;
};

// Maximum spanning tree traversal chaining centers; each star's scale is
// estimated from the first placed edge it contributes.
SimilarityInitialization InitializeCentersSpanningTree(
    const std::map<ImageId, Rotation>& rotations, const std::vector<RelativeMeasurement>& measurements);

// Gradient with respect to centers and log-scales.
double SimilarityAveragingCost(const std::map<ImageId, Rotation>& rotations,
                               const std::vector<RelativeMeasurement>& measurements,
                               const std::map<ImageId, Vec3>& centers, const std::map<int, double>& scales,
                               const RobustLoss& loss, std::map<ImageId, Vec3>* center_gradient = nullptr,
                               std::map<int, double>* log_scale_gradient = nullptr);

double SimilarityVariantCost(const std::map<ImageId, Rotation>& rotations,
                             const std::vector<RelativeMeasurement>& measurements,
                             const std::map<ImageId, Vec3>& centers, const std::map<int, double>& scales,
                             const RobustLoss& loss, std::map<ImageId, Vec3>* center_gradient = nullptr,
                             std::map<int, double>* scale_gradient = nullptr);

SimilarityAveragingResult AverageSimilarity(const std::map<ImageId, Rotation>& rotations,
                                            const std::vector<RelativeMeasurement>& measurements,
                                            const SimilarityAveragingOptions& options = {});

SimilarityAveragingResult AverageSimilarityVariant(const std::map<ImageId, Rotation>& rotations,
                                                   const std::vector<RelativeMeasurement>& measurements,
                                                   const SimilarityAveragingOptions& options = {});

// D~ = D / s_l for every member raster of every star; invalid stays 0.
std::vector<std::vector<DepthMap>> RescaleDepths(const std::vector<LocalStarReconstruction>& stars,
                                                 const std::map<int, double>& scales);

}  // namespace starsfm
