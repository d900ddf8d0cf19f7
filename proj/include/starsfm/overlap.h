#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "starsfm/reconstruction.h"
#include "starsfm/view_graph.h"

namespace starsfm {

constexpr double kDefaultReprojectionTau = 3.0;
constexpr int kDefaultOverlapStride = 4;
constexpr double kDefaultMinOverlap = 0.05;

struct OverlapResult {
  ImageId star = 0;
  double tau = kDefaultReprojectionTau;
  std::vector<ImageId> members;
  // Directed raw ratios raw(i, j) over member indices.
  Eigen::MatrixXd raw;
  // Max-product closure of min(raw, raw^T).
  Eigen::MatrixXd transitive;

  // Transitive ratio for a member pair, or nullopt if not both members.
  std::optional<double> Transitive(ImageId i, ImageId j) const;
};

// Forward-backward reprojection error for one pixel of image i through the
// depth of image j. nullopt when the source depth is invalid, the forward
// projection leaves j or falls behind it, or j's depth there is invalid.
std::optional<double> ForwardBackwardError(const LocalStarReconstruction& star, ImageId i, ImageId j,
                                           const Vec2& pixel);

// Fraction of grid pixels (every `stride`-th pixel center) whose error is
// valid and below tau; invalid pixels count as failures.
double RawOverlap(const LocalStarReconstruction& star, ImageId i, ImageId j, double tau, int stride);

// o(i, j) = max over paths of the product of edge ratios.
Eigen::MatrixXd TransitiveOverlap(const Eigen::MatrixXd& raw);

OverlapResult ComputeStarOverlap(const LocalStarReconstruction& star, double tau = kDefaultReprojectionTau,
                                 int stride = kDefaultOverlapStride);

// Per view-graph edge: max over stars containing both endpoints of the
// transitive overlap. Edges covered by no star get 0.
std::map<ImagePair, double> EdgeOverlaps(const ViewGraph& graph, const std::vector<OverlapResult>& overlaps);

// Drops edges whose overlap is below min_overlap in ascending order, unless
// the removal would disconnect the graph. Survivors carry their overlap.
ViewGraph FilterEdges(const ViewGraph& graph, const std::vector<OverlapResult>& overlaps,
                      double min_overlap = kDefaultMinOverlap);

}  // namespace starsfm
