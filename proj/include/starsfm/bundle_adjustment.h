#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "starsfm/geometry.h"
#include "starsfm/reconstruction.h"

namespace starsfm {

constexpr double kDefaultHuberPx = 1.0;
constexpr double kDefaultArctanPx = 4.0;

// Pixel residual projection(pose, camera, point) - observed together with
// its derivatives. The rotation is perturbed on the left, R <- Exp(d) R,
// and the pose is parameterized by its center, t = -R c.
struct ReprojectionTerm {
  Vec2 residual = Vec2::Zero();
  Eigen::Matrix<double, 2, 3> d_rotation = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Matrix<double, 2, 3> d_center = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Matrix<double, 2, 3> d_point = Eigen::Matrix<double, 2, 3>::Zero();
  Vec2 d_focal = Vec2::Zero();
  // False inside the plane epsilon band, where the term is skipped.
  bool valid = false;
};

ReprojectionTerm EvaluateReprojection(const Pose& pose, const PinholeCamera& camera, const Vec3& point,
                                      const Vec2& observed, double plane_epsilon = kDefaultPlaneEpsilon);

struct BundleAdjustmentOptions {
  RobustLoss track_loss = RobustLoss::Huber(kDefaultHuberPx);
  RobustLoss virtual_loss = RobustLoss::Arctan(kDefaultArctanPx);
  bool refine_focals = true;
  int max_iterations = 100;
  double cost_tolerance = 1e-12;
  double gradient_tolerance = 1e-12;
  // Costs below this are numerically zero and end the solve.
  double absolute_cost_tolerance = 1e-20;
  double initial_damping = 1e-4;
  double plane_epsilon = kDefaultPlaneEpsilon;
  int num_threads = 1;
};

struct BundleAdjustmentReport {
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::string termination;
  // Cost after each accepted step, starting with the initial cost.
  std::vector<double> accepted_costs;
};

// Sum over observations of the class loss of the squared pixel residual.
double BundleAdjustmentCost(const GlobalReconstruction& recon, const std::vector<Track>& tracks,
                            const BundleAdjustmentOptions& options);

// Levenberg-Marquardt over poses, focals and non-virtual points; virtual
// points stay fixed. The lowest-id pose is frozen and the distance between
// the two lowest-id centers is held constant. Every non-virtual track must
// carry a point. Non-virtual points are copied to recon->points.
BundleAdjustmentReport BundleAdjust(GlobalReconstruction* recon, std::vector<Track>* tracks,
                                    const BundleAdjustmentOptions& options = {});

}  // namespace starsfm
