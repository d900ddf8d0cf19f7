#include "starsfm/metrics.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace starsfm {
namespace {

double SceneScale(const GlobalReconstruction& r) {
  double scale = 0.0;
  for (auto a = r.poses.begin(); a != r.poses.end(); ++a)
    for (auto b = std::next(a); b != r.poses.end(); ++b)
      scale = std::max(scale, (a->second.Center() - b->second.Center()).norm());
  return scale;
}

double AngleBetween(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

}  // namespace

std::vector<PairError> PairwisePoseErrors(const GlobalReconstruction& estimate, const GlobalReconstruction& truth) {
  int common = 0;
  for (const auto& [id, pose] : truth.poses) common += estimate.IsRegistered(id);
  if (common < 2) throw std::invalid_argument("pose errors need at least two commonly registered images");
  const double est_eps = 1e-9 * SceneScale(estimate);
  const double truth_eps = 1e-9 * SceneScale(truth);
  std::vector<PairError> errors;
  for (auto a = truth.poses.begin(); a != truth.poses.end(); ++a) {
    for (auto b = std::next(a); b != truth.poses.end(); ++b) {
      PairError e{a->first, b->first, M_PI, M_PI, M_PI};
      if (estimate.IsRegistered(e.i) && estimate.IsRegistered(e.j)) {
        const Pose& ei = estimate.poses.at(e.i);
        const Pose& ej = estimate.poses.at(e.j);
        const Pose rel_truth = RelativePose(a->second, b->second);
        const Pose rel_est = RelativePose(ei, ej);
        e.rotation = GeodesicDistance(rel_est.rotation, rel_truth.rotation);
        const bool small_est = rel_est.translation.norm() < est_eps;
        const bool small_truth = rel_truth.translation.norm() < truth_eps;
        if (small_est && small_truth) {
          e.translation = 0.0;
        } else if (small_est != small_truth) {
          e.translation = M_PI;
        } else {
          // The direction is compared in both cameras' frames so the error
          // does not depend on pair order.
          const Pose rev_truth = RelativePose(b->second, a->second);
          const Pose rev_est = RelativePose(ej, ei);
          e.translation = std::max(AngleBetween(rel_est.translation, rel_truth.translation),
                                   AngleBetween(rev_est.translation, rev_truth.translation));
        }
        e.error = std::max(e.rotation, e.translation);
      }
      errors.push_back(e);
    }
  }
  return errors;
}

double AucAt(const std::vector<double>& errors_deg, double threshold_deg) {
  if (errors_deg.empty()) throw std::invalid_argument("AUC needs at least one error");
  if (!(threshold_deg > 0.0)) throw std::invalid_argument("AUC threshold must be positive");
  // Each error e contributes recall 1 on (e, X], i.e. max(0, X - e).
  double area = 0.0;
  for (double e : errors_deg) area += std::max(0.0, threshold_deg - e);
  return 100.0 * area / (threshold_deg * static_cast<double>(errors_deg.size()));
}

std::vector<double> ErrorsInDegrees(const std::vector<PairError>& errors) {
  std::vector<double> deg;
  deg.reserve(errors.size());
  for (const PairError& e : errors) deg.push_back(e.error * 180.0 / M_PI);
  return deg;
}

}  // namespace starsfm
