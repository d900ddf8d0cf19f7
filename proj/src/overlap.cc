#include "starsfm/overlap.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace starsfm {

std::optional<double> OverlapResult::Transitive(ImageId i, ImageId j) const {
  auto ia = std::lower_bound(members.begin(), members.end(), i);
  auto ja = std::lower_bound(members.begin(), members.end(), j);
  if (ia == members.end() || *ia != i || ja == members.end() || *ja != j) return std::nullopt;
  return transitive(ia - members.begin(), ja - members.begin());
}

namespace {

// Cameras and relative transforms of one ordered member pair.
struct PairChain {
  PairChain(const LocalStarReconstruction& star, int a, int b)
      : cam_i(star.Camera(a)),
        cam_j(star.Camera(b)),
        depth_i(star.depths[a]),
        depth_j(star.depths[b]),
        rel_ij(RelativePose(star.poses[a], star.poses[b])),
        rel_ji(rel_ij.Inverse()) {}

  std::optional<double> Error(const Vec2& pixel) const {
    double d_i;
    if (!depth_i.Sample(pixel, &d_i)) return std::nullopt;
    const Vec3 x_i = cam_i.Unproject(pixel, d_i);
    const Projection forward = cam_j.Project(rel_ij.Apply(x_i));
    if (!forward.valid || !cam_j.InBounds(forward.pixel)) return std::nullopt;
    double d_j;
    if (!depth_j.Sample(forward.pixel, &d_j)) return std::nullopt;
    const Vec3 x_j = cam_j.Unproject(forward.pixel, d_j);
    // The backward lift uses the inverse transform (j -> i).
    const Projection backward = cam_i.Project(rel_ji.Apply(x_j));
    if (!backward.valid) return std::nullopt;
    return (pixel - backward.pixel).norm();
  }

  PinholeCamera cam_i;
  PinholeCamera cam_j;
  const DepthMap& depth_i;
  const DepthMap& depth_j;
  Pose rel_ij;
  Pose rel_ji;
};

int MemberIndex(const LocalStarReconstruction& star, ImageId id) {
  const int index = star.IndexOf(id);
  if (index < 0) throw std::invalid_argument("image " + std::to_string(id) + " is not a star member");
  return index;
}

double RawOverlapByIndex(const LocalStarReconstruction& star, int a, int b, double tau, int stride) {
  if (a == b) return 1.0;
  const DepthMap& depth = star.depths[a];
  const PairChain chain(star, a, b);
  int total = 0;
  int passed = 0;
  for (int y = 0; y < depth.Height(); y += stride) {
    for (int x = 0; x < depth.Width(); x += stride) {
      ++total;
      const auto err = chain.Error(Vec2(x + 0.5, y + 0.5));
      if (err && *err < tau) ++passed;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(passed) / total;
}

}  // namespace

std::optional<double> ForwardBackwardError(const LocalStarReconstruction& star, ImageId i, ImageId j,
                                           const Vec2& pixel) {
  return PairChain(star, MemberIndex(star, i), MemberIndex(star, j)).Error(pixel);
}

double RawOverlap(const LocalStarReconstruction& star, ImageId i, ImageId j, double tau, int stride) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  return RawOverlapByIndex(star, MemberIndex(star, i), MemberIndex(star, j), tau, stride);
}

Eigen::MatrixXd TransitiveOverlap(const Eigen::MatrixXd& raw) {
  if (raw.rows() != raw.cols()) throw std::invalid_argument("overlap matrix must be square");
  const Eigen::Index n = raw.rows();
  Eigen::MatrixXd best = raw;
  for (Eigen::Index i = 0; i < n; ++i) best(i, i) = 1.0;
  // Max-product Floyd-Warshall; with weights in [0, 1] this equals the best
  // simple path.
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double via = best(i, k);
      if (via <= 0.0) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double candidate = via * best(k, j);
        if (candidate > best(i, j)) best(i, j) = candidate;
      }
    }
  }
  return best;
}

OverlapResult ComputeStarOverlap(const LocalStarReconstruction& star, double tau, int stride) {
  star.Validate();
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  const int n = static_cast<int>(star.members.size());
  OverlapResult result;
  result.star = star.center;
  result.tau = tau;
  result.members = star.members;
  result.raw = Eigen::MatrixXd::Identity(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (a != b) result.raw(a, b) = RawOverlapByIndex(star, a, b, tau, stride);
    }
  }
  const Eigen::MatrixXd symmetric = result.raw.cwiseMin(result.raw.transpose());
  result.transitive = TransitiveOverlap(symmetric);
  return result;
}

std::map<ImagePair, double> EdgeOverlaps(const ViewGraph& graph, const std::vector<OverlapResult>& overlaps) {
  std::map<ImagePair, double> weights;
  for (const auto& [pair, data] : graph.Edges()) weights[pair] = 0.0;
  for (const OverlapResult& result : overlaps) {
    const int n = static_cast<int>(result.members.size());
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        auto it = weights.find(MakePair(result.members[a], result.members[b]));
        if (it == weights.end()) continue;
        const double o = std::min(result.transitive(a, b), result.transitive(b, a));
        it->second = std::max(it->second, o);
      }
    }
  }
  return weights;
}

ViewGraph FilterEdges(const ViewGraph& graph, const std::vector<OverlapResult>& overlaps, double min_overlap) {
  if (!graph.IsConnected()) throw std::invalid_argument("edge filtering requires a connected view graph");
  const auto weights = EdgeOverlaps(graph, overlaps);
  ViewGraph filtered = graph;
  for (const auto& [pair, o] : weights) filtered.MutableEdge(pair.first, pair.second).overlap = o;

  std::vector<std::pair<double, ImagePair>> order;
  for (const auto& [pair, o] : weights) {
    if (o < min_overlap) order.emplace_back(o, pair);
  }
  std::sort(order.begin(), order.end());
  for (const auto& [o, pair] : order) {
    const EdgeData data = filtered.Edge(pair.first, pair.second);
    filtered.RemoveEdge(pair.first, pair.second);
    if (!filtered.IsConnected()) filtered.AddEdge(pair.first, pair.second, data);
  }
  if (!filtered.IsConnected()) throw std::logic_error("edge filtering disconnected the view graph");
  return filtered;
}

}  // namespace starsfm
