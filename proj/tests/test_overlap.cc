#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "starsfm/overlap.h"
#include "starsfm/synthetic.h"

namespace starsfm {
namespace {

constexpr int kW = 64;
constexpr int kH = 48;
constexpr double kF = 60.0;

SyntheticScene Scene(const std::vector<Vec3>& centers, std::vector<Rectangle> extra = {}) {
  SyntheticScene scene;
  scene.config.width = kW;
  scene.config.height = kH;
  scene.config.focal = kF;
  scene.surfaces.push_back(Rectangle{Vec3(0, 0, 4), Vec3::UnitX(), Vec3::UnitY(), 100.0, 100.0, 0});
  for (const Rectangle& r : extra) scene.surfaces.push_back(r);
  for (size_t k = 0; k < centers.size(); ++k) {
    scene.poses.push_back(Pose::FromCenter(Rotation(), centers[k]));
    scene.camera_of_image.push_back(static_cast<int>(k));
    scene.focals[static_cast<int>(k)] = kF;
    scene.room_of_image.push_back(0);
  }
  scene.Finalize();
  return scene;
}

LocalStarReconstruction ExactStar(const SyntheticScene& scene) {
  LocalStarReconstruction star;
  star.center = 0;
  for (int i = 0; i < scene.NumImages(); ++i) {
    star.members.push_back(i);
    star.poses.push_back(scene.poses[i]);
    star.focals.push_back(kF);
    star.depths.push_back(scene.TruthDepth(i));
  }
  return star;
}

// Exhaustive simple-path enumeration.
double BestPath(const Eigen::MatrixXd& raw, int from, int to) {
  const int n = static_cast<int>(raw.rows());
  if (from == to) return 1.0;
  double best = 0.0;
  std::vector<bool> used(n, false);
  std::function<void(int, double)> dfs = [&](int u, double product) {
    if (u == to) {
      best = std::max(best, product);
      return;
    }
    used[u] = true;
    for (int v = 0; v < n; ++v)
      if (!used[v] && v != u) dfs(v, product * raw(u, v));
    used[u] = false;
  };
  dfs(from, 1.0);
  return best;
}

TEST(ForwardBackward, ExactDataHasNoError) {
  const SyntheticScene scene = Scene({Vec3(0, 0, 0), Vec3(0.4, 0.1, 0.2)});
  const LocalStarReconstruction star = ExactStar(scene);
  int valid = 0;
  for (int y = 0; y < kH; y += 3)
    for (int x = 0; x < kW; x += 3) {
      const auto e = ForwardBackwardError(star, 0, 1, Vec2(x + 0.5, y + 0.5));
      if (!e) continue;
      ++valid;
      EXPECT_LE(*e, 1e-6);
    }
  EXPECT_GT(valid, 100);
}

TEST(ForwardBackward, DepthScaleErrorGrowsWithBaseline) {
  std::vector<Vec3> centers{Vec3::Zero()};
  for (double b : {0.1, 0.2, 0.4, 0.8}) centers.push_back(Vec3(b, 0, 0));
  const SyntheticScene scene = Scene(centers);
  LocalStarReconstruction star = ExactStar(scene);
  for (size_t k = 1; k < star.depths.size(); ++k)
    for (double& v : star.depths[k].MutableValues()) v *= 1.05;
  double previous = 0.0;
  for (int j = 1; j <= 4; ++j) {
    const auto e = ForwardBackwardError(star, 0, j, Vec2(20.5, 24.5));
    ASSERT_TRUE(e.has_value());
    EXPECT_GT(*e, previous);
    previous = *e;
  }
}

TEST(ForwardBackward, OcclusionGivesLargeError) {
  const Rectangle occluder{Vec3(1.0, 0, 1.0), Vec3::UnitX(), Vec3::UnitY(), 0.4, 0.2, 0};
  const SyntheticScene scene = Scene({Vec3::Zero(), Vec3(1.0, 0, 0)}, {occluder});
  const LocalStarReconstruction star = ExactStar(scene);
  // The occluder is outside camera 0's view.
  EXPECT_NEAR(star.depths[0].At(kW / 2, kH / 2), 4.0, 1e-9);
  const auto e = ForwardBackwardError(star, 0, 1, Vec2(kW / 2 + 0.5, kH / 2 + 0.5));
  ASSERT_TRUE(e.has_value());
  EXPECT_GT(*e, 3.0);
}

TEST(ForwardBackward, InvalidCases) {
  const SyntheticScene scene = Scene({Vec3::Zero(), Vec3(3.0, 0, 0)});
  LocalStarReconstruction star = ExactStar(scene);
  // Left edge of image 0 maps outside image 1.
  EXPECT_FALSE(ForwardBackwardError(star, 0, 1, Vec2(0.5, 24.5)).has_value());
  star.depths[0].Set(40, 24, 0.0);
  EXPECT_FALSE(ForwardBackwardError(star, 0, 1, Vec2(40.5, 24.5)).has_value());
  EXPECT_THROW(ForwardBackwardError(star, 0, 7, Vec2(1, 1)), std::invalid_argument);
}

TEST(RawOverlap, Examples) {
  const SyntheticScene scene = Scene({Vec3::Zero(), Vec3(0, 0, 0), Vec3(100.0, 0, 0)});
  const LocalStarReconstruction star = ExactStar(scene);
  EXPECT_EQ(RawOverlap(star, 0, 0, 3.0, 4), 1.0);
  EXPECT_EQ(RawOverlap(star, 0, 1, 3.0, 4), 1.0);
  EXPECT_EQ(RawOverlap(star, 0, 2, 3.0, 4), 0.0);
  EXPECT_THROW(RawOverlap(star, 0, 1, 0.0, 4), std::invalid_argument);
  EXPECT_THROW(RawOverlap(star, 0, 1, 3.0, 0), std::invalid_argument);
}

TEST(RawOverlap, HalfOverlapMatchesFrustumIntersection) {
  // Shift so the views overlap by half the image width at the plane.
  const double shift = 0.5 * kW * 4.0 / kF;
  const SyntheticScene scene = Scene({Vec3::Zero(), Vec3(shift, 0, 0)});
  const LocalStarReconstruction star = ExactStar(scene);
  const double expected = (kW - shift * kF / 4.0) / kW;
  for (int stride : {1, 2, 4}) {
    EXPECT_NEAR(RawOverlap(star, 0, 1, 3.0, stride), expected, 2.0 * stride / kW) << stride;
  }
}

TEST(RawOverlap, GaugeInvariant) {
  const SyntheticScene scene = Scene({Vec3::Zero(), Vec3(0.5, 0.2, 0.1), Vec3(-0.4, 0.3, 0.3)});
  const LocalStarReconstruction star = ExactStar(scene);
  const Similarity g{Rotation::Exp(Vec3(0.3, -1.2, 0.7)), Vec3(4, -2, 9), 3.7};
  LocalStarReconstruction moved = star;
  for (size_t a = 0; a < moved.poses.size(); ++a) {
    moved.poses[a] = g.TransformPose(star.poses[a]);
    for (double& v : moved.depths[a].MutableValues()) v *= g.scale;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_NEAR(RawOverlap(star, i, j, 1.0, 2), RawOverlap(moved, i, j, 1.0, 2), 1e-9);
}

TEST(TransitiveOverlap, Examples) {
  Eigen::MatrixXd raw(3, 3);
  raw << 1, 0.5, 0.2, 0.5, 1, 0.5, 0.2, 0.5, 1;
  EXPECT_DOUBLE_EQ(TransitiveOverlap(raw)(0, 2), 0.25);
  raw << 1, 0.9, 0.9, 0.9, 1, 0.9, 0.9, 0.9, 1;
  EXPECT_DOUBLE_EQ(TransitiveOverlap(raw)(0, 2), 0.9);
  raw(1, 1) = 0.3;
  EXPECT_EQ(TransitiveOverlap(raw)(1, 1), 1.0);
}

TEST(TransitiveOverlap, MatchesPathEnumerationAndIsIdempotent) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 5;
    Eigen::MatrixXd raw(n, n);
    for (int i = 0; i < n; ++i) {
      raw(i, i) = 1.0;
      for (int j = i + 1; j < n; ++j) raw(i, j) = raw(j, i) = u(rng) < 0.2 ? 0.0 : u(rng);
    }
    const Eigen::MatrixXd o = TransitiveOverlap(raw);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        EXPECT_NEAR(o(i, j), BestPath(raw, i, j), 1e-12);
        EXPECT_GE(o(i, j), raw(i, j));
      }
    EXPECT_LT((TransitiveOverlap(o) - o).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(ComputeStarOverlap, SymmetricClosure) {
  const SyntheticScene scene = Scene({Vec3::Zero(), Vec3(0.6, 0, 0), Vec3(1.2, 0, 0)});
  const OverlapResult r = ComputeStarOverlap(ExactStar(scene));
  EXPECT_EQ(r.raw.rows(), 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(r.raw(i, i), 1.0);
    for (int j = 0; j < 3; ++j) {
      EXPECT_EQ(r.transitive(i, j), r.transitive(j, i));
      EXPECT_GE(r.raw(i, j), 0.0);
      EXPECT_LE(r.raw(i, j), 1.0);
    }
  }
  EXPECT_EQ(*r.Transitive(0, 2), r.transitive(0, 2));
  EXPECT_FALSE(r.Transitive(0, 9).has_value());
}

OverlapResult Uniform(const std::vector<ImageId>& members, double o) {
  OverlapResult r;
  r.members = members;
  const int n = static_cast<int>(members.size());
  r.raw = Eigen::MatrixXd::Constant(n, n, o);
  r.raw.diagonal().setOnes();
  r.transitive = r.raw;
  return r;
}

bool ConnectedByUnionFind(const ViewGraph& g) {
  UnionFind uf;
  for (const auto& [pair, d] : g.Edges()) uf.Union(pair.first, pair.second);
  const ImageId root = uf.Find(*g.Vertices().begin());
  for (ImageId v : g.Vertices())
    if (uf.Find(v) != root) return false;
  return true;
}

TEST(FilterEdges, Examples) {
  ViewGraph cycle;
  for (int i = 0; i < 4; ++i) cycle.AddEdge(i, (i + 1) % 4, {0.9, 1.0});
  cycle.AddEdge(0, 2, {0.9, 1.0});
  // All overlaps 1: unchanged.
  const ViewGraph same = FilterEdges(cycle, {Uniform({0, 1, 2, 3}, 1.0)}, 0.05);
  EXPECT_EQ(same.NumEdges(), 5u);

  // Chord 0-2 with o = 0.01 is removed.
  OverlapResult r = Uniform({0, 1, 2, 3}, 1.0);
  r.transitive(0, 2) = r.transitive(2, 0) = 0.01;
  const ViewGraph chord = FilterEdges(cycle, {r}, 0.05);
  EXPECT_FALSE(chord.HasEdge(0, 2));
  EXPECT_EQ(chord.NumEdges(), 4u);
  EXPECT_NEAR(chord.Edge(0, 1).overlap, 1.0, 0);

  // A bridge between two triangles stays despite o = 0.01.
  ViewGraph bridged;
  for (int base : {0, 3}) {
    bridged.AddEdge(base, base + 1, {0.9, 1});
    bridged.AddEdge(base + 1, base + 2, {0.9, 1});
    bridged.AddEdge(base, base + 2, {0.9, 1});
  }
  bridged.AddEdge(2, 3, {0.5, 1});
  OverlapResult b = Uniform({0, 1, 2, 3, 4, 5}, 1.0);
  b.transitive(2, 3) = b.transitive(3, 2) = 0.01;
  const ViewGraph kept = FilterEdges(bridged, {b}, 0.05);
  EXPECT_TRUE(kept.HasEdge(2, 3));
  EXPECT_NEAR(kept.Edge(2, 3).overlap, 0.01, 1e-15);

  ViewGraph split;
  split.AddEdge(0, 1, {0.5, 1});
  split.AddVertex(5);
  EXPECT_THROW(FilterEdges(split, {}, 0.05), std::invalid_argument);
}

TEST(FilterEdges, UncoveredEdgesGetZeroAndMaxOverStars) {
  ViewGraph g;
  g.AddEdge(0, 1, {0.9, 1});
  g.AddEdge(1, 2, {0.9, 1});
  const auto w = EdgeOverlaps(g, {Uniform({0, 1}, 0.3), Uniform({0, 1, 5}, 0.7)});
  EXPECT_EQ(w.at({0, 1}), 0.7);
  EXPECT_EQ(w.at({1, 2}), 0.0);
}

TEST(FilterEdges, OutputAlwaysConnected) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + trial % 8;
    ViewGraph g;
    for (int i = 0; i + 1 < n; ++i) g.AddEdge(i, i + 1, {0.5, 1});
    for (int k = 0; k < n; ++k) {
      const int a = static_cast<int>(u(rng) * n), b = static_cast<int>(u(rng) * n);
      if (a != b && !g.HasEdge(a, b)) g.AddEdge(a, b, {0.5, 1});
    }
    std::vector<ImageId> members;
    for (int i = 0; i < n; ++i) members.push_back(i);
    OverlapResult r = Uniform(members, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) r.transitive(i, j) = r.transitive(j, i) = u(rng) * 0.1;
    const ViewGraph f = FilterEdges(g, {r}, 0.05);
    EXPECT_TRUE(ConnectedByUnionFind(f));
    EXPECT_EQ(f.NumVertices(), g.NumVertices());
  }
}

}  // namespace
}  // namespace starsfm
