#include <algorithm>
#include <queue>
#include <random>

#include <gtest/gtest.h>

#include "starsfm/view_graph.h"

namespace starsfm {
namespace {

ViewGraph PathGraph(int n) {
  ViewGraph g;
  for (int i = 0; i < n; ++i) g.AddVertex(i);
  for (int i = 0; i + 1 < n; ++i) g.AddEdge(i, i + 1, {0.5, 1.0});
  return g;
}

ViewGraph CompleteGraph(int n) {
  ViewGraph g;
  for (int i = 0; i < n; ++i) g.AddVertex(i);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) g.AddEdge(i, j, {0.5, 1.0});
  return g;
}

ViewGraph RandomGraph(std::mt19937_64& rng, int n, double p) {
  std::bernoulli_distribution edge(p);
  ViewGraph g;
  for (int i = 0; i < n; ++i) g.AddVertex(i);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (edge(rng)) g.AddEdge(i, j, {0.5, 1.0});
  return g;
}

// All-pairs BFS over an adjacency matrix; -1 when disconnected.
int BruteForceRadius(const ViewGraph& g) {
  const int n = static_cast<int>(g.NumVertices());
  std::vector<std::vector<int>> adj(n);
  for (const auto& [pair, data] : g.Edges()) {
    adj[pair.first].push_back(pair.second);
    adj[pair.second].push_back(pair.first);
  }
  int best = n + 1;
  for (int s = 0; s < n; ++s) {
    std::vector<int> dist(n, -1);
    dist[s] = 0;
    std::queue<int> q;
    q.push(s);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u])
        if (dist[v] < 0) dist[v] = dist[u] + 1, q.push(v);
    }
    if (std::count(dist.begin(), dist.end(), -1) > 0) return -1;
    best = std::min(best, *std::max_element(dist.begin(), dist.end()));
  }
  return best;
}

bool ConnectedByUnionFind(const ViewGraph& g) {
  std::vector<int> parent(g.NumVertices());
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
  for (const auto& [pair, data] : g.Edges()) parent[find(pair.first)] = find(pair.second);
  for (size_t i = 0; i < parent.size(); ++i)
    if (find(static_cast<int>(i)) != find(0)) return false;
  return true;
}

TEST(CandidateScores, SymmetrizesByMax) {
  CandidateScores s;
  s.Add(1, 0, 0.3);
  s.Add(0, 1, 0.7);
  s.Add(1, 0, 0.5);
  EXPECT_EQ(s.Score(0, 1), 0.7);
  EXPECT_EQ(s.Score(1, 0), 0.7);
  EXPECT_THROW(s.Add(0, 2, 1.5), std::invalid_argument);
  EXPECT_THROW(s.Add(2, 2, 0.5), std::invalid_argument);
}

TEST(ViewGraph, RejectsSelfLoopAndDuplicates) {
  ViewGraph g;
  EXPECT_THROW(g.AddEdge(1, 1, {}), std::invalid_argument);
  g.AddEdge(1, 2, {0.4, 0.5});
  EXPECT_THROW(g.AddEdge(2, 1, {0.4, 0.5}), std::invalid_argument);
  EXPECT_THROW(g.AddEdge(3, 4, {1.5, 0.5}), std::invalid_argument);
}

TEST(ThresholdSchedule, IncludesFloor) {
  const auto t = ThresholdSchedule{}.Thresholds();
  ASSERT_EQ(t.size(), 7u);
  EXPECT_NEAR(t.front(), 0.8, 1e-12);
  EXPECT_NEAR(t.back(), 0.2, 1e-12);
}

TEST(DynamicThreshold, ChainConnectsInOneRound) {
  CandidateScores s;
  for (int i = 0; i < 3; ++i) s.Add(i, i + 1, 0.9);
  const ViewGraph g = DynamicThresholdConnect(s);
  EXPECT_EQ(g.NumVertices(), 4u);
  EXPECT_EQ(g.NumEdges(), 3u);
  EXPECT_TRUE(g.IsConnected());
}

TEST(DynamicThreshold, BridgeAdmittedAtHalf) {
  CandidateScores s;
  for (int base : {0, 3}) {
    s.Add(base, base + 1, 0.9);
    s.Add(base, base + 2, 0.9);
    s.Add(base + 1, base + 2, 0.9);
  }
  s.Add(2, 3, 0.55);
  // With the floor at 0.6 the bridge is never admitted.
  const ViewGraph early = DynamicThresholdConnect(s, {0.8, 0.1, 0.6});
  EXPECT_FALSE(early.HasEdge(2, 3));
  EXPECT_EQ(early.NumVertices(), 3u);
  const ViewGraph g = DynamicThresholdConnect(s);
  EXPECT_TRUE(g.IsConnected());
  EXPECT_TRUE(g.HasEdge(2, 3));
  EXPECT_EQ(g.NumVertices(), 6u);
}

TEST(DynamicThreshold, KeepsLargestCluster) {
  CandidateScores s;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) s.Add(i, j, 0.9);
  for (int i = 10; i < 13; ++i)
    for (int j = i + 1; j < 13; ++j) s.Add(i, j, 0.9);
  for (int i = 0; i < 4; ++i)
    for (int j = 10; j < 13; ++j) s.Add(i, j, 0.1);
  const ViewGraph g = DynamicThresholdConnect(s);
  EXPECT_EQ(g.Vertices(), (std::set<ImageId>{0, 1, 2, 3}));
  EXPECT_THROW(DynamicThresholdConnect(CandidateScores{}), std::invalid_argument);
}

TEST(DynamicThreshold, ConnectedWheneverSomeThresholdConnects) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    CandidateScores s;
    const int n = 8;
    for (int i = 0; i < n; ++i) s.AddImage(i);
    std::bernoulli_distribution has(0.3);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (has(rng)) s.Add(i, j, score(rng));
    // Oracle: the full candidate graph thresholded at the floor.
    ViewGraph floor_graph;
    for (int i = 0; i < n; ++i) floor_graph.AddVertex(i);
    for (const auto& [pair, a] : s.Scores())
      if (a > 0.2) floor_graph.AddEdge(pair.first, pair.second, {a, 1.0});
    const ViewGraph g = DynamicThresholdConnect(s);
    EXPECT_TRUE(g.IsConnected());
    const auto comps = floor_graph.Components();
    EXPECT_EQ(g.NumVertices(), comps.front().size());
    if (comps.size() == 1) EXPECT_EQ(g.NumVertices(), static_cast<size_t>(n));

    // Adding a perfect edge never shrinks the output.
    CandidateScores more = s;
    more.Add(trial % n, (trial + 3) % n, 1.0);
    EXPECT_GE(DynamicThresholdConnect(more).NumVertices(), g.NumVertices());
  }
}

TEST(DecomposeStars, TriangleAndIsolated) {
  ViewGraph g;
  g.AddEdge(0, 1, {0.5, 1});
  g.AddEdge(1, 2, {0.5, 1});
  g.AddEdge(0, 2, {0.5, 1});
  g.AddVertex(7);
  const auto stars = DecomposeStars(g, 25);
  ASSERT_EQ(stars.size(), 3u);
  for (const auto& s : stars) EXPECT_EQ(s.members.size(), 3u);
}

TEST(DecomposeStars, HubKeepsHighestScores) {
  ViewGraph g;
  for (int k = 1; k <= 30; ++k) g.AddEdge(0, k, {k / 31.0, 1.0});
  const auto stars = DecomposeStars(g, 25);
  const StarGraph& hub = stars.front();
  ASSERT_EQ(hub.center, 0);
  ASSERT_EQ(hub.members.size(), 26u);
  EXPECT_EQ(hub.members[1], 6);  // 1..5 dropped
  EXPECT_EQ(hub.members.back(), 30);
}

TEST(DecomposeStars, TiesBrokenBySmallerId) {
  ViewGraph g;
  for (int k = 1; k <= 4; ++k) g.AddEdge(0, k, {0.5, 1.0});
  const auto stars = DecomposeStars(g, 2);
  EXPECT_EQ(stars.front().members, (std::vector<ImageId>{0, 1, 2}));
}

TEST(GraphRadius, Examples) {
  ViewGraph star;
  for (int k = 1; k < 6; ++k) star.AddEdge(0, k, {0.5, 1});
  EXPECT_EQ(GraphRadius(star), 1);
  EXPECT_EQ(GraphRadius(PathGraph(5)), 2);
  EXPECT_EQ(GraphRadius(PathGraph(1)), 0);
  ViewGraph split = PathGraph(2);
  split.AddVertex(9);
  EXPECT_THROW(GraphRadius(split), std::invalid_argument);
}

TEST(GraphRadius, MatchesBruteForce) {
  std::mt19937_64 rng(22);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + trial % 11;
    const ViewGraph g = RandomGraph(rng, n, 0.35);
    const int oracle = BruteForceRadius(g);
    if (oracle < 0) continue;
    EXPECT_EQ(GraphRadius(g), oracle);
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(FiedlerValue, Examples) {
  for (int n : {3, 5, 8}) EXPECT_NEAR(FiedlerValue(CompleteGraph(n)), n, 1e-8);
  EXPECT_NEAR(FiedlerValue(PathGraph(2)), 2.0, 1e-8);
  EXPECT_NEAR(FiedlerValue(PathGraph(3)), 1.0, 1e-8);
  EXPECT_THROW(FiedlerValue(PathGraph(1)), std::invalid_argument);
}

TEST(FiedlerValue, PositiveIffConnected) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const ViewGraph g = RandomGraph(rng, 2 + trial % 10, 0.25);
    EXPECT_EQ(FiedlerValue(g) > 1e-9, ConnectedByUnionFind(g)) << "trial " << trial;
  }
}

TEST(GraphStats, CountsComponents) {
  ViewGraph g = PathGraph(4);
  g.AddVertex(10);
  const GraphStats stats = ComputeGraphStats(g);
  EXPECT_EQ(stats.num_components, 2);
  EXPECT_EQ(stats.radius, 2);
  EXPECT_NEAR(stats.fiedler, 0.0, 1e-9);
}

}  // namespace
}  // namespace starsfm
