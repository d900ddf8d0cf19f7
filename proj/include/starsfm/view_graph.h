#pragma once

#include <map>
#include <set>
#include <utility>
#include <vector>

#include "starsfm/geometry.h"

namespace starsfm {

using ImagePair = std::pair<ImageId, ImageId>;

// Canonical (smaller, larger) ordering.
inline ImagePair MakePair(ImageId a, ImageId b) { return a < b ? ImagePair{a, b} : ImagePair{b, a}; }

// Retrieval candidates with similarity scores. Directed scores are
// symmetrized by max on insertion.
class CandidateScores {
 public:
  void AddImage(ImageId id) { images_.insert(id); }
  void Add(ImageId i, ImageId j, double score);

  const std::set<ImageId>& Images() const { return images_; }
  const std::map<ImagePair, double>& Scores() const { return scores_; }
  double Score(ImageId i, ImageId j) const;

  int retrieval_budget = 0;

 private:
  std::set<ImageId> images_;
  std::map<ImagePair, double> scores_;
};

struct EdgeData {
  double alpha = 0.0;
  double overlap = 1.0;
};

class ViewGraph {
 public:
  void AddVertex(ImageId id) { vertices_.insert(id); }
  void AddEdge(ImageId i, ImageId j, EdgeData data);
  void RemoveEdge(ImageId i, ImageId j);
  bool HasEdge(ImageId i, ImageId j) const { return edges_.count(MakePair(i, j)) > 0; }
  const EdgeData& Edge(ImageId i, ImageId j) const;
  EdgeData& MutableEdge(ImageId i, ImageId j);

  const std::set<ImageId>& Vertices() const { return vertices_; }
  const std::map<ImagePair, EdgeData>& Edges() const { return edges_; }
  size_t NumVertices() const { return vertices_.size(); }
  size_t NumEdges() const { return edges_.size(); }

  std::map<ImageId, std::vector<ImageId>> Adjacency() const;
  // Components sorted by descending size, ties by smallest member id.
  std::vector<std::vector<ImageId>> Components() const;
  bool IsConnected() const;
  ViewGraph InducedSubgraph(const std::vector<ImageId>& vertices) const;

 private:
  std::set<ImageId> vertices_;
  std::map<ImagePair, EdgeData> edges_;
};

// Disjoint-set forest over arbitrary image ids.
class UnionFind {
 public:
  ImageId Find(ImageId x);
  bool Union(ImageId a, ImageId b);

 private:
  std::map<ImageId, ImageId> parent_;
  std::map<ImageId, int> rank_;
};

struct ThresholdSchedule {
  double delta0 = 0.8;
  double step = 0.1;
  double floor = 0.2;

  // delta0, delta0 - step, ..., down to and including floor.
  std::vector<double> Thresholds() const;
};

// Grows the view graph by admitting, per threshold round, every candidate
// edge with alpha > delta whose endpoints lie in different components of the
// graph at the start of the round. Stops once connected; otherwise keeps the
// largest component after the floor round.
ViewGraph DynamicThresholdConnect(const CandidateScores& scores,
                                  const ThresholdSchedule& schedule = {});

struct StarGraph {
  ImageId center = 0;
  // Sorted, includes the center.
  std::vector<ImageId> members;

  std::vector<ImageId> Neighbors() const;
};

constexpr int kDefaultNeighborCap = 25;

// One star per vertex with at least one neighbor. Neighbors beyond the cap
// are dropped by ascending alpha (ties: larger id dropped first).
std::vector<StarGraph> DecomposeStars(const ViewGraph& graph, int cap = kDefaultNeighborCap);

struct GraphStats {
  int radius = 0;
  double fiedler = 0.0;
  int num_components = 0;
};

int GraphRadius(const ViewGraph& graph);
// Second-smallest eigenvalue of the unweighted combinatorial Laplacian.
double FiedlerValue(const ViewGraph& graph);
// Radius is reported on the largest component when disconnected.
GraphStats ComputeGraphStats(const ViewGraph& graph);

}  // namespace starsfm
