#include "starsfm/view_graph.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace starsfm {

void CandidateScores::Add(ImageId i, ImageId j, double score) {
  if (i == j) throw std::invalid_argument("candidate pair with itself");
  if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("scores must lie in [0, 1]");
  images_.insert(i);
  images_.insert(j);
  auto [it, inserted] = scores_.emplace(MakePair(i, j), score);
  if (!inserted) it->second = std::max(it->second, score);
}

double CandidateScores::Score(ImageId i, ImageId j) const {
  auto it = scores_.find(MakePair(i, j));
  return it == scores_.end() ? 0.0 : it->second;
}

void ViewGraph::AddEdge(ImageId i, ImageId j, EdgeData data) {
  if (i == j) throw std::invalid_argument("self-loop in view graph");
  if (!(data.alpha >= 0.0 && data.alpha <= 1.0) || !(data.overlap >= 0.0 && data.overlap <= 1.0)) {
    throw std::invalid_argument("edge weights must lie in [0, 1]");
  }
  if (!edges_.emplace(MakePair(i, j), data).second) throw std::invalid_argument("duplicate edge");
  vertices_.insert(i);
  vertices_.insert(j);
}

void ViewGraph::RemoveEdge(ImageId i, ImageId j) { edges_.erase(MakePair(i, j)); }

const EdgeData& ViewGraph::Edge(ImageId i, ImageId j) const {
  auto it = edges_.find(MakePair(i, j));
  if (it == edges_.end()) throw std::out_of_range("no such edge");
  return it->second;
}

EdgeData& ViewGraph::MutableEdge(ImageId i, ImageId j) {
  auto it = edges_.find(MakePair(i, j));
  if (it == edges_.end()) throw std::out_of_range("no such edge");
  return it->second;
}

std::map<ImageId, std::vector<ImageId>> ViewGraph::Adjacency() const {
  std::map<ImageId, std::vector<ImageId>> adjacency;
  for (ImageId v : vertices_) adjacency[v];
  for (const auto& [pair, data] : edges_) {
    adjacency[pair.first].push_back(pair.second);
    adjacency[pair.second].push_back(pair.first);
  }
  for (auto& [v, list] : adjacency) std::sort(list.begin(), list.end());
  return adjacency;
}

std::vector<std::vector<ImageId>> ViewGraph::Components() const {
  UnionFind uf;
  for (ImageId v : vertices_) uf.Find(v);
  for (const auto& [pair, data] : edges_) uf.Union(pair.first, pair.second);
  std::map<ImageId, std::vector<ImageId>> groups;
  for (ImageId v : vertices_) groups[uf.Find(v)].push_back(v);
  std::vector<std::vector<ImageId>> components;
  for (auto& [root, members] : groups) components.push_back(std::move(members));
  std::sort(components.begin(), components.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.front() < b.front();
  });
  return components;
}

bool ViewGraph::IsConnected() const { return Components().size() <= 1; }

ViewGraph ViewGraph::InducedSubgraph(const std::vector<ImageId>& vertices) const {
  const std::set<ImageId> keep(vertices.begin(), vertices.end());
  ViewGraph sub;
  for (ImageId v : keep) sub.AddVertex(v);
  for (const auto& [pair, data] : edges_) {
    if (keep.count(pair.first) && keep.count(pair.second)) sub.edges_[pair] = data;
  }
  return sub;
}

ImageId UnionFind::Find(ImageId x) {
  auto it = parent_.find(x);
  if (it == parent_.end()) {
    parent_[x] = x;
    rank_[x] = 0;
    return x;
  }
  ImageId root = x;
  while (parent_[root] != root) root = parent_[root];
  while (parent_[x] != root) {
    const ImageId next = parent_[x];
    parent_[x] = root;
    x = next;
  }
  return root;
}

bool UnionFind::Union(ImageId a, ImageId b) {
  ImageId ra = Find(a);
  ImageId rb = Find(b);
  if (ra == rb) return false;
  // Deterministic: smaller id wins rank ties.
  if (rank_[ra] < rank_[rb] || (rank_[ra] == rank_[rb] && rb < ra)) std::swap(ra, rb);
  parent_[rb] = ra;
  if (rank_[ra] == rank_[rb]) ++rank_[ra];
  return true;
}

std::vector<double> ThresholdSchedule::Thresholds() const {
  if (!(floor > 0.0 && floor <= delta0 && delta0 <= 1.0)) {
    throw std::invalid_argument("threshold schedule requires 0 < floor <= delta0 <= 1");
  }
  if (!(step > 0.0)) throw std::invalid_argument("threshold step must be positive");
  std::vector<double> thresholds;
  // The tolerance keeps accumulated rounding from skipping the floor round.
  for (int t = 0;; ++t) {
    const double delta = delta0 - t * step;
    if (delta < floor - 1e-9) break;
    thresholds.push_back(delta);
  }
  return thresholds;
}

ViewGraph DynamicThresholdConnect(const CandidateScores& scores, const ThresholdSchedule& schedule) {
  if (scores.Images().empty()) throw std::invalid_argument("empty image set");
  const std::vector<double> thresholds = schedule.Thresholds();

  std::vector<std::pair<ImagePair, double>> candidates(scores.Scores().begin(),
                                                       scores.Scores().end());
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  ViewGraph graph;
  for (ImageId id : scores.Images()) graph.AddVertex(id);
  UnionFind components;
  for (ImageId id : scores.Images()) components.Find(id);

  for (double delta : thresholds) {
    // Component membership is frozen at the start of the round.
    std::map<ImageId, ImageId> frozen;
    for (ImageId id : scores.Images()) frozen[id] = components.Find(id);
    for (const auto& [pair, alpha] : candidates) {
      if (!(alpha > delta)) break;
      if (frozen[pair.first] == frozen[pair.second]) continue;
      graph.AddEdge(pair.first, pair.second, EdgeData{alpha, 1.0});
      components.Union(pair.first, pair.second);
    }
    if (graph.IsConnected()) return graph;
  }
  return graph.InducedSubgraph(graph.Components().front());
}

std::vector<ImageId> StarGraph::Neighbors() const {
  std::vector<ImageId> out;
  for (ImageId m : members) {
    if (m != center) out.push_back(m);
  }
  return out;
}

std::vector<StarGraph> DecomposeStars(const ViewGraph& graph, int cap) {
  if (graph.NumVertices() == 0) throw std::invalid_argument("empty view graph");
  if (cap < 1) throw std::invalid_argument("neighbor cap must be >= 1");
  std::vector<StarGraph> stars;
  for (const auto& [center, neighbors] : graph.Adjacency()) {
    if (neighbors.empty()) continue;
    std::vector<ImageId> ranked = neighbors;
    std::stable_sort(ranked.begin(), ranked.end(), [&](ImageId a, ImageId b) {
      const double sa = graph.Edge(center, a).alpha;
      const double sb = graph.Edge(center, b).alpha;
      if (sa != sb) return sa > sb;
      return a < b;
    });
    if (static_cast<int>(ranked.size()) > cap) ranked.resize(cap);
    StarGraph star;
    star.center = center;
    star.members = ranked;
    star.members.push_back(center);
    std::sort(star.members.begin(), star.members.end());
    stars.push_back(std::move(star));
  }
  return stars;
}

namespace {

std::map<ImageId, int> BfsDistances(const std::map<ImageId, std::vector<ImageId>>& adjacency,
                                    ImageId source) {
  std::map<ImageId, int> dist;
  std::deque<ImageId> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const ImageId v = queue.front();
    queue.pop_front();
    for (ImageId w : adjacency.at(v)) {
      if (dist.emplace(w, dist[v] + 1).second) queue.push_back(w);
    }
  }
  return dist;
}

int RadiusOfConnected(const ViewGraph& graph) {
  const auto adjacency = graph.Adjacency();
  int radius = -1;
  for (const auto& [v, neighbors] : adjacency) {
    int eccentricity = 0;
    for (const auto& [w, d] : BfsDistances(adjacency, v)) eccentricity = std::max(eccentricity, d);
    if (radius < 0 || eccentricity < radius) radius = eccentricity;
  }
  return std::max(radius, 0);
}

}  // namespace

int GraphRadius(const ViewGraph& graph) {
  if (graph.NumVertices() == 0) throw std::invalid_argument("empty graph has no radius");
  if (!graph.IsConnected()) throw std::invalid_argument("radius requires a connected graph");
  return RadiusOfConnected(graph);
}

double FiedlerValue(const ViewGraph& graph) {
  const int n = static_cast<int>(graph.NumVertices());
  if (n < 2) throw std::invalid_argument("Fiedler value requires at least 2 vertices");
  std::map<ImageId, int> index;
  for (ImageId v : graph.Vertices()) index.emplace(v, static_cast<int>(index.size()));
  Eigen::MatrixXd laplacian = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [pair, data] : graph.Edges()) {
    const int a = index.at(pair.first);
    const int b = index.at(pair.second);
    laplacian(a, a) += 1.0;
    laplacian(b, b) += 1.0;
    laplacian(a, b) -= 1.0;
    laplacian(b, a) -= 1.0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw std::runtime_error("Laplacian eigensolver failed");
  return std::max(0.0, solver.eigenvalues()(1));
}

GraphStats ComputeGraphStats(const ViewGraph& graph) {
  GraphStats stats;
  const auto components = graph.Components();
  stats.num_components = static_cast<int>(components.size());
  if (!components.empty()) stats.radius = RadiusOfConnected(graph.InducedSubgraph(components.front()));
  stats.fiedler = graph.NumVertices() >= 2 ? FiedlerValue(graph) : 0.0;
  return stats;
}

}  // namespace starsfm
