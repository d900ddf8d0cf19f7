#include "starsfm/averaging.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "starsfm/parallel.h"

namespace starsfm {

std::vector<RelativeMeasurement> ExtractMeasurements(const std::vector<LocalStarReconstruction>& stars,
                                                     const std::vector<OverlapResult>& overlaps,
                                                     const ViewGraph& graph) {
  if (stars.size() != overlaps.size()) throw std::invalid_argument("stars and overlaps are not aligned");
  std::vector<RelativeMeasurement> measurements;
  for (size_t k = 0; k < stars.size(); ++k) {
    const LocalStarReconstruction& star = stars[k];
    const OverlapResult& overlap = overlaps[k];
    if (overlap.star != star.center || overlap.members != star.members) {
      throw std::invalid_argument("overlap result does not match star " + std::to_string(star.center));
    }
    const int n = static_cast<int>(star.members.size());
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (!graph.HasEdge(star.members[a], star.members[b])) continue;
        RelativeMeasurement m;
        m.star = star.center;
        m.i = star.members[a];
        m.j = star.members[b];
        const Pose rel = RelativePose(star.poses[a], star.poses[b]);
        m.rotation = rel.rotation;
        m.translation = rel.translation;
        m.weight = std::clamp(std::min(overlap.transitive(a, b), overlap.transitive(b, a)), 0.0, 1.0);
        measurements.push_back(m);
      }
    }
  }
  return measurements;
}

double Median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::map<CameraId, double> AverageIntrinsics(const std::vector<LocalStarReconstruction>& stars,
                                             const std::map<ImageId, CameraId>& camera_of_image) {
  std::map<CameraId, std::vector<double>> observations;
  for (const auto& [image, camera] : camera_of_image) observations[camera];
  for (const LocalStarReconstruction& star : stars) {
    for (size_t a = 0; a < star.members.size(); ++a) {
      auto it = camera_of_image.find(star.members[a]);
      const CameraId camera = it == camera_of_image.end() ? star.members[a] : it->second;
      observations[camera].push_back(star.focals[a]);
    }
  }
  std::map<CameraId, double> focals;
  for (auto& [camera, values] : observations) {
    if (values.empty()) {
      throw std::invalid_argument("camera " + std::to_string(camera) + " has no focal observations");
    }
    focals[camera] = Median(std::move(values));
  }
  return focals;
}

namespace {

std::set<ImageId> ImagesOf(const std::vector<RelativeMeasurement>& measurements) {
  std::set<ImageId> images;
  for (const auto& m : measurements) {
    if (m.i == m.j) throw std::invalid_argument("measurement relates an image to itself");
    if (!(m.weight >= 0.0 && m.weight <= 1.0)) throw std::invalid_argument("measurement weight outside [0, 1]");
    images.insert(m.i);
    images.insert(m.j);
  }
  return images;
}

// Best measurement per pair: highest weight, then smallest star, then order.
bool Better(const RelativeMeasurement& a, size_t ia, const RelativeMeasurement& b, size_t ib) {
  if (a.weight != b.weight) return a.weight > b.weight;
  if (a.star != b.star) return a.star < b.star;
  return ia < ib;
}

struct TreeEdge {
  ImageId parent;
  ImageId child;
  ImagePair pair;
};

struct SpanningTree {
  ImageId root = 0;
  std::vector<TreeEdge> edges;  // breadth-first order from the root
  // Measurement indices per pair, best first.
  std::map<ImagePair, std::vector<size_t>> by_pair;
};

SpanningTree MaximumSpanningTree(const std::vector<RelativeMeasurement>& measurements) {
  const std::set<ImageId> images = ImagesOf(measurements);
  if (images.empty()) throw std::invalid_argument("no measurements");
  SpanningTree tree;
  tree.root = *images.begin();
  for (size_t k = 0; k < measurements.size(); ++k) {
    tree.by_pair[MakePair(measurements[k].i, measurements[k].j)].push_back(k);
  }
  for (auto& [pair, list] : tree.by_pair) {
    std::sort(list.begin(), list.end(),
              [&](size_t a, size_t b) { return Better(measurements[a], a, measurements[b], b); });
  }
  std::vector<std::pair<double, ImagePair>> order;
  for (const auto& [pair, list] : tree.by_pair) order.emplace_back(measurements[list.front()].weight, pair);
  // Heaviest first; ties lexicographic in the pair.
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  UnionFind uf;
  std::map<ImageId, std::vector<ImageId>> adjacency;
  for (const auto& [w, pair] : order) {
    if (uf.Union(pair.first, pair.second)) {
      adjacency[pair.first].push_back(pair.second);
      adjacency[pair.second].push_back(pair.first);
    }
  }
  for (auto& [v, list] : adjacency) std::sort(list.begin(), list.end());
  std::set<ImageId> visited{tree.root};
  std::deque<ImageId> queue{tree.root};
  while (!queue.empty()) {
    const ImageId p = queue.front();
    queue.pop_front();
    for (ImageId q : adjacency[p]) {
      if (!visited.insert(q).second) continue;
      tree.edges.push_back({p, q, MakePair(p, q)});
      queue.push_back(q);
    }
  }
  if (visited.size() != images.size()) throw std::invalid_argument("measurement graph is disconnected");
  return tree;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rotation averaging

std::map<ImageId, Rotation> InitializeRotationsSpanningTree(
    const std::vector<RelativeMeasurement>& measurements) {
  const SpanningTree tree = MaximumSpanningTree(measurements);
  std::map<ImageId, Rotation> rotations;
  rotations[tree.root] = Rotation();
  for (const TreeEdge& e : tree.edges) {
    const RelativeMeasurement& m = measurements[tree.by_pair.at(e.pair).front()];
    const Rotation& parent = rotations.at(e.parent);
    rotations[e.child] = m.i == e.parent ? m.rotation * parent : m.rotation.Inverse() * parent;
  }
  return rotations;
}

namespace {

struct RotationTerm {
  Vec3 residual = Vec3::Zero();
  Mat3 jac_i = Mat3::Zero();
  Mat3 jac_j = Mat3::Zero();
  LossValue loss;
};

RotationTerm EvaluateRotationTerm(const RelativeMeasurement& m, const Rotation& ri, const Rotation& rj,
                                  const RobustLoss& loss, bool jacobians) {
  RotationTerm term;
  const Rotation error = m.rotation.Inverse() * rj * ri.Inverse();
  const Vec3 phi = error.Log();
  term.residual = m.weight * phi;
  term.loss = loss.Evaluate(term.residual.squaredNorm());
  if (jacobians) {
    // R_j <- exp(d) R_j gives exp(R_ij^T d) E; R_i <- exp(d) R_i gives E exp(-d).
    term.jac_j = m.weight * LeftJacobianInverse(phi) * m.rotation.Matrix().transpose();
    term.jac_i = -m.weight * RightJacobianInverse(phi);
  }
  return term;
}

std::vector<RotationTerm> EvaluateRotationTerms(const std::vector<RelativeMeasurement>& measurements,
                                                const std::map<ImageId, Rotation>& rotations,
                                                const RobustLoss& loss, bool jacobians, int num_threads) {
  std::vector<RotationTerm> terms(measurements.size());
  ParallelFor(static_cast<int>(measurements.size()), num_threads, [&](int k) {
    const auto& m = measurements[k];
    terms[k] = EvaluateRotationTerm(m, rotations.at(m.i), rotations.at(m.j), loss, jacobians);
  });
  return terms;
}

double SumCost(const std::vector<RotationTerm>& terms) {
  double cost = 0.0;
  for (const auto& t : terms) cost += t.loss.value;
  return cost;
}

}  // namespace

double RotationAveragingCost(const std::vector<RelativeMeasurement>& measurements,
                             const std::map<ImageId, Rotation>& rotations, const RobustLoss& loss,
                             std::map<ImageId, Vec3>* gradient) {
  const auto terms = EvaluateRotationTerms(measurements, rotations, loss, gradient != nullptr, 1);
  if (gradient) {
    gradient->clear();
    for (const auto& [id, r] : rotations) (*gradient)[id] = Vec3::Zero();
    for (size_t k = 0; k < terms.size(); ++k) {
      const double w = 2.0 * terms[k].loss.derivative;
      (*gradient)[measurements[k].i] += w * terms[k].jac_i.transpose() * terms[k].residual;
      (*gradient)[measurements[k].j] += w * terms[k].jac_j.transpose() * terms[k].residual;
    }
  }
  return SumCost(terms);
}

namespace {

// Solves H x = -g; adds a vanishing Levenberg term if H is singular.
Eigen::VectorXd SolveNormalEquations(const Eigen::MatrixXd& H, const Eigen::VectorXd& g) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  Eigen::VectorXd x;
  if (ldlt.info() == Eigen::Success) {
    x = ldlt.solve(-g);
    if (x.allFinite() && (H * x + g).norm() <= 1e-8 * std::max(1.0, g.norm())) return x;
  }
  const double diag = std::max(H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  Eigen::MatrixXd damped = H;
  damped.diagonal().array() += 1e-10 * diag;
  x = damped.ldlt().solve(-g);
  if (!x.allFinite()) x = Eigen::VectorXd::Zero(g.size());
  return x;
}

}  // namespace

RotationAveragingResult AverageRotations(const std::vector<RelativeMeasurement>& measurements,
                                         const RotationAveragingOptions& options) {
  RotationAveragingResult result;
  result.rotations = InitializeRotationsSpanningTree(measurements);
  std::vector<ImageId> ids;
  for (const auto& [id, r] : result.rotations) ids.push_back(id);
  std::map<ImageId, int> index;  // root maps to -1 (fixed)
  for (size_t k = 0; k < ids.size(); ++k) index[ids[k]] = static_cast<int>(k) - 1;
  const int dim = 3 * (static_cast<int>(ids.size()) - 1);

  auto terms = EvaluateRotationTerms(measurements, result.rotations, options.loss, true, options.num_threads);
  double cost = SumCost(terms);
  result.initial_cost = cost;
  for (int iter = 0; iter < options.max_iterations && dim > 0; ++iter) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (size_t k = 0; k < terms.size(); ++k) {
      const RotationTerm& t = terms[k];
      const double w = t.loss.derivative;
      const int a = index[measurements[k].i];
      const int b = index[measurements[k].j];
      if (a >= 0) {
        H.block<3, 3>(3 * a, 3 * a) += w * t.jac_i.transpose() * t.jac_i;
        g.segment<3>(3 * a) += w * t.jac_i.transpose() * t.residual;
      }
      if (b >= 0) {
        H.block<3, 3>(3 * b, 3 * b) += w * t.jac_j.transpose() * t.jac_j;
        g.segment<3>(3 * b) += w * t.jac_j.transpose() * t.residual;
      }
      if (a >= 0 && b >= 0) {
        const Mat3 cross = w * t.jac_i.transpose() * t.jac_j;
        H.block<3, 3>(3 * a, 3 * b) += cross;
        H.block<3, 3>(3 * b, 3 * a) += cross.transpose();
      }
    }
    const Eigen::VectorXd delta = SolveNormalEquations(H, g);
    bool accepted = false;
    double step = 1.0;
    for (int halving = 0; halving < 30; ++halving, step *= 0.5) {
      std::map<ImageId, Rotation> trial = result.rotations;
      for (size_t k = 1; k < ids.size(); ++k) {
        trial[ids[k]] = Rotation::Exp(step * delta.segment<3>(3 * (k - 1))) * trial[ids[k]];
      }
      auto trial_terms = EvaluateRotationTerms(measurements, trial, options.loss, true, options.num_threads);
      const double trial_cost = SumCost(trial_terms);
      if (trial_cost <= cost) {
        result.rotations = std::move(trial);
        terms = std::move(trial_terms);
        cost = trial_cost;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    result.iterations = iter + 1;
    if (step * delta.lpNorm<Eigen::Infinity>() < options.step_tolerance) break;
  }
  result.final_cost = cost;
  return result;
}

// ---------------------------------------------------------------------------
// Similarity averaging

namespace {

std::optional<double> EstimateScale(const Vec3& v, const Vec3& d) {
  const double dd = d.squaredNorm();
  if (!(dd > 0.0)) return std::nullopt;
  const double s = v.dot(d) / dd;
  if (s > 0.0 && std::isfinite(s)) return s;
  const double alt = v.norm() / std::sqrt(dd);
  if (alt > 0.0 && std::isfinite(alt)) return alt;
  return std::nullopt;
}

std::vector<Vec3> WorldTranslations(const std::map<ImageId, Rotation>& rotations,
                                    const std::vector<RelativeMeasurement>& measurements) {
  std::vector<Vec3> v(measurements.size());
  for (size_t k = 0; k < measurements.size(); ++k) {
    auto it = rotations.find(measurements[k].j);
    if (it == rotations.end()) {
      throw std::invalid_argument("missing rotation for image " + std::to_string(measurements[k].j));
    }
    v[k] = it->second.Inverse() * measurements[k].translation;
  }
  return v;
}

}  // namespace

SimilarityInitialization InitializeCentersSpanningTree(const std::map<ImageId, Rotation>& rotations,
                                                       const std::vector<RelativeMeasurement>& measurements) {
  const SpanningTree tree = MaximumSpanningTree(measurements);
  const std::vector<Vec3> v = WorldTranslations(rotations, measurements);
  std::map<int, std::vector<size_t>> by_star;
  for (size_t k = 0; k < measurements.size(); ++k) by_star[measurements[k].star].push_back(k);
  for (auto& [star, list] : by_star) {
    std::sort(list.begin(), list.end(),
              [&](size_t a, size_t b) { return Better(measurements[a], a, measurements[b], b); });
  }

  SimilarityInitialization init;
  init.scales[by_star.begin()->first] = 1.0;
  init.centers[tree.root] = Vec3::Zero();

  // Scale of a star from its best measurement with both endpoints placed.
  auto estimate = [&](int star) -> std::optional<double> {
    for (size_t k : by_star.at(star)) {
      auto ci = init.centers.find(measurements[k].i);
      auto cj = init.centers.find(measurements[k].j);
      if (ci == init.centers.end() || cj == init.centers.end()) continue;
      if (auto s = EstimateScale(v[k], ci->second - cj->second)) return s;
    }
    return std::nullopt;
  };

  for (const TreeEdge& e : tree.edges) {
    const std::vector<size_t>& candidates = tree.by_pair.at(e.pair);
    std::optional<size_t> chosen;
    for (size_t k : candidates) {
      if (init.scales.count(measurements[k].star)) {
        chosen = k;
        break;
      }
    }
    if (!chosen) {
      for (size_t k : candidates) {
        if (auto s = estimate(measurements[k].star)) {
          init.scales[measurements[k].star] = *s;
          chosen = k;
          break;
        }
      }
    }
    if (!chosen) {
      chosen = candidates.front();
      init.scales[measurements[*chosen].star] = 1.0;
    }
    const RelativeMeasurement& m = measurements[*chosen];
    const double s = init.scales.at(m.star);
    const Vec3& cp = init.centers.at(e.parent);
    // v = s (c_i - c_j)
    init.centers[e.child] = m.i == e.parent ? Vec3(cp - v[*chosen] / s) : Vec3(cp + v[*chosen] / s);
  }
  for (const auto& [star, list] : by_star) {
    if (init.scales.count(star)) continue;
    init.scales[star] = estimate(star).value_or(1.0);
  }
  return init;
}

namespace {

// Dense parameter layout shared by both parameterizations:
// [centers of non-root images (3 each)] [scale parameter of non-anchor stars].
struct SimilarityProblem {
  const std::vector<RelativeMeasurement>& measurements;
  std::vector<Vec3> v;
  std::vector<ImageId> images;
  std::vector<int> stars;
  std::map<ImageId, int> image_index;  // -1 for the root
  std::map<int, int> star_index;       // -1 for the anchor
  bool variant = false;
  RobustLoss loss;

  SimilarityProblem(const std::map<ImageId, Rotation>& rotations,
                    const std::vector<RelativeMeasurement>& ms, bool variant_form)
      : measurements(ms), v(WorldTranslations(rotations, ms)), variant(variant_form) {
    const std::set<ImageId> ids = ImagesOf(ms);
    if (ids.empty()) throw std::invalid_argument("no measurements");
    images.assign(ids.begin(), ids.end());
    std::set<int> star_ids;
    for (const auto& m : ms) star_ids.insert(m.star);
    stars.assign(star_ids.begin(), star_ids.end());
    for (size_t k = 0; k < images.size(); ++k) image_index[images[k]] = static_cast<int>(k) - 1;
    for (size_t k = 0; k < stars.size(); ++k) star_index[stars[k]] = static_cast<int>(k) - 1;
  }

  int Dim() const { return 3 * (static_cast<int>(images.size()) - 1) + static_cast<int>(stars.size()) - 1; }
  int ScaleOffset(int star) const {
    const int s = star_index.at(star);
    return s < 0 ? -1 : 3 * (static_cast<int>(images.size()) - 1) + s;
  }

  // Scales: s_l stored as log s for the standard form, s~_l as-is otherwise.
  Eigen::VectorXd Pack(const std::map<ImageId, Vec3>& centers, const std::map<int, double>& scales) const {
    Eigen::VectorXd x(Dim());
    const Vec3 origin = centers.at(images[0]);
    for (size_t k = 1; k < images.size(); ++k) x.segment<3>(3 * (k - 1)) = centers.at(images[k]) - origin;
    for (size_t k = 1; k < stars.size(); ++k) {
      const double s = scales.at(stars[k]) / scales.at(stars[0]);
      x(ScaleOffset(stars[k])) = variant ? s : std::log(s);
    }
    return x;
  }

  void Unpack(const Eigen::VectorXd& x, std::map<ImageId, Vec3>* centers, std::map<int, double>* scales) const {
    centers->clear();
    scales->clear();
    (*centers)[images[0]] = Vec3::Zero();
    for (size_t k = 1; k < images.size(); ++k) (*centers)[images[k]] = x.segment<3>(3 * (k - 1));
    (*scales)[stars[0]] = 1.0;
    for (size_t k = 1; k < stars.size(); ++k) {
      const double p = x(ScaleOffset(stars[k]));
      (*scales)[stars[k]] = variant ? p : std::exp(p);
    }
  }

  Vec3 Center(const Eigen::VectorXd& x, ImageId id) const {
    const int k = image_index.at(id);
    return k < 0 ? Vec3::Zero() : Vec3(x.segment<3>(3 * k));
  }
  double ScaleParam(const Eigen::VectorXd& x, int star) const {
    const int o = ScaleOffset(star);
    if (o < 0) return variant ? 1.0 : 0.0;
    return x(o);
  }

  struct Term {
    Vec3 residual;
    // Derivative with respect to c_j (c_i gets the negative) and to the
    // scale parameter.
    double center_coeff;
    Vec3 scale_jac;
    LossValue loss;
  };

  Term Evaluate(const Eigen::VectorXd& x, size_t k) const {
    const RelativeMeasurement& m = measurements[k];
    const Vec3 d = Center(x, m.i) - Center(x, m.j);
    const double p = ScaleParam(x, m.star);
    Term t;
    if (variant) {
      t.residual = m.weight * (p * v[k] - d);
      t.center_coeff = m.weight;
      t.scale_jac = m.weight * v[k];
    } else {
      const double s = std::exp(p);
      t.residual = m.weight * (v[k] - s * d);
      t.center_coeff = m.weight * s;
      t.scale_jac = -m.weight * s * d;
    }
    t.loss = loss.Evaluate(t.residual.squaredNorm());
    return t;
  }

  std::vector<Term> EvaluateAll(const Eigen::VectorXd& x, int num_threads) const {
    std::vector<Term> terms(measurements.size());
    ParallelFor(static_cast<int>(measurements.size()), num_threads, [&](int k) { terms[k] = Evaluate(x, k); });
    return terms;
  }

  static double Cost(const std::vector<Term>& terms) {
    double c = 0.0;
    for (const auto& t : terms) c += t.loss.value;
    return c;
  }

  // Accumulates J^T W J and J^T W r with the given per-term weight factor.
  void Accumulate(const std::vector<Term>& terms, double factor, Eigen::MatrixXd* H, Eigen::VectorXd* g) const {
    for (size_t k = 0; k < terms.size(); ++k) {
      const Term& t = terms[k];
      const RelativeMeasurement& m = measurements[k];
      const double w = factor * t.loss.derivative;
      // J = [dr/dc_i = -a I, dr/dc_j = a I, dr/dp = scale_jac].
      const int ci = image_index.at(m.i);
      const int cj = image_index.at(m.j);
      const int so = ScaleOffset(m.star);
      struct Block {
        int offset;
        Eigen::Matrix<double, 3, Eigen::Dynamic> jac;
      };
      std::vector<Block> blocks;
      if (ci >= 0) blocks.push_back({3 * ci, -t.center_coeff * Mat3::Identity()});
      if (cj >= 0) blocks.push_back({3 * cj, t.center_coeff * Mat3::Identity()});
      if (so >= 0) blocks.push_back({so, t.scale_jac});
      for (const Block& a : blocks) {
        if (g) g->segment(a.offset, a.jac.cols()) += w * a.jac.transpose() * t.residual;
        if (!H) continue;
        for (const Block& b : blocks) {
          H->block(a.offset, b.offset, a.jac.cols(), b.jac.cols()) += w * a.jac.transpose() * b.jac;
        }
      }
    }
  }
};

SimilarityAveragingResult SolveSimilarity(const std::map<ImageId, Rotation>& rotations,
                                          const std::vector<RelativeMeasurement>& measurements,
                                          const SimilarityAveragingOptions& options, bool variant) {
  SimilarityProblem problem(rotations, measurements, variant);
  const SimilarityInitialization init = InitializeCentersSpanningTree(rotations, measurements);

  std::vector<double> baselines;
  for (const auto& m : measurements) baselines.push_back((init.centers.at(m.i) - init.centers.at(m.j)).norm());
  const double median_baseline = Median(baselines);
  double max_measured = 0.0;
  for (const Vec3& v : problem.v) max_measured = std::max(max_measured, v.norm());
  if (!(median_baseline > 0.0) && max_measured > 0.0) {
    double spread = 0.0;
    for (const auto& [id, c] : init.centers) spread = std::max(spread, c.norm());
    if (!(spread > 0.0)) throw std::runtime_error("degenerate similarity problem: all centers coincide");
  }

  SimilarityAveragingResult result;
  result.anchor_star = problem.stars.front();
  if (options.loss == LossKind::kTrivial || !(options.loss_baseline_fraction > 0.0) ||
      !(median_baseline > 0.0)) {
    problem.loss = RobustLoss::Trivial();
  } else {
    result.loss_scale = options.loss_baseline_fraction * median_baseline;
    problem.loss = RobustLoss{options.loss, result.loss_scale};
  }

  std::map<int, double> init_scales = init.scales;
  if (variant) {
    for (auto& [star, s] : init_scales) s = 1.0 / s;
  }
  Eigen::VectorXd x = problem.Pack(init.centers, init_scales);
  const int dim = problem.Dim();
  auto terms = problem.EvaluateAll(x, options.num_threads);
  double cost = SimilarityProblem::Cost(terms);
  result.initial_cost = cost;
  for (int iter = 0; iter < options.max_iterations && dim > 0 && cost > 0.0; ++iter) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    problem.Accumulate(terms, 1.0, &H, &g);
    const Eigen::VectorXd delta = SolveNormalEquations(H, g);
    bool accepted = false;
    double step = 1.0;
    double trial_cost = cost;
    for (int halving = 0; halving < 30; ++halving, step *= 0.5) {
      const Eigen::VectorXd trial = x + step * delta;
      auto trial_terms = problem.EvaluateAll(trial, options.num_threads);
      trial_cost = SimilarityProblem::Cost(trial_terms);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        x = trial;
        terms = std::move(trial_terms);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double previous = cost;
    cost = trial_cost;
    result.iterations = iter + 1;
    if (previous - cost <= options.cost_tolerance * previous) break;
  }
  result.final_cost = cost;
  problem.Unpack(x, &result.centers, &result.scales);
  return result;
}

double SimilarityCostImpl(const std::map<ImageId, Rotation>& rotations,
                          const std::vector<RelativeMeasurement>& measurements,
                          const std::map<ImageId, Vec3>& centers, const std::map<int, double>& scales,
                          const RobustLoss& loss, bool variant, std::map<ImageId, Vec3>* center_gradient,
                          std::map<int, double>* scale_gradient) {
  SimilarityProblem problem(rotations, measurements, variant);
  problem.loss = loss;
  // Evaluate without gauge elimination: every center and scale is free.
  double cost = 0.0;
  if (center_gradient) {
    center_gradient->clear();
    for (ImageId id : problem.images) (*center_gradient)[id] = Vec3::Zero();
  }
  if (scale_gradient) {
    scale_gradient->clear();
    for (int star : problem.stars) (*scale_gradient)[star] = 0.0;
  }
  for (size_t k = 0; k < measurements.size(); ++k) {
    const RelativeMeasurement& m = measurements[k];
    const Vec3 d = centers.at(m.i) - centers.at(m.j);
    const double s = scales.at(m.star);
    if (!(s > 0.0) && !variant) throw std::invalid_argument("scales must be positive");
    Vec3 r;
    double center_coeff;
    Vec3 scale_jac;
    if (variant) {
      r = m.weight * (s * problem.v[k] - d);
      center_coeff = -m.weight;  // dr/dc_i
      scale_jac = m.weight * problem.v[k];
    } else {
      r = m.weight * (problem.v[k] - s * d);
      center_coeff = -m.weight * s;
      scale_jac = -m.weight * s * d;  // with respect to log s
    }
    const LossValue l = loss.Evaluate(r.squaredNorm());
    cost += l.value;
    const double w = 2.0 * l.derivative;
    if (center_gradient) {
      (*center_gradient)[m.i] += w * center_coeff * r;
      (*center_gradient)[m.j] -= w * center_coeff * r;
    }
    if (scale_gradient) (*scale_gradient)[m.star] += w * scale_jac.dot(r);
  }
  return cost;
}

}  // namespace

double SimilarityAveragingCost(const std::map<ImageId, Rotation>& rotations,
                               const std::vector<RelativeMeasurement>& measurements,
                               const std::map<ImageId, Vec3>& centers, const std::map<int, double>& scales,
                               const RobustLoss& loss, std::map<ImageId, Vec3>* center_gradient,
                               std::map<int, double>* log_scale_gradient) {
  return SimilarityCostImpl(rotations, measurements, centers, scales, loss, false, center_gradient,
                            log_scale_gradient);
}

double SimilarityVariantCost(const std::map<ImageId, Rotation>& rotations,
                             const std::vector<RelativeMeasurement>& measurements,
                             const std::map<ImageId, Vec3>& centers, const std::map<int, double>& scales,
                             const RobustLoss& loss, std::map<ImageId, Vec3>* center_gradient,
                             std::map<int, double>* scale_gradient) {
  return SimilarityCostImpl(rotations, measurements, centers, scales, loss, true, center_gradient,
                            scale_gradient);
}

SimilarityAveragingResult AverageSimilarity(const std::map<ImageId, Rotation>& rotations,
                                            const std::vector<RelativeMeasurement>& measurements,
                                            const SimilarityAveragingOptions& options) {
  return SolveSimilarity(rotations, measurements, options, false);
}

SimilarityAveragingResult AverageSimilarityVariant(const std::map<ImageId, Rotation>& rotations,
                                                   const std::vector<RelativeMeasurement>& measurements,
                                                   const SimilarityAveragingOptions& options) {
  return SolveSimilarity(rotations, measurements, options, true);
}

std::vector<std::vector<DepthMap>> RescaleDepths(const std::vector<LocalStarReconstruction>& stars,
                                                 const std::map<int, double>& scales) {
  std::vector<std::vector<DepthMap>> rescaled;
  rescaled.reserve(stars.size());
  for (const LocalStarReconstruction& star : stars) {
    auto it = scales.find(star.center);
    if (it == scales.end()) throw std::invalid_argument("missing scale for star " + std::to_string(star.center));
    if (!(it->second > 0.0)) throw std::invalid_argument("star scales must be positive");
    std::vector<DepthMap> depths = star.depths;
    for (DepthMap& depth : depths) {
      for (double& value : depth.MutableValues()) value /= it->second;
    }
    rescaled.push_back(std::move(depths));
  }
  return rescaled;
}

}  // namespace starsfm
