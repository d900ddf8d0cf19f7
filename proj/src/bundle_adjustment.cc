#include "starsfm/bundle_adjustment.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include <Eigen/Dense>

#include "starsfm/parallel.h"
#include "starsfm/view_graph.h"

namespace starsfm {
namespace {

constexpr int kMaxCameraColumns = 7;

struct State {
  std::vector<Rotation> rotations;
  std::vector<Vec3> centers;
  std::vector<double> focals;
  // One entry per track; virtual entries are never updated.
  std::vector<Vec3> points;
  // Unit direction from the first to the second center.
  Vec3 direction = Vec3::UnitX();
};

struct ObservationTerm {
  Vec2 residual = Vec2::Zero();
  double weight = 0.0;
  Eigen::Matrix<double, 2, kMaxCameraColumns> camera_jacobian;
  std::array<int, kMaxCameraColumns> columns{};
  int num_columns = 0;
  Eigen::Matrix<double, 2, 3> point_jacobian;
};

struct TrackEvaluation {
  double cost = 0.0;
  std::vector<ObservationTerm> terms;
  int bad_image = -1;
};

// Orthonormal pair spanning the tangent plane of the unit sphere at u.
std::pair<Vec3, Vec3> TangentBasis(const Vec3& u) {
  int axis = 0;
  u.cwiseAbs().minCoeff(&axis);
  const Vec3 b1 = u.cross(Vec3::Unit(axis)).normalized();
  return {b1, u.cross(b1)};
}

class Problem {
 public:
  Problem(const GlobalReconstruction& recon, const std::vector<Track>& tracks, const BundleAdjustmentOptions& options)
      : tracks_(tracks), options_(options) {
    for (const auto& [id, pose] : recon.poses) {
      index_of_image_[id] = static_cast<int>(images_.size());
      images_.push_back(id);
    }
    if (images_.size() < 2) throw std::invalid_argument("bundle adjustment needs at least two images");
    for (ImageId id : images_) {
      const CameraId cam = recon.camera_of_image.at(id);
      if (!index_of_camera_.count(cam)) {
        index_of_camera_[cam] = static_cast<int>(camera_ids_.size());
        camera_ids_.push_back(cam);
      }
      camera_of_image_.push_back(index_of_camera_[cam]);
      const ImageSize size = recon.image_sizes.at(id);
      sizes_.push_back(size);
    }

    UnionFind uf;
    for (size_t t = 0; t < tracks.size(); ++t) {
      const Track& track = tracks[t];
      if (!IsVirtual(track.track_class) && !track.point) {
        throw std::invalid_argument("track " + std::to_string(t) + " has no point");
      }
      for (const Observation& obs : track.observations) {
        if (!index_of_image_.count(obs.image)) {
          throw std::invalid_argument("track " + std::to_string(t) + " observes unregistered image " +
                                      std::to_string(obs.image));
        }
        uf.Union(track.observations.front().image, obs.image);
      }
    }
    for (ImageId id : images_) {
      if (uf.Find(id) != uf.Find(images_.front())) {
        throw std::runtime_error("disconnected problem: image " + std::to_string(id) + " shares no track");
      }
    }

    // Column layout: second image (3 rotation + 2 sphere), remaining images
    // (3 rotation + 3 center), then focals.
    int offset = 0;
    image_offset_.assign(images_.size(), -1);
    for (size_t k = 1; k < images_.size(); ++k) {
      image_offset_[k] = offset;
      offset += k == 1 ? 5 : 6;
    }
    focal_offset_.assign(camera_ids_.size(), -1);
    if (options.refine_focals) {
      for (size_t c = 0; c < camera_ids_.size(); ++c) focal_offset_[c] = offset++;
    }
    num_camera_params_ = offset;
    for (size_t t = 0; t < tracks.size(); ++t) {
      point_offset_.push_back(IsVirtual(tracks[t].track_class) ? -1 : num_points_++);
    }

    for (ImageId id : images_) {
      initial_.rotations.push_back(recon.poses.at(id).rotation);
      initial_.centers.push_back(recon.poses.at(id).Center());
    }
    for (CameraId cam : camera_ids_) initial_.focals.push_back(recon.focals.at(cam));
    for (const Track& track : tracks) initial_.points.push_back(track.point ? *track.point : Vec3::Zero());
    const Vec3 baseline = initial_.centers[1] - initial_.centers[0];
    distance_ = baseline.norm();
    if (!(distance_ > 1e-12)) throw std::invalid_argument("the two lowest-id camera centers coincide");
    initial_.direction = baseline / distance_;
  }

  const State& Initial() const { return initial_; }
  int NumCameraParams() const { return num_camera_params_; }
  int NumPoints() const { return num_points_; }
  int PointOffset(size_t t) const { return point_offset_[t]; }

  std::vector<TrackEvaluation> Evaluate(const State& state, bool jacobians) const {
    std::vector<TrackEvaluation> out(tracks_.size());
    const auto [b1, b2] = TangentBasis(state.direction);
    ParallelFor(static_cast<int>(tracks_.size()), options_.num_threads, [&](int t) {
      const Track& track = tracks_[t];
      const RobustLoss& loss = IsVirtual(track.track_class) ? options_.virtual_loss : options_.track_loss;
      TrackEvaluation& eval = out[t];
      for (const Observation& obs : track.observations) {
        const int k = index_of_image_.at(obs.image);
        const int c = camera_of_image_[k];
        const ReprojectionTerm term = EvaluateReprojection(
            Pose::FromCenter(state.rotations[k], state.centers[k]), CameraFor(k, state.focals[c]), state.points[t],
            obs.pixel, options_.plane_epsilon);
        if (!term.valid) continue;
        if (!term.residual.allFinite()) {
          if (eval.bad_image < 0) eval.bad_image = obs.image;
          continue;
        }
        const LossValue l = loss.Evaluate(term.residual.squaredNorm());
        if (!std::isfinite(l.value) && eval.bad_image < 0) eval.bad_image = obs.image;
        eval.cost += l.value;
        if (!jacobians) continue;
        ObservationTerm o;
        o.residual = term.residual;
        o.weight = l.derivative;
        o.point_jacobian = term.d_point;
        auto add = [&o](int column, const Vec2& j) {
          o.columns[o.num_columns] = column;
          o.camera_jacobian.col(o.num_columns++) = j;
        };
        if (k > 0) {
          const int base = image_offset_[k];
          for (int a = 0; a < 3; ++a) add(base + a, term.d_rotation.col(a));
          if (k == 1) {
            add(base + 3, term.d_center * (distance_ * b1.cross(state.direction)));
            add(base + 4, term.d_center * (distance_ * b2.cross(state.direction)));
          } else {
            for (int a = 0; a < 3; ++a) add(base + 3 + a, term.d_center.col(a));
          }
        }
        if (focal_offset_[c] >= 0) add(focal_offset_[c], term.d_focal);
        eval.terms.push_back(o);
      }
    });
    return out;
  }

  double Cost(const std::vector<TrackEvaluation>& evals) const {
    double cost = 0.0;
    for (size_t t = 0; t < evals.size(); ++t) {
      if (evals[t].bad_image >= 0 || !std::isfinite(evals[t].cost)) {
        throw std::runtime_error("non-finite cost in track " + std::to_string(t) + " at image " +
                                 std::to_string(evals[t].bad_image));
      }
      cost += evals[t].cost;
    }
    return cost;
  }

  // Returns false when the update leaves the valid domain.
  bool Apply(const State& state, const Eigen::VectorXd& dc, const std::vector<Vec3>& dp, State* out) const {
    *out = state;
    const auto [b1, b2] = TangentBasis(state.direction);
    for (size_t k = 1; k < images_.size(); ++k) {
      const int base = image_offset_[k];
      out->rotations[k] = Rotation::Exp(dc.segment<3>(base)) * state.rotations[k];
      if (k == 1) {
        const Vec3 omega = dc(base + 3) * b1 + dc(base + 4) * b2;
        out->direction = (Rotation::Exp(omega) * state.direction).normalized();
        out->centers[1] = out->centers[0] + distance_ * out->direction;
      } else {
        out->centers[k] += dc.segment<3>(base + 3);
      }
    }
    for (size_t c = 0; c < camera_ids_.size(); ++c) {
      if (focal_offset_[c] < 0) continue;
      out->focals[c] += dc(focal_offset_[c]);
      if (!(out->focals[c] > 0.0)) return false;
    }
    for (size_t t = 0; t < tracks_.size(); ++t) {
      if (point_offset_[t] >= 0) out->points[t] += dp[point_offset_[t]];
    }
    return true;
  }

  void Store(const State& state, GlobalReconstruction* recon, std::vector<Track>* tracks) const {
    for (size_t k = 0; k < images_.size(); ++k) {
      recon->poses[images_[k]] = Pose::FromCenter(state.rotations[k], state.centers[k]);
    }
    for (size_t c = 0; c < camera_ids_.size(); ++c) recon->focals[camera_ids_[c]] = state.focals[c];
    recon->points.clear();
    for (size_t t = 0; t < tracks->size(); ++t) {
      if (point_offset_[t] < 0) continue;
      (*tracks)[t].point = state.points[t];
      recon->points.push_back(state.points[t]);
    }
  }

 private:
  PinholeCamera CameraFor(int k, double focal) const {
    return PinholeCamera::Centered(focal, sizes_[k].width, sizes_[k].height);
  }

  const std::vector<Track>& tracks_;
  const BundleAdjustmentOptions& options_;
  std::vector<ImageId> images_;
  std::map<ImageId, int> index_of_image_;
  std::vector<CameraId> camera_ids_;
  std::map<CameraId, int> index_of_camera_;
  std::vector<int> camera_of_image_;
  std::vector<ImageSize> sizes_;
  std::vector<int> image_offset_;
  std::vector<int> focal_offset_;
  std::vector<int> point_offset_;
  int num_camera_params_ = 0;
  int num_points_ = 0;
  double distance_ = 0.0;
  State initial_;
};

// Weighted normal equations H = sum w J^T J, g = sum w J^T r, split into the
// camera block, point blocks and their coupling.
struct NormalEquations {
  Eigen::MatrixXd u;
  Eigen::VectorXd gc;
  std::vector<Mat3> v;
  std::vector<Vec3> gp;
  // Per point: camera columns and the matching rows of W.
  std::vector<std::vector<int>> w_columns;
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 3>> w;

  double GradientNorm() const {
    double norm = gc.size() ? gc.cwiseAbs().maxCoeff() : 0.0;
    for (const Vec3& g : gp) norm = std::max(norm, g.cwiseAbs().maxCoeff());
    return 2.0 * norm;
  }
};

NormalEquations Assemble(const Problem& problem, const std::vector<TrackEvaluation>& evals) {
  NormalEquations ne;
  const int nc = problem.NumCameraParams();
  ne.u = Eigen::MatrixXd::Zero(nc, nc);
  ne.gc = Eigen::VectorXd::Zero(nc);
  ne.v.assign(problem.NumPoints(), Mat3::Zero());
  ne.gp.assign(problem.NumPoints(), Vec3::Zero());
  ne.w_columns.resize(problem.NumPoints());
  ne.w.resize(problem.NumPoints());
  for (size_t t = 0; t < evals.size(); ++t) {
    const int p = problem.PointOffset(t);
    std::map<int, Eigen::RowVector3d> w_rows;
    for (const ObservationTerm& o : evals[t].terms) {
      const auto jc = o.camera_jacobian.leftCols(o.num_columns);
      const Eigen::MatrixXd jtj = o.weight * jc.transpose() * jc;
      const Eigen::VectorXd jtr = o.weight * jc.transpose() * o.residual;
      for (int a = 0; a < o.num_columns; ++a) {
        ne.gc(o.columns[a]) += jtr(a);
        for (int b = 0; b < o.num_columns; ++b) ne.u(o.columns[a], o.columns[b]) += jtj(a, b);
      }
      if (p < 0) continue;
      ne.v[p] += o.weight * o.point_jacobian.transpose() * o.point_jacobian;
      ne.gp[p] += o.weight * o.point_jacobian.transpose() * o.residual;
      const Eigen::Matrix<double, Eigen::Dynamic, 3> coupling = o.weight * jc.transpose() * o.point_jacobian;
      for (int a = 0; a < o.num_columns; ++a) {
        auto [it, inserted] = w_rows.try_emplace(o.columns[a], Eigen::RowVector3d::Zero());
        it->second += coupling.row(a);
      }
    }
    if (p < 0) continue;
    ne.w[p].resize(w_rows.size(), 3);
    int row = 0;
    for (const auto& [column, values] : w_rows) {
      ne.w_columns[p].push_back(column);
      ne.w[p].row(row++) = values;
    }
  }
  return ne;
}

double ClampedDiagonal(double d) { return std::clamp(d, 1e-6, 1e32); }

// Solves (H + mu D) h = -g by eliminating the point blocks.
bool SolveDamped(const NormalEquations& ne, double mu, Eigen::VectorXd* dc, std::vector<Vec3>* dp,
                 double* predicted) {
  const int nc = static_cast<int>(ne.gc.size());
  Eigen::MatrixXd s = ne.u;
  Eigen::VectorXd b = -ne.gc;
  for (int a = 0; a < nc; ++a) s(a, a) += mu * ClampedDiagonal(ne.u(a, a));
  std::vector<Mat3> v_inv(ne.v.size());
  for (size_t p = 0; p < ne.v.size(); ++p) {
    Mat3 v = ne.v[p];
    for (int a = 0; a < 3; ++a) v(a, a) += mu * ClampedDiagonal(ne.v[p](a, a));
    v_inv[p] = v.inverse();
    if (!v_inv[p].allFinite()) return false;
    const auto& cols = ne.w_columns[p];
    const Eigen::Matrix<double, Eigen::Dynamic, 3> wv = ne.w[p] * v_inv[p];
    const Eigen::MatrixXd reduce = wv * ne.w[p].transpose();
    const Eigen::VectorXd rhs = wv * ne.gp[p];
    for (size_t a = 0; a < cols.size(); ++a) {
      b(cols[a]) += rhs(a);
      for (size_t c = 0; c < cols.size(); ++c) s(cols[a], cols[c]) -= reduce(a, c);
    }
  }
  *dc = nc ? Eigen::VectorXd(s.ldlt().solve(b)) : Eigen::VectorXd();
  if (!dc->allFinite()) return false;
  dp->assign(ne.v.size(), Vec3::Zero());
  double gh = ne.gc.dot(*dc), hdh = 0.0;
  for (int a = 0; a < nc; ++a) hdh += ClampedDiagonal(ne.u(a, a)) * (*dc)(a) * (*dc)(a);
  for (size_t p = 0; p < ne.v.size(); ++p) {
    Vec3 rhs = -ne.gp[p];
    const auto& cols = ne.w_columns[p];
    for (size_t a = 0; a < cols.size(); ++a) rhs -= ne.w[p].row(a).transpose() * (*dc)(cols[a]);
    (*dp)[p] = v_inv[p] * rhs;
    gh += ne.gp[p].dot((*dp)[p]);
    for (int a = 0; a < 3; ++a) hdh += ClampedDiagonal(ne.v[p](a, a)) * (*dp)[p](a) * (*dp)[p](a);
  }
  // Cost model C + 2 g.h + h.H h; (H + mu D) h = -g gives the reduction.
  *predicted = -gh + mu * hdh;
  return std::all_of(dp->begin(), dp->end(), [](const Vec3& x) { return x.allFinite(); });
}

}  // namespace

ReprojectionTerm EvaluateReprojection(const Pose& pose, const PinholeCamera& camera, const Vec3& point,
                                      const Vec2& observed, double plane_epsilon) {
  ReprojectionTerm term;
  const Mat3 r = pose.rotation.Matrix();
  const Vec3 y = pose.Apply(point);
  if (std::abs(y.z()) < plane_epsilon) return term;
  term.valid = true;
  const double iz = 1.0 / y.z();
  term.residual = Vec2(camera.focal * y.x() * iz + camera.principal_point.x(),
                       camera.focal * y.y() * iz + camera.principal_point.y()) -
                  observed;
  Eigen::Matrix<double, 2, 3> dpi;
  dpi << camera.focal * iz, 0.0, -camera.focal * y.x() * iz * iz, 0.0, camera.focal * iz,
      -camera.focal * y.y() * iz * iz;
  term.d_rotation = -dpi * Hat(y);
  term.d_point = dpi * r;
  term.d_center = -term.d_point;
  term.d_focal = Vec2(y.x() * iz, y.y() * iz);
  return term;
}

double BundleAdjustmentCost(const GlobalReconstruction& recon, const std::vector<Track>& tracks,
                            const BundleAdjustmentOptions& options) {
  double cost = 0.0;
  for (const Track& track : tracks) {
    if (!track.point) continue;
    const RobustLoss& loss = IsVirtual(track.track_class) ? options.virtual_loss : options.track_loss;
    for (const Observation& obs : track.observations) {
      const ReprojectionTerm term = EvaluateReprojection(recon.poses.at(obs.image), recon.Camera(obs.image),
                                                         *track.point, obs.pixel, options.plane_epsilon);
      if (term.valid) cost += loss.Evaluate(term.residual.squaredNorm()).value;
    }
  }
  return cost;
}

BundleAdjustmentReport BundleAdjust(GlobalReconstruction* recon, std::vector<Track>* tracks,
                                    const BundleAdjustmentOptions& options) {
  const Problem problem(*recon, *tracks, options);
  State state = problem.Initial();
  BundleAdjustmentReport report;
  double cost = problem.Cost(problem.Evaluate(state, false));
  report.initial_cost = cost;
  report.accepted_costs.push_back(cost);
  double mu = options.initial_damping;
  double nu = 2.0;
  report.termination = "max_iterations";
  while (true) {
    if (cost <= options.absolute_cost_tolerance) {
      report.termination = "absolute_cost";
      break;
    }
    if (report.iterations >= options.max_iterations) break;
    const NormalEquations ne = Assemble(problem, problem.Evaluate(state, true));
    if (ne.GradientNorm() < options.gradient_tolerance) {
      report.termination = "gradient_tolerance";
      break;
    }
    bool accepted = false;
    while (!accepted && report.iterations < options.max_iterations) {
      ++report.iterations;
      Eigen::VectorXd dc;
      std::vector<Vec3> dp;
      double predicted = 0.0;
      State candidate;
      double new_cost = std::numeric_limits<double>::infinity();
      if (SolveDamped(ne, mu, &dc, &dp, &predicted) && problem.Apply(state, dc, dp, &candidate)) {
        const auto evals = problem.Evaluate(candidate, false);
        new_cost = 0.0;
        for (const auto& e : evals) new_cost += e.bad_image >= 0 ? std::numeric_limits<double>::infinity() : e.cost;
      }
      if (std::isfinite(new_cost) && new_cost < cost && predicted > 0.0) {
        const double rho = (cost - new_cost) / predicted;
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        const double relative = (cost - new_cost) / cost;
        state = std::move(candidate);
        cost = new_cost;
        report.accepted_costs.push_back(cost);
        ++report.accepted_steps;
        accepted = true;
        if (relative < options.cost_tolerance) {
          report.termination = "cost_tolerance";
        }
      } else {
        mu *= nu;
        nu *= 2.0;
        if (mu > 1e32) {
          report.termination = "damping_overflow";
          break;
        }
      }
    }
    if (report.termination != "max_iterations") break;
    if (!accepted) break;
  }
  report.final_cost = cost;
  problem.Store(state, recon, tracks);
  return report;
}

}  // namespace starsfm
