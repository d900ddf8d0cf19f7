#include "starsfm/tracks.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <tuple>

#include <Eigen/Dense>

#include "starsfm/synthetic.h"

namespace starsfm {
namespace {

// Keypoints of one image bucketed on a beta-sized grid.
class KeypointGrid {
 public:
  KeypointGrid(const std::vector<Keypoint>& keypoints, double cell) : keypoints_(keypoints), cell_(cell) {
    for (size_t k = 0; k < keypoints.size(); ++k) cells_[Cell(keypoints[k].pixel)].push_back(static_cast<int>(k));
  }

  // Index of the nearest keypoint within radius, ties to the smaller
  // keypoint id; -1 when none.
  int Nearest(const Vec2& pixel, double radius) const {
    const auto [cx, cy] = Cell(pixel);
    int best = -1;
    double best_dist = radius;
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        auto it = cells_.find({cx + dx, cy + dy});
        if (it == cells_.end()) continue;
        for (int k : it->second) {
          const double dist = (keypoints_[k].pixel - pixel).norm();
          if (dist > best_dist) continue;
          if (best >= 0 && dist == best_dist && keypoints_[k].id > keypoints_[best].id) continue;
          best = k;
          best_dist = dist;
        }
      }
    }
    return best;
  }

 private:
  std::pair<long long, long long> Cell(const Vec2& p) const {
    return {static_cast<long long>(std::floor(p.x() / cell_)), static_cast<long long>(std::floor(p.y() / cell_))};
  }

  const std::vector<Keypoint>& keypoints_;
  double cell_;
  std::map<std::pair<long long, long long>, std::vector<int>> cells_;
};

auto ObservationKey(const Observation& o) { return std::make_tuple(o.image, o.pixel.x(), o.pixel.y()); }

Eigen::Matrix<double, 3, 4> ProjectionMatrix(const Pose& pose) {
  Eigen::Matrix<double, 3, 4> p;
  p.leftCols<3>() = pose.rotation.Matrix();
  p.col(3) = pose.translation;
  return p;
}

}  // namespace

double StarTrackSet::Weight(ImageId image) const {
  auto it = weights.find(image);
  return it == weights.end() ? 1.0 : it->second;
}

std::vector<Track> SnapAndMerge(const std::vector<StarTrackSet>& stars, const KeypointIndex& keypoints,
                                double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("snap radius must be positive");
  std::map<ImageId, KeypointGrid> grids;
  for (const auto& [image, kps] : keypoints) grids.emplace(image, KeypointGrid(kps, beta));

  struct Entry {
    int star_index;
    const Track* track;
    std::vector<Observation> observations;
  };
  std::vector<Entry> entries;
  // Flattened track index -> snapped keypoints (image, keypoint id).
  std::map<std::pair<ImageId, int>, std::vector<int>> users;
  for (size_t s = 0; s < stars.size(); ++s) {
    for (const Track& track : stars[s].tracks) {
      Entry entry{static_cast<int>(s), &track, track.observations};
      for (Observation& obs : entry.observations) {
        auto grid = grids.find(obs.image);
        if (grid == grids.end()) continue;
        const int k = grid->second.Nearest(obs.pixel, beta);
        if (k < 0) continue;
        const Keypoint& kp = keypoints.at(obs.image)[k];
        obs.pixel = kp.pixel;
        users[{obs.image, kp.id}].push_back(static_cast<int>(entries.size()));
      }
      entries.push_back(std::move(entry));
    }
  }

  UnionFind uf;
  for (const auto& [key, list] : users) {
    for (size_t k = 1; k < list.size(); ++k) uf.Union(list[0], list[k]);
  }
  std::map<int, std::vector<int>> groups;  // root -> members in input order
  for (int e = 0; e < static_cast<int>(entries.size()); ++e) groups[uf.Find(e)].push_back(e);
  std::vector<const std::vector<int>*> ordered;
  for (const auto& [root, members] : groups) ordered.push_back(&members);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->front() < b->front(); });

  std::vector<Track> merged;
  for (const std::vector<int>* members : ordered) {
    // Per image: (weight, star id) of the chosen observation.
    std::map<ImageId, std::tuple<double, ImageId, Observation>> chosen;
    for (int e : *members) {
      const StarTrackSet& star = stars[entries[e].star_index];
      for (const Observation& obs : entries[e].observations) {
        const double w = star.Weight(obs.image);
        auto it = chosen.find(obs.image);
        if (it == chosen.end()) {
          chosen.emplace(obs.image, std::make_tuple(w, star.star, obs));
          continue;
        }
        const auto& [best_w, best_star, best_obs] = it->second;
        if (w > best_w || (w == best_w && star.star < best_star)) it->second = std::make_tuple(w, star.star, obs);
      }
    }
    const Track& first = *entries[members->front()].track;
    Track track;
    track.track_class = first.track_class;
    track.source_star = stars[entries[members->front()].star_index].star;
    track.point_id = first.point_id;
    for (int e : *members) {
      if (entries[e].track->point_id != track.point_id) track.point_id = -1;
    }
    if (members->size() == 1) track.point = first.point;
    for (const auto& [image, value] : chosen) track.observations.push_back(std::get<2>(value));
    if (track.observations.size() >= 2) merged.push_back(std::move(track));
  }
  return merged;
}

bool TrackPrecedes(const Track& a, const Track& b) {
  if (a.observations.size() != b.observations.size()) return a.observations.size() > b.observations.size();
  auto first_image = [](const Track& t) {
    ImageId m = t.observations.front().image;
    for (const auto& o : t.observations) m = std::min(m, o.image);
    return m;
  };
  const ImageId fa = first_image(a), fb = first_image(b);
  if (fa != fb) return fa < fb;
  for (size_t k = 0; k < a.observations.size(); ++k) {
    const auto ka = ObservationKey(a.observations[k]), kb = ObservationKey(b.observations[k]);
    if (ka != kb) return ka < kb;
  }
  if (a.track_class != b.track_class) return a.track_class < b.track_class;
  if (a.point.has_value() != b.point.has_value()) return b.point.has_value();
  if (a.point && *a.point != *b.point) {
    return std::lexicographical_compare(a.point->data(), a.point->data() + 3, b.point->data(), b.point->data() + 3);
  }
  return std::tie(a.source_star, a.point_id) < std::tie(b.source_star, b.point_id);
}

std::vector<ImagePair> SpannedPairs(const Track& track) {
  std::vector<ImageId> images;
  for (const auto& o : track.observations) images.push_back(o.image);
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());
  std::vector<ImagePair> pairs;
  for (size_t a = 0; a < images.size(); ++a)
    for (size_t b = a + 1; b < images.size(); ++b) pairs.emplace_back(images[a], images[b]);
  return pairs;
}

std::vector<Track> MixTracks(const std::vector<Track>& classical, const std::vector<Track>& feedforward,
                             const std::vector<Track>& virtual_tracks, int pair_budget,
                             std::map<ImagePair, int>* pair_counts) {
  if (pair_budget <= 0) throw std::invalid_argument("pair budget must be positive");
  std::map<ImagePair, int> counts;
  std::vector<Track> mixed;
  auto sorted = [](const std::vector<Track>& tracks) {
    std::vector<const Track*> order;
    for (const Track& t : tracks) order.push_back(&t);
    std::stable_sort(order.begin(), order.end(), [](const Track* a, const Track* b) { return TrackPrecedes(*a, *b); });
    return order;
  };
  for (const Track* t : sorted(classical)) {
    for (const ImagePair& p : SpannedPairs(*t)) ++counts[p];
    mixed.push_back(*t);
  }
  for (const auto* set : {&feedforward, &virtual_tracks}) {
    for (const Track* t : sorted(*set)) {
      const auto pairs = SpannedPairs(*t);
      const bool fresh = std::any_of(pairs.begin(), pairs.end(), [&](const ImagePair& p) {
        auto it = counts.find(p);
        return it == counts.end() || it->second < pair_budget;
      });
      if (!fresh) continue;
      for (const ImagePair& p : pairs) ++counts[p];
      mixed.push_back(*t);
    }
  }
  if (pair_counts) *pair_counts = std::move(counts);
  return mixed;
}

std::vector<Track> GenerateVirtualTracks(const LocalStarReconstruction& star, const GlobalReconstruction& global,
                                         double scale, const VirtualTrackOptions& options, uint64_t seed) {
  if (options.samples < 1) throw std::invalid_argument("virtual track samples must be at least 1");
  if (!(options.global_ratio >= 0.0 && options.global_ratio <= 1.0)) {
    throw std::invalid_argument("global ratio must lie in [0, 1]");
  }
  if (!(scale > 0.0)) throw std::invalid_argument("star scale must be positive");
  const int li = star.IndexOf(star.center);
  if (li < 0) throw std::invalid_argument("star center missing from members");
  const DepthMap& depth = star.depths.at(li);
  const PinholeCamera center_camera = star.Camera(li);
  const Pose center_pose = global.poses.at(star.center);
  const Pose world_from_center = center_pose.Inverse();

  std::mt19937_64 rng(MixSeed(seed, 0x717, static_cast<uint64_t>(star.center)));
  const int w = depth.Width(), h = depth.Height();
  const int cols = std::max(1, static_cast<int>(std::lround(std::sqrt(double(options.samples) * w / h))));
  const int rows = (options.samples + cols - 1) / cols;
  std::vector<int> cells(static_cast<size_t>(rows) * cols);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::pair<Vec2, double>> samples;
  for (int cell : cells) {
    if (static_cast<int>(samples.size()) == options.samples) break;
    const double cw = double(w) / cols, ch = double(h) / rows;
    for (int attempt = 0; attempt < options.attempts_per_cell; ++attempt) {
      const Vec2 pixel((cell % cols + unit(rng)) * cw, (cell / cols + unit(rng)) * ch);
      double d = 0.0;
      if (depth.Sample(pixel, &d) && d > 0.0) {
        samples.emplace_back(pixel, d / scale);
        break;
      }
    }
  }
  if (samples.empty()) throw std::runtime_error("no valid depth in center image " + std::to_string(star.center));

  const int num_global = static_cast<int>(std::lround(options.global_ratio * samples.size()));
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_global(samples.size(), false);
  for (int k = 0; k < num_global; ++k) is_global[order[k]] = true;

  std::vector<Track> tracks;
  for (size_t k = 0; k < samples.size(); ++k) {
    const auto& [pixel, d] = samples[k];
    const Vec3 x_center = center_camera.Unproject(pixel, d);
    Track track;
    track.track_class = is_global[k] ? TrackClass::kVirtualGlobal : TrackClass::kVirtualLocal;
    track.point = world_from_center.Apply(x_center);
    track.source_star = star.center;
    for (size_t mi = 0; mi < star.members.size(); ++mi) {
      const ImageId m = star.members[mi];
      if (m == star.center) {
        track.observations.push_back(Observation{m, pixel});
        continue;
      }
      Vec3 y;
      PinholeCamera camera;
      if (is_global[k]) {
        if (!global.IsRegistered(m)) continue;
        y = global.poses.at(m).Apply(*track.point);
        camera = global.Camera(m);
      } else {
        const Pose rel = RelativePose(star.poses[li], star.poses[mi]);
        y = rel.rotation * x_center + rel.translation / scale;
        camera = star.Camera(static_cast<int>(mi));
      }
      const Projection p = camera.Project(y, options.plane_epsilon);
      if (!p.valid && !(y.z() < 0.0)) continue;  // on the imaging plane
      track.observations.push_back(Observation{m, p.pixel, !p.valid});
    }
    if (track.observations.size() >= 2) tracks.push_back(std::move(track));
  }
  return tracks;
}

Vec3 Triangulate(const Track& track, const GlobalReconstruction& recon, double min_parallax) {
  const int n = static_cast<int>(track.observations.size());
  if (n < 2) throw std::invalid_argument("triangulation needs at least two observations");
  std::vector<Pose> poses;
  std::vector<PinholeCamera> cameras;
  Eigen::MatrixXd a(2 * n, 4);
  for (int k = 0; k < n; ++k) {
    const Observation& obs = track.observations[k];
    poses.push_back(recon.poses.at(obs.image));
    cameras.push_back(recon.Camera(obs.image));
    const Vec3 ray = cameras.back().NormalizedRay(obs.pixel);
    const auto p = ProjectionMatrix(poses.back());
    a.row(2 * k) = ray.x() * p.row(2) - p.row(0);
    a.row(2 * k + 1) = ray.y() * p.row(2) - p.row(1);
    a.row(2 * k).normalize();
    a.row(2 * k + 1).normalize();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-14 * h.head<3>().norm()) throw std::invalid_argument("degenerate baseline: point at infinity");
  Vec3 x = h.head<3>() / h(3);

  double parallax = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Vec3 ri = x - poses[i].Center(), rj = x - poses[j].Center();
      parallax = std::max(parallax, std::atan2(ri.cross(rj).norm(), ri.dot(rj)));
    }
  }
  if (!(parallax >= min_parallax)) throw std::invalid_argument("degenerate baseline: parallax below threshold");

  // One Gauss-Newton step on the pixel reprojection error.
  Mat3 jtj = Mat3::Zero();
  Vec3 jtr = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    const Vec3 y = poses[k].Apply(x);
    if (std::abs(y.z()) < kDefaultPlaneEpsilon) continue;
    const double f = cameras[k].focal;
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << f / y.z(), 0.0, -f * y.x() / (y.z() * y.z()), 0.0, f / y.z(), -f * y.y() / (y.z() * y.z());
    const Eigen::Matrix<double, 2, 3> j = dpi * poses[k].rotation.Matrix();
    const Vec2 r = cameras[k].Project(y).pixel - track.observations[k].pixel;
    jtj += j.transpose() * j;
    jtr += j.transpose() * r;
  }
  const Vec3 step = jtj.ldlt().solve(-jtr);
  if (step.allFinite()) x += step;
  return x;
}

std::vector<Track> TriangulateTracks(const std::vector<Track>& tracks, const GlobalReconstruction& recon,
                                     double min_parallax) {
  std::vector<Track> out;
  for (const Track& track : tracks) {
    if (IsVirtual(track.track_class)) {
      out.push_back(track);
      continue;
    }
    Track t = track;
    std::erase_if(t.observations, [&](const Observation& o) { return !recon.IsRegistered(o.image); });
    if (t.observations.size() < 2) continue;
    try {
      t.point = Triangulate(t, recon, min_parallax);
    } catch (const std::invalid_argument&) {
      continue;
    }
    const bool in_front = std::any_of(t.observations.begin(), t.observations.end(), [&](const Observation& o) {
      return recon.poses.at(o.image).Apply(*t.point).z() > 0.0;
    });
    if (in_front) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace starsfm
