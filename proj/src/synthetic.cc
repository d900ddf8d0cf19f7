#include "starsfm/synthetic.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace starsfm {

namespace {

constexpr double kPi = std::numbers::pi;
// Keypoints closer than this to another keypoint are dropped in both images
// so that snapping within 1 px is unambiguous.
constexpr double kKeypointSeparationPx = 3.0;
constexpr double kMinCoverage = 0.3;

uint64_t SplitMix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Camera looking along `direction` with world +z up; camera y points down.
Rotation LookRotation(const Vec3& direction) {
  const Vec3 z = direction.normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return Rotation::FromMatrix(r);
}

Rotation RandomRotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return Rotation::FromQuaternion(q);
}

Vec3 GaussianVec(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  return Vec3(n(rng), n(rng), n(rng));
}

Rectangle MakeRect(const Vec3& center, const Vec3& u, const Vec3& v, double hu, double hv,
                   int room) {
  return Rectangle{center, u.normalized(), v.normalized(), hu, hv, room};
}

struct WallSpec {
  bool skip_neg_x = false;
  bool skip_pos_x = false;
};

// Interior of an axis-aligned box room with floor at z = 0.
void AddRoom(std::vector<Rectangle>* rects, const Vec3& center, double half_x, double half_y,
             double height, int room, WallSpec skip = {}) {
  const double hz = 0.5 * height;
  const Vec3 mid = center + Vec3(0, 0, hz);
  if (!skip.skip_pos_x)
    rects->push_back(MakeRect(mid + Vec3(half_x, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), half_y, hz, room));
  if (!skip.skip_neg_x)
    rects->push_back(MakeRect(mid - Vec3(half_x, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), half_y, hz, room));
  rects->push_back(MakeRect(mid + Vec3(0, half_y, 0), Vec3::UnitX(), Vec3::UnitZ(), half_x, hz, room));
  rects->push_back(MakeRect(mid - Vec3(0, half_y, 0), Vec3::UnitX(), Vec3::UnitZ(), half_x, hz, room));
  rects->push_back(MakeRect(center, Vec3::UnitX(), Vec3::UnitY(), half_x, half_y, room));
  rects->push_back(MakeRect(center + Vec3(0, 0, height), Vec3::UnitX(), Vec3::UnitY(), half_x, half_y, room));
}

// Wall in the plane x = x0 spanning y in [-half_y, half_y], z in [0, height],
// with a door opening |y| < door_half, z < door_height.
void AddDoorWall(std::vector<Rectangle>* rects, double x0, double half_y, double height,
                 double door_half, double door_height, int room) {
  const double side = 0.5 * (half_y - door_half);
  const double hz = 0.5 * height;
  rects->push_back(MakeRect(Vec3(x0, door_half + side, hz), Vec3::UnitY(), Vec3::UnitZ(), side, hz, room));
  rects->push_back(MakeRect(Vec3(x0, -door_half - side, hz), Vec3::UnitY(), Vec3::UnitZ(), side, hz, room));
  const double lintel = 0.5 * (height - door_height);
  rects->push_back(MakeRect(Vec3(x0, 0, door_height + lintel), Vec3::UnitY(), Vec3::UnitZ(), door_half,
                            lintel, room));
}

void AddLoopCameras(SyntheticScene* scene, std::mt19937_64& rng, const Vec3& room_center, int count,
                    double radius, int room) {
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double step = 2.0 * kPi / count;
  for (int k = 0; k < count; ++k) {
    const double theta = k * step + 0.15 * step * jitter(rng);
    const Vec3 dir(std::cos(theta), std::sin(theta), 0.0);
    const Vec3 center = room_center + radius * dir + Vec3(0, 0, 1.5 + 0.05 * jitter(rng));
    const Rotation tilt = Rotation::Exp(Vec3(0.02 * jitter(rng), 0.02 * jitter(rng), 0.0));
    scene->poses.push_back(Pose::FromCenter(tilt * LookRotation(dir), center));
    scene->room_of_image.push_back(room);
  }
}

void AddFeaturePoints(SyntheticScene* scene, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  const double spacing = scene->config.feature_spacing;
  for (const Rectangle& rect : scene->surfaces) {
    const int nu = std::max(1, static_cast<int>(std::floor(2.0 * rect.half_u / spacing)));
    const int nv = std::max(1, static_cast<int>(std::floor(2.0 * rect.half_v / spacing)));
    for (int a = 0; a < nu; ++a) {
      for (int b = 0; b < nv; ++b) {
        const double u = -rect.half_u + (a + 0.5 + jitter(rng)) * (2.0 * rect.half_u / nu);
        const double v = -rect.half_v + (b + 0.5 + jitter(rng)) * (2.0 * rect.half_v / nv);
        scene->points.push_back(rect.center + u * rect.axis_u + v * rect.axis_v);
      }
    }
  }
}

}  // namespace

uint64_t MixSeed(uint64_t seed, uint64_t a, uint64_t b) {
  return SplitMix64(SplitMix64(SplitMix64(seed) ^ a) ^ (b * 0xD6E8FEB86659FD93ull));
}

bool Rectangle::Intersect(const Vec3& origin, const Vec3& direction, double* t) const {
  const Vec3 n = Normal();
  const double denom = n.dot(direction);
  if (std::abs(denom) < 1e-15) return false;
  const double hit = n.dot(center - origin) / denom;
  if (!(hit > 0.0)) return false;
  const Vec3 p = origin + hit * direction - center;
  if (std::abs(p.dot(axis_u)) > half_u || std::abs(p.dot(axis_v)) > half_v) return false;
  *t = hit;
  return true;
}

std::string TrajectoryName(Trajectory t) {
  switch (t) {
    case Trajectory::kLoop: return "loop";
    case Trajectory::kCorridor: return "corridor";
    case Trajectory::kCluster: return "cluster";
    case Trajectory::kTwoRooms: return "two_rooms";
  }
  return "loop";
}

Trajectory ParseTrajectory(const std::string& name) {
  if (name == "loop") return Trajectory::kLoop;
  if (name == "corridor") return Trajectory::kCorridor;
  if (name == "cluster") return Trajectory::kCluster;
  if (name == "two_rooms") return Trajectory::kTwoRooms;
  throw std::invalid_argument("unknown trajectory: " + name);
}

PinholeCamera SyntheticScene::Camera(ImageId id) const {
  return PinholeCamera::Centered(focals.at(camera_of_image.at(id)), config.width, config.height);
}

GlobalReconstruction SyntheticScene::Truth() const {
  GlobalReconstruction truth;
  for (int i = 0; i < NumImages(); ++i) {
    truth.poses[i] = poses[i];
    truth.camera_of_image[i] = camera_of_image[i];
    truth.image_sizes[i] = ImageSize{config.width, config.height};
  }
  truth.focals = focals;
  return truth;
}

double SyntheticScene::Diameter() const {
  double diameter = 0.0;
  for (size_t a = 0; a < poses.size(); ++a) {
    for (size_t b = a + 1; b < poses.size(); ++b) {
      diameter = std::max(diameter, (poses[a].Center() - poses[b].Center()).norm());
    }
  }
  return diameter;
}

double CastRay(const std::vector<Rectangle>& surfaces, const Vec3& origin, const Vec3& direction) {
  double best = std::numeric_limits<double>::infinity();
  for (const Rectangle& rect : surfaces) {
    double t;
    if (rect.Intersect(origin, direction, &t) && t < best) best = t;
  }
  return best;
}

DepthMap RenderDepth(const SyntheticScene& scene, ImageId id) {
  const PinholeCamera camera = scene.Camera(id);
  const Pose& pose = scene.poses.at(id);
  const Rotation r_inv = pose.rotation.Inverse();
  const Vec3 origin = pose.Center();
  DepthMap depth(camera.width, camera.height);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      // The camera-frame ray has unit z, so the ray parameter is the depth.
      const Vec3 ray = camera.NormalizedRay(Vec2(x + 0.5, y + 0.5));
      const double t = CastRay(scene.surfaces, origin, r_inv * ray);
      if (std::isfinite(t)) depth.Set(x, y, t);
    }
  }
  return depth;
}

void SyntheticScene::Finalize() {
  auto rendered = std::make_shared<std::vector<DepthMap>>();
  for (int i = 0; i < NumImages(); ++i) rendered->push_back(RenderDepth(*this, i));
  depths = rendered;

  features.assign(NumImages(), {});
  for (int i = 0; i < NumImages(); ++i) {
    const PinholeCamera camera = Camera(i);
    const Pose& pose = poses[i];
    const Vec3 origin = pose.Center();
    std::vector<std::pair<int, Vec2>> visible;
    for (int p = 0; p < static_cast<int>(points.size()); ++p) {
      const Vec3 x_cam = pose.Apply(points[p]);
      if (x_cam.z() < 0.1) continue;
      const Projection proj = camera.Project(x_cam);
      if (!proj.valid || proj.pixel.x() < 1.0 || proj.pixel.y() < 1.0 ||
          proj.pixel.x() > camera.width - 1.0 || proj.pixel.y() > camera.height - 1.0) {
        continue;
      }
      const double t = CastRay(surfaces, origin, points[p] - origin);
      if (t < 1.0 - 1e-9) continue;  // occluded
      visible.emplace_back(p, proj.pixel);
    }
    // Isolation filter on a coarse hash grid.
    std::unordered_map<int64_t, std::vector<int>> grid;
    auto cell_key = [](int cx, int cy) { return (static_cast<int64_t>(cx) << 32) ^ (cy & 0xffffffff); };
    for (int k = 0; k < static_cast<int>(visible.size()); ++k) {
      const Vec2& px = visible[k].second;
      grid[cell_key(static_cast<int>(px.x() / kKeypointSeparationPx),
                    static_cast<int>(px.y() / kKeypointSeparationPx))]
          .push_back(k);
    }
    std::vector<std::pair<int, Vec2>> isolated;
    for (int k = 0; k < static_cast<int>(visible.size()); ++k) {
      const Vec2& px = visible[k].second;
      const int cx = static_cast<int>(px.x() / kKeypointSeparationPx);
      const int cy = static_cast<int>(px.y() / kKeypointSeparationPx);
      bool crowded = false;
      for (int dx = -1; dx <= 1 && !crowded; ++dx) {
        for (int dy = -1; dy <= 1 && !crowded; ++dy) {
          auto it = grid.find(cell_key(cx + dx, cy + dy));
          if (it == grid.end()) continue;
          for (int other : it->second) {
            if (other != k && (visible[other].second - px).norm() < kKeypointSeparationPx) {
              crowded = true;
              break;
            }
          }
        }
      }
      if (!crowded) isolated.push_back(visible[k]);
    }
    features[i] = std::move(isolated);
  }
}

SyntheticScene GenerateScene(const SceneConfig& config) {
  if (config.num_cameras < 2) throw std::invalid_argument("at least 2 cameras required");
  if (config.width <= 0 || config.height <= 0) throw std::invalid_argument("image size must be positive");
  if (!(config.focal > 0.0)) throw std::invalid_argument("focal must be positive");
  if (!(config.feature_spacing > 0.0)) throw std::invalid_argument("feature spacing must be positive");

  std::mt19937_64 rng(MixSeed(config.seed, 0x5CE7E));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  SyntheticScene scene;
  scene.config = config;
  const int n = config.num_cameras;

  switch (config.trajectory) {
    case Trajectory::kLoop: {
      AddRoom(&scene.surfaces, Vec3::Zero(), 5.0, 5.0, 3.0, 0);
      AddLoopCameras(&scene, rng, Vec3::Zero(), n, 1.5, 0);
      break;
    }
    case Trajectory::kCorridor: {
      const double length = (n - 1) * config.corridor_spacing;
      const double half_len = 0.5 * length + 4.0;
      const double mid_x = 0.5 * length;
      scene.surfaces.push_back(
          MakeRect(Vec3(mid_x, 3.0, 1.5), Vec3::UnitX(), Vec3::UnitZ(), half_len, 1.5, 0));
      scene.surfaces.push_back(
          MakeRect(Vec3(mid_x, 0.75, 0.0), Vec3::UnitX(), Vec3::UnitY(), half_len, 2.75, 0));
      for (int k = 0; k < n; ++k) {
        const Vec3 center(k * config.corridor_spacing + 0.05 * jitter(rng), 0.1 * jitter(rng),
                          1.5 + 0.05 * jitter(rng));
        const double yaw = kPi / 2.0 + 0.05 * jitter(rng);
        const Rotation tilt = Rotation::Exp(Vec3(0.02 * jitter(rng), 0.02 * jitter(rng), 0.0));
        scene.poses.push_back(
            Pose::FromCenter(tilt * LookRotation(Vec3(std::cos(yaw), std::sin(yaw), 0.0)), center));
        scene.room_of_image.push_back(0);
      }
      break;
    }
    case Trajectory::kCluster: {
      AddRoom(&scene.surfaces, Vec3::Zero(), 8.0, 8.0, 4.0, 0);
      // Central block (4 sides + top).
      const double h = 0.75;
      const Vec3 c(0, 0, h);
      scene.surfaces.push_back(MakeRect(c + Vec3(h, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), h, h, 0));
      scene.surfaces.push_back(MakeRect(c - Vec3(h, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), h, h, 0));
      scene.surfaces.push_back(MakeRect(c + Vec3(0, h, 0), Vec3::UnitX(), Vec3::UnitZ(), h, h, 0));
      scene.surfaces.push_back(MakeRect(c - Vec3(0, h, 0), Vec3::UnitX(), Vec3::UnitZ(), h, h, 0));
      scene.surfaces.push_back(MakeRect(c + Vec3(0, 0, h), Vec3::UnitX(), Vec3::UnitY(), h, h, 0));
      const double arc = 2.0 * kPi / 3.0;
      for (int k = 0; k < n; ++k) {
        const double theta = -0.5 * arc + arc * k / std::max(1, n - 1) + 0.02 * jitter(rng);
        const Vec3 center(4.0 * std::cos(theta), 4.0 * std::sin(theta), 1.6 + 0.1 * jitter(rng));
        scene.poses.push_back(Pose::FromCenter(LookRotation(c - center), center));
        scene.room_of_image.push_back(0);
      }
      break;
    }
    case Trajectory::kTwoRooms: {
      const int bridge_cams = config.bridge ? 8 : 0;
      const int per_room = (n - bridge_cams) / 2;
      if (per_room < 4) throw std::invalid_argument("two_rooms needs at least 4 cameras per room");
      const Vec3 a_center(-6.0, 0.0, 0.0);
      const Vec3 b_center(6.0, 0.0, 0.0);
      if (config.bridge) {
        AddRoom(&scene.surfaces, a_center, 4.0, 4.0, 3.0, 0, WallSpec{false, true});
        AddRoom(&scene.surfaces, b_center, 4.0, 4.0, 3.0, 1, WallSpec{true, false});
        AddDoorWall(&scene.surfaces, -2.0, 4.0, 3.0, 1.0, 2.4, 0);
        AddDoorWall(&scene.surfaces, 2.0, 4.0, 3.0, 1.0, 2.4, 1);
        // Hallway between the doors.
        scene.surfaces.push_back(MakeRect(Vec3(0, 1.0, 1.5), Vec3::UnitX(), Vec3::UnitZ(), 2.0, 1.5, 2));
        scene.surfaces.push_back(MakeRect(Vec3(0, -1.0, 1.5), Vec3::UnitX(), Vec3::UnitZ(), 2.0, 1.5, 2));
        scene.surfaces.push_back(MakeRect(Vec3(0, 0, 0), Vec3::UnitX(), Vec3::UnitY(), 2.0, 1.0, 2));
        scene.surfaces.push_back(MakeRect(Vec3(0, 0, 3.0), Vec3::UnitX(), Vec3::UnitY(), 2.0, 1.0, 2));
      } else {
        AddRoom(&scene.surfaces, a_center, 4.0, 4.0, 3.0, 0);
        AddRoom(&scene.surfaces, b_center, 4.0, 4.0, 3.0, 1);
      }
      AddLoopCameras(&scene, rng, a_center, per_room, 1.5, 0);
      if (config.bridge) {
        for (double x : {-3.0, -1.0, 1.0, 3.0}) {
          for (double sign : {1.0, -1.0}) {
            const Vec3 center(x + 0.05 * jitter(rng), 0.05 * jitter(rng), 1.5);
            scene.poses.push_back(Pose::FromCenter(LookRotation(Vec3(sign, 0.0, 0.0)), center));
            scene.room_of_image.push_back(2);
          }
        }
      }
      const int first_b = static_cast<int>(scene.poses.size());
      AddLoopCameras(&scene, rng, b_center, n - bridge_cams - per_room, 1.5, 1);
      // Congruent rooms: same loop index gives a look-alike view.
      const int dopp = std::min(config.num_doppelgangers, per_room);
      for (int k = 0; k < dopp; ++k) {
        const int a = k * per_room / std::max(1, dopp);
        scene.doppelgangers.insert(MakePair(a, first_b + a));
      }
      break;
    }
  }

  for (int i = 0; i < scene.NumImages(); ++i) {
    const CameraId cam = config.shared_camera ? 0 : i;
    scene.camera_of_image.push_back(cam);
    scene.focals[cam] = config.focal;
  }
  if (scene.surfaces.empty()) throw std::invalid_argument("scene has no surfaces");
  AddFeaturePoints(&scene, rng);
  scene.Finalize();
  for (int i = 0; i < scene.NumImages(); ++i) {
    if (scene.TruthDepth(i).ValidFraction() < kMinCoverage) {
      throw std::invalid_argument("camera " + std::to_string(i) + " sees too little geometry");
    }
  }
  return scene;
}

double CovisibleFraction(const SyntheticScene& scene, ImageId i, ImageId j, int stride) {
  if (i == j) return 1.0;
  const PinholeCamera cam_i = scene.Camera(i);
  const PinholeCamera cam_j = scene.Camera(j);
  const Pose& pose_i = scene.poses.at(i);
  const Pose& pose_j = scene.poses.at(j);
  const Pose inv_i = pose_i.Inverse();
  const Vec3 origin_j = pose_j.Center();
  const DepthMap& depth = scene.TruthDepth(i);
  int total = 0;
  int covisible = 0;
  for (int y = stride / 2; y < cam_i.height; y += stride) {
    for (int x = stride / 2; x < cam_i.width; x += stride) {
      ++total;
      const double d = depth.At(x, y);
      if (d <= 0.0) continue;
      const Vec3 world = inv_i.Apply(cam_i.Unproject(Vec2(x + 0.5, y + 0.5), d));
      const Projection proj = cam_j.Project(pose_j.Apply(world));
      if (!proj.valid || !cam_j.InBounds(proj.pixel)) continue;
      const double t = CastRay(scene.surfaces, origin_j, world - origin_j);
      if (t < 1.0 - 1e-6) continue;
      ++covisible;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(covisible) / total;
}

double SimulateSimilarity(const SyntheticScene& scene, ImageId i, ImageId j) {
  if (scene.doppelgangers.count(MakePair(i, j))) {
    std::mt19937_64 rng(MixSeed(scene.config.seed, 0xD0991E, MixSeed(MakePair(i, j).first, MakePair(i, j).second)));
    return std::uniform_real_distribution<double>(kDoppelgangerScoreMin, kDoppelgangerScoreMax)(rng);
  }
  const double covis = 0.5 * (CovisibleFraction(scene, i, j) + CovisibleFraction(scene, j, i));
  return std::clamp(std::sqrt(covis), 0.0, 1.0);
}

namespace {

std::vector<ImagePair> CandidatePairs(const SyntheticScene& scene, const CandidateOptions& options) {
  const int n = scene.NumImages();
  std::set<ImagePair> pairs(scene.doppelgangers.begin(), scene.doppelgangers.end());
  if (options.budget > 0) {
    std::map<ImagePair, double> covis;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        covis[{i, j}] = 0.5 * (CovisibleFraction(scene, i, j) + CovisibleFraction(scene, j, i));
      }
    }
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<double, int>> ranked;
      for (int j = 0; j < n; ++j) {
        if (j != i) ranked.emplace_back(-covis[MakePair(i, j)], j);
      }
      std::sort(ranked.begin(), ranked.end());
      for (int k = 0; k < std::min(options.budget, static_cast<int>(ranked.size())); ++k) {
        if (ranked[k].first < 0.0) pairs.insert(MakePair(i, ranked[k].second));
      }
    }
  } else {
    const bool ring = scene.config.trajectory == Trajectory::kLoop;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        int dist = j - i;
        if (ring) dist = std::min(dist, n - dist);
        if (dist <= options.window) pairs.insert({i, j});
      }
    }
  }
  return {pairs.begin(), pairs.end()};
}

}  // namespace

CandidateScores BuildCandidates(const SyntheticScene& scene, const CandidateOptions& options) {
  CandidateScores scores;
  scores.retrieval_budget = options.budget;
  for (int i = 0; i < scene.NumImages(); ++i) scores.AddImage(i);
  for (const auto& [i, j] : CandidatePairs(scene, options)) {
    scores.Add(i, j, SimulateSimilarity(scene, i, j));
  }
  return scores;
}

ViewGraph GroundTruthViewGraph(const SyntheticScene& scene, const CandidateOptions& options) {
  ViewGraph graph;
  for (int i = 0; i < scene.NumImages(); ++i) graph.AddVertex(i);
  for (const auto& [i, j] : CandidatePairs(scene, options)) {
    const double covis = 0.5 * (CovisibleFraction(scene, i, j) + CovisibleFraction(scene, j, i));
    if (covis > 0.0) graph.AddEdge(i, j, EdgeData{std::sqrt(covis), covis});
  }
  return graph;
}

void NoiseModel::Validate() const {
  for (double v : {rotation_deg, center_fraction, depth_relative, focal_relative,
                   outlier_probability, track_jitter_px, keypoint_px}) {
    if (!(v >= 0.0)) throw std::invalid_argument("noise parameters must be non-negative");
  }
  if (!(scale_min > 0.0) || scale_max < scale_min) {
    throw std::invalid_argument("scale jitter range must be positive and ordered");
  }
  if (outlier_probability > 1.0) throw std::invalid_argument("outlier probability above 1");
}

LocalStarReconstruction SimulateLocalStar(const SyntheticScene& scene, const StarGraph& star,
                                          const NoiseModel& noise, uint64_t seed) {
  noise.Validate();
  for (ImageId m : star.members) {
    if (m < 0 || m >= scene.NumImages()) throw std::invalid_argument("star member not in scene");
  }
  std::mt19937_64 rng(MixSeed(seed, 0x57A2, static_cast<uint64_t>(star.center)));
  std::normal_distribution<double> unit(0.0, 1.0);

  LocalStarReconstruction local;
  local.center = star.center;
  local.members = star.members;
  std::sort(local.members.begin(), local.members.end());

  Similarity gauge;
  gauge.rotation = RandomRotation(rng);
  gauge.translation = GaussianVec(rng, 5.0);
  const double log_lo = std::log(noise.scale_min);
  const double log_hi = std::log(noise.scale_max);
  gauge.scale = std::exp(log_lo + (log_hi - log_lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  local.gauge = gauge;

  const Vec3 center_world = scene.poses.at(star.center).Center();
  std::vector<double> distances;
  for (ImageId m : local.members) {
    if (m != star.center) distances.push_back((scene.poses[m].Center() - center_world).norm());
  }
  std::sort(distances.begin(), distances.end());
  const double baseline = distances.empty() ? 1.0 : distances[distances.size() / 2];

  // Per-axis std so that the mean perturbation angle equals rotation_deg.
  const double rot_sigma = noise.rotation_deg * kPi / 180.0 * std::sqrt(kPi / 8.0);
  for (ImageId m : local.members) {
    Pose pose = gauge.TransformPose(scene.poses[m]);
    Vec3 center = pose.Center();
    Rotation rotation = pose.rotation;
    if (rot_sigma > 0.0) rotation = Rotation::Exp(GaussianVec(rng, rot_sigma)) * rotation;
    if (noise.center_fraction > 0.0) {
      center += GaussianVec(rng, noise.center_fraction * baseline * gauge.scale);
    }
    local.poses.push_back(Pose::FromCenter(rotation, center));

    double focal = scene.focals.at(scene.camera_of_image.at(m));
    if (noise.focal_relative > 0.0) focal *= std::max(0.1, 1.0 + noise.focal_relative * unit(rng));
    local.focals.push_back(focal);

    DepthMap depth = scene.TruthDepth(m);
    for (double& v : depth.MutableValues()) {
      if (v <= 0.0) continue;
      v *= gauge.scale;
      if (noise.depth_relative > 0.0) v *= std::max(1e-3, 1.0 + noise.depth_relative * unit(rng));
    }
    local.depths.push_back(std::move(depth));
  }

  if (noise.outlier_probability > 0.0 && local.members.size() > 1 &&
      std::uniform_real_distribution<double>(0.0, 1.0)(rng) < noise.outlier_probability) {
    std::vector<int> candidates;
    for (int k = 0; k < static_cast<int>(local.members.size()); ++k) {
      if (local.members[k] != star.center) candidates.push_back(k);
    }
    const int victim = candidates[std::uniform_int_distribution<int>(0, candidates.size() - 1)(rng)];
    const Vec3 anchor = local.poses[local.IndexOf(star.center)].Center();
    local.poses[victim] =
        Pose::FromCenter(RandomRotation(rng), anchor + GaussianVec(rng, baseline * gauge.scale));
  }

  // Tracks: feature points seen by at least two members.
  std::map<int, std::vector<Observation>> by_point;
  for (ImageId m : local.members) {
    for (const auto& [point_id, pixel] : scene.features.at(m)) {
      Vec2 obs = pixel;
      if (noise.quantize_tracks) {
        obs = Vec2(std::floor(obs.x()) + 0.5, std::floor(obs.y()) + 0.5);
      }
      if (noise.track_jitter_px > 0.0) {
        std::uniform_real_distribution<double> j(-noise.track_jitter_px, noise.track_jitter_px);
        obs += Vec2(j(rng), j(rng));
      }
      by_point[point_id].push_back(Observation{m, obs});
    }
  }
  std::vector<int> eligible;
  for (const auto& [point_id, obs] : by_point) {
    if (obs.size() >= 2) eligible.push_back(point_id);
  }
  std::shuffle(eligible.begin(), eligible.end(), rng);
  if (static_cast<int>(eligible.size()) > noise.max_tracks_per_star) {
    eligible.resize(noise.max_tracks_per_star);
  }
  std::sort(eligible.begin(), eligible.end());
  for (int point_id : eligible) {
    Track track;
    track.track_class = TrackClass::kFeedforward;
    track.observations = by_point[point_id];
    track.source_star = star.center;
    track.point_id = point_id;
    local.tracks.push_back(std::move(track));
  }
  return local;
}

std::vector<Keypoint> ExtractKeypoints(const SyntheticScene& scene, ImageId id, double noise_px,
                                       uint64_t seed) {
  std::mt19937_64 rng(MixSeed(seed, 0xFEA7, static_cast<uint64_t>(id)));
  std::normal_distribution<double> n(0.0, noise_px > 0.0 ? noise_px : 1.0);
  std::vector<Keypoint> keypoints;
  int next_id = 0;
  for (const auto& [point_id, pixel] : scene.features.at(id)) {
    Keypoint kp{id, pixel, next_id++, point_id};
    if (noise_px > 0.0) kp.pixel += Vec2(n(rng), n(rng));
    keypoints.push_back(kp);
  }
  return keypoints;
}

std::vector<Track> BuildClassicalTracks(const std::vector<std::vector<Keypoint>>& keypoints,
                                        const ViewGraph& graph) {
  std::map<int, std::vector<const Keypoint*>> by_point;
  for (const auto& image_keypoints : keypoints) {
    for (const Keypoint& kp : image_keypoints) {
      if (kp.point_id >= 0 && graph.Vertices().count(kp.image)) by_point[kp.point_id].push_back(&kp);
    }
  }
  std::vector<Track> tracks;
  for (const auto& [point_id, kps] : by_point) {
    if (kps.size() < 2) continue;
    UnionFind uf;
    for (const Keypoint* kp : kps) uf.Find(kp->image);
    for (size_t a = 0; a < kps.size(); ++a) {
      for (size_t b = a + 1; b < kps.size(); ++b) {
        if (graph.HasEdge(kps[a]->image, kps[b]->image)) uf.Union(kps[a]->image, kps[b]->image);
      }
    }
    std::map<ImageId, std::vector<Observation>> groups;
    for (const Keypoint* kp : kps) groups[uf.Find(kp->image)].push_back(Observation{kp->image, kp->pixel});
    for (auto& [root, obs] : groups) {
      if (obs.size() < 2) continue;
      std::sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.image < b.image; });
      Track track;
      track.track_class = TrackClass::kClassical;
      track.observations = std::move(obs);
      track.point_id = point_id;
      tracks.push_back(std::move(track));
    }
  }
  return tracks;
}

}  // namespace starsfm
