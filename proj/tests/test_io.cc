#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "starsfm/io.h"
#include "starsfm/synthetic.h"

namespace starsfm {
namespace fs = std::filesystem;
namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& Path() const { return path_; }

 private:
  fs::path path_;
};

LocalStarReconstruction SmallStar() {
  SceneConfig config;
  config.num_cameras = 8;
  const SyntheticScene scene = GenerateScene(config);
  NoiseModel noise;
  noise.rotation_deg = 1.0;
  noise.scale_min = 0.5;
  noise.scale_max = 2.0;
  return SimulateLocalStar(scene, StarGraph{2, {1, 2, 3}}, noise, 5);
}

TEST(IoTest, ViewGraphRoundTrip) {
  ViewGraph g;
  for (ImageId v : {0, 1, 2, 5}) g.AddVertex(v);
  g.AddEdge(0, 1, EdgeData{0.9, 0.5});
  g.AddEdge(1, 2, EdgeData{0.75, 1.0});
  const json j = ViewGraphToJson(g);
  EXPECT_EQ(j.at("edges")[0].at("alpha"), 0.9);
  const ViewGraph back = ViewGraphFromJson(j);
  EXPECT_EQ(back.Vertices(), g.Vertices());
  EXPECT_EQ(back.NumEdges(), 2u);
  EXPECT_DOUBLE_EQ(back.Edge(1, 0).overlap, 0.5);
  EXPECT_EQ(ViewGraphToJson(back), j);
}

TEST(IoTest, ViewGraphRejectsMalformedInput) {
  EXPECT_THROW(ViewGraphFromJson(json{{"vertices", {0, 1}}}), FormatError);
  EXPECT_THROW(ViewGraphFromJson(json::parse(R"({"vertices":[0],"edges":[{"i":0,"j":0,"alpha":1,"overlap":1}]})")),
               FormatError);
}

TEST(IoTest, TracksRoundTripExactly) {
  Track a;
  a.track_class = TrackClass::kVirtualGlobal;
  a.point = Vec3(0.1, 1.0 / 3.0, -2.5);
  a.observations = {{0, Vec2(1.25, 2.0 / 7.0)}, {3, Vec2(-4.0, 1e-17)}};
  Track b;
  b.observations = {{1, Vec2(5.0, 6.0)}, {2, Vec2(7.0, 8.0)}};
  const json j = TracksToJson({a, b});
  EXPECT_TRUE(j[1].at("point").is_null());
  EXPECT_EQ(j[0].at("class"), "virtual-global");
  const auto back = TracksFromJson(json::parse(j.dump()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].track_class, TrackClass::kVirtualGlobal);
  EXPECT_EQ(*back[0].point, *a.point);
  EXPECT_EQ(back[0].observations[0].pixel, a.observations[0].pixel);
  EXPECT_EQ(back[0].observations[1].pixel, a.observations[1].pixel);
  EXPECT_FALSE(back[1].point.has_value());
}

TEST(IoTest, TracksRejectShortOrMalformed) {
  EXPECT_THROW(TracksFromJson(json::parse(R"([{"class":"classical","point":null,"obs":[{"img":0,"u":1,"v":2}]}])")),
               FormatError);
  EXPECT_THROW(TracksFromJson(json::parse(R"([{"class":"mystery","point":null,"obs":[]}])")), FormatError);
  EXPECT_THROW(TracksFromJson(json::object()), FormatError);
}

TEST(IoTest, OverlapRoundTrip) {
  OverlapResult o;
  o.star = 4;
  o.tau = 3.0;
  o.members = {3, 4, 5};
  o.raw = Eigen::MatrixXd::Random(3, 3).cwiseAbs();
  o.transitive = Eigen::MatrixXd::Random(3, 3).cwiseAbs();
  const OverlapResult back = OverlapFromJson(json::parse(OverlapToJson(o).dump()));
  EXPECT_EQ(back.members, o.members);
  EXPECT_EQ(back.raw, o.raw);
  EXPECT_EQ(back.transitive, o.transitive);
  EXPECT_EQ(OverlapToJson(o).at("raw").size(), 3u);
}

TEST(IoTest, ReconstructionRoundTripKeepsPosesBitExact) {
  SceneConfig config;
  config.num_cameras = 6;
  GlobalReconstruction truth = GenerateScene(config).Truth();
  truth.star_scales[2] = 1.7;
  truth.points = {Vec3(1, 2, 3)};
  json j = ReconstructionToJson(truth);
  EXPECT_EQ(j.at("images").size(), 6u);
  EXPECT_EQ(j.at("images")[0].at("quaternion").size(), 4u);
  const GlobalReconstruction back = ReconstructionFromJson(json::parse(j.dump()));
  // Rotations renormalize on read, so write the result again and compare.
  EXPECT_EQ(ReconstructionToJson(ReconstructionFromJson(ReconstructionToJson(back))), ReconstructionToJson(back));
  for (const auto& [id, pose] : truth.poses) {
    EXPECT_EQ(back.poses.at(id).translation, pose.translation);
    EXPECT_LT(GeodesicDistance(back.poses.at(id).rotation, pose.rotation), 1e-15);
  }
  EXPECT_EQ(back.focals, truth.focals);
  EXPECT_EQ(back.star_scales, truth.star_scales);
  EXPECT_EQ(back.points, truth.points);
  EXPECT_EQ(back.image_sizes.at(0).width, config.width);
}

TEST(IoTest, StarBundleRoundTrip) {
  TempDir dir("starsfm_io_star");
  const LocalStarReconstruction star = SmallStar();
  const std::map<ImageId, CameraId> cameras = {{1, 7}, {2, 7}, {3, 8}};
  WriteStarBundle(dir.Path().string(), star, cameras);
  const fs::path star_dir = dir.Path() / "star_2";
  EXPECT_TRUE(fs::exists(star_dir / "meta.json"));
  EXPECT_TRUE(fs::exists(star_dir / "depth_3.dpth"));
  EXPECT_TRUE(fs::exists(star_dir / "tracks.json"));

  std::map<ImageId, CameraId> read_cameras;
  const LocalStarReconstruction back = ReadStarBundle(star_dir.string(), &read_cameras);
  EXPECT_EQ(read_cameras, cameras);
  EXPECT_EQ(back.center, 2);
  EXPECT_EQ(back.members, star.members);
  EXPECT_EQ(back.focals, star.focals);
  ASSERT_EQ(back.tracks.size(), star.tracks.size());
  for (size_t k = 0; k < star.members.size(); ++k) {
    EXPECT_EQ(back.poses[k].translation, star.poses[k].translation);
    EXPECT_LT(GeodesicDistance(back.poses[k].rotation, star.poses[k].rotation), 1e-15);
    DepthMap rounded = star.depths[k];
    rounded.RoundToFloat();
    EXPECT_EQ(back.depths[k].Values(), rounded.Values());
  }
}

TEST(IoTest, CanonicalBundleSurvivesDiskRoundTrip) {
  TempDir dir("starsfm_io_bundle");
  SceneConfig config;
  config.num_cameras = 8;
  const SyntheticScene scene = GenerateScene(config);
  BundleDirectory bundle;
  bundle.graph = GroundTruthViewGraph(scene, CandidateOptions{});
  NoiseModel noise;
  noise.rotation_deg = 2.0;
  std::vector<std::vector<Keypoint>> keypoints(scene.NumImages());
  for (const StarGraph& s : DecomposeStars(bundle.graph)) bundle.stars.push_back(SimulateLocalStar(scene, s, noise, 3));
  for (ImageId id = 0; id < scene.NumImages(); ++id) {
    keypoints[id] = ExtractKeypoints(scene, id, 0.3, 9);
    bundle.keypoints[id] = keypoints[id];
    bundle.camera_of_image[id] = scene.camera_of_image[id];
  }
  bundle.classical = BuildClassicalTracks(keypoints, bundle.graph);
  bundle.truth = scene.Truth();
  CanonicalizeBundle(&bundle);

  WriteBundleDirectory(dir.Path().string(), bundle);
  const BundleDirectory back = ReadBundleDirectory(dir.Path().string());
  EXPECT_EQ(ViewGraphToJson(back.graph), ViewGraphToJson(bundle.graph));
  EXPECT_EQ(KeypointsToJson(back.keypoints), KeypointsToJson(bundle.keypoints));
  EXPECT_EQ(TracksToJson(back.classical), TracksToJson(bundle.classical));
  EXPECT_EQ(ReconstructionToJson(*back.truth), ReconstructionToJson(*bundle.truth));
  // Camera ids are stored per star member.
  for (const auto& star : bundle.stars) {
    for (ImageId m : star.members) EXPECT_EQ(back.camera_of_image.at(m), bundle.camera_of_image.at(m));
  }
  ASSERT_EQ(back.stars.size(), bundle.stars.size());
  for (size_t s = 0; s < bundle.stars.size(); ++s) {
    const auto& a = bundle.stars[s];
    const auto& b = back.stars[s];
    EXPECT_EQ(a.center, b.center);
    for (size_t k = 0; k < a.members.size(); ++k) {
      EXPECT_EQ(a.poses[k].rotation.Quaternion().coeffs(), b.poses[k].rotation.Quaternion().coeffs());
      EXPECT_EQ(a.poses[k].translation, b.poses[k].translation);
      EXPECT_EQ(a.depths[k].Values(), b.depths[k].Values());
    }
    EXPECT_EQ(TracksToJson(a.tracks), TracksToJson(b.tracks));
  }
}

TEST(IoTest, MissingBundleIsAFormatError) {
  EXPECT_THROW(ReadBundleDirectory("/nonexistent/starsfm"), FormatError);
  TempDir dir("starsfm_io_broken");
  std::ofstream(dir.Path() / "viewgraph.json") << "{ broken";
  EXPECT_THROW(ReadBundleDirectory(dir.Path().string()), FormatError);
}

TEST(IoTest, KeypointIdsAreListPositions) {
  KeypointIndex index;
  index[3] = {Keypoint{3, Vec2(1, 2), 0, 5}, Keypoint{3, Vec2(3, 4), 1, -1}};
  const KeypointIndex back = KeypointsFromJson(KeypointsToJson(index));
  ASSERT_EQ(back.at(3).size(), 2u);
  EXPECT_EQ(back.at(3)[1].id, 1);
  EXPECT_EQ(back.at(3)[1].pixel, Vec2(3, 4));
  EXPECT_EQ(back.at(3)[0].image, 3);
}

}  // namespace
}  // namespace starsfm
