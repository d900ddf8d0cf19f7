#include "starsfm/io.h"

#include <filesystem>
#include <fstream>
#include <regex>

namespace starsfm {
namespace fs = std::filesystem;
namespace {

json Vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 ToVec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json Quaternion(const Rotation& r) {
  const auto& q = r.Quaternion();
  return json::array({q.w(), q.x(), q.y(), q.z()});
}

Rotation ToRotation(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("expected a quaternion [w, x, y, z]");
  return Rotation::FromQuaternion(
      Eigen::Quaterniond(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()));
}

json MatrixToJson(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd MatrixFromJson(const json& j, size_t n) {
  if (!j.is_array() || j.size() != n) throw FormatError("overlap matrix has the wrong shape");
  Eigen::MatrixXd m(n, n);
  for (size_t r = 0; r < n; ++r) {
    if (!j[r].is_array() || j[r].size() != n) throw FormatError("overlap matrix has the wrong shape");
    for (size_t c = 0; c < n; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

// Wraps nlohmann exceptions so callers see one error type.
template <typename F>
auto Parse(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError("malformed " + what + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError("invalid " + what + ": " + e.what());
  }
}

}  // namespace

void CanonicalizeBundle(BundleDirectory* bundle) {
  for (auto& star : bundle->stars) {
    for (DepthMap& d : star.depths) d.RoundToFloat();
    for (Track& t : star.tracks) {
      t.source_star = star.center;
      t.point_id = -1;
    }
  }
  for (auto& [image, kps] : bundle->keypoints) {
    for (Keypoint& kp : kps) kp.point_id = -1;
  }
  for (Track& t : bundle->classical) {
    t.source_star = -1;
    t.point_id = -1;
  }
}

json ReadJson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("invalid JSON in " + path);
  return j;
}

void WriteJson(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << "\n";
}

json ViewGraphToJson(const ViewGraph& graph) {
  json edges = json::array();
  for (const auto& [pair, data] : graph.Edges()) {
    edges.push_back({{"i", pair.first}, {"j", pair.second}, {"alpha", data.alpha}, {"overlap", data.overlap}});
  }
  return {{"vertices", graph.Vertices()}, {"edges", edges}};
}

ViewGraph ViewGraphFromJson(const json& j) {
  return Parse("view graph", [&] {
    ViewGraph g;
    for (const auto& v : j.at("vertices")) g.AddVertex(v.get<ImageId>());
    for (const auto& e : j.at("edges")) {
      g.AddEdge(e.at("i").get<ImageId>(), e.at("j").get<ImageId>(),
                EdgeData{e.at("alpha").get<double>(), e.at("overlap").get<double>()});
    }
    return g;
  });
}

json OverlapToJson(const OverlapResult& o) {
  return {{"star", o.star},
          {"tau", o.tau},
          {"members", o.members},
          {"raw", MatrixToJson(o.raw)},
          {"transitive", MatrixToJson(o.transitive)}};
}

OverlapResult OverlapFromJson(const json& j) {
  return Parse("overlap report", [&] {
    OverlapResult o;
    o.star = j.at("star").get<ImageId>();
    o.tau = j.at("tau").get<double>();
    o.members = j.at("members").get<std::vector<ImageId>>();
    o.raw = MatrixFromJson(j.at("raw"), o.members.size());
    o.transitive = MatrixFromJson(j.at("transitive"), o.members.size());
    return o;
  });
}

json TracksToJson(const std::vector<Track>& tracks) {
  json out = json::array();
  for (const Track& t : tracks) {
    json obs = json::array();
    for (const auto& o : t.observations) obs.push_back({{"img", o.image}, {"u", o.pixel.x()}, {"v", o.pixel.y()}});
    out.push_back({{"class", TrackClassName(t.track_class)},
                   {"point", t.point ? Vec(*t.point) : json(nullptr)},
                   {"obs", obs}});
  }
  return out;
}

std::vector<Track> TracksFromJson(const json& j) {
  return Parse("tracks", [&] {
    if (!j.is_array()) throw FormatError("tracks must be a JSON array");
    std::vector<Track> tracks;
    for (const auto& t : j) {
      Track track;
      track.track_class = ParseTrackClass(t.at("class").get<std::string>());
      if (!t.at("point").is_null()) track.point = ToVec3(t.at("point"));
      for (const auto& o : t.at("obs")) {
        track.observations.push_back(
            Observation{o.at("img").get<ImageId>(), Vec2(o.at("u").get<double>(), o.at("v").get<double>())});
      }
      if (track.observations.size() < 2) throw FormatError("a track needs at least two observations");
      tracks.push_back(std::move(track));
    }
    return tracks;
  });
}

json BundleReportToJson(const BundleAdjustmentReport& r) {
  return {{"iterations", r.iterations},
          {"accepted_steps", r.accepted_steps},
          {"initial_cost", r.initial_cost},
          {"final_cost", r.final_cost},
          {"termination", r.termination},
          {"accepted_costs", r.accepted_costs}};
}

json ReconstructionToJson(const GlobalReconstruction& recon) {
  json images = json::array();
  for (const auto& [id, pose] : recon.poses) {
    json image = {{"id", id},
                  {"quaternion", Quaternion(pose.rotation)},
                  {"center", Vec(pose.Center())},
                  {"translation", Vec(pose.translation)}};
    if (auto it = recon.camera_of_image.find(id); it != recon.camera_of_image.end()) image["camera"] = it->second;
    if (auto it = recon.image_sizes.find(id); it != recon.image_sizes.end()) {
      image["width"] = it->second.width;
      image["height"] = it->second.height;
    }
    images.push_back(image);
  }
  json cameras = json::array();
  for (const auto& [id, focal] : recon.focals) cameras.push_back({{"id", id}, {"focal", focal}});
  json stars = json::array();
  for (const auto& [id, scale] : recon.star_scales) stars.push_back({{"id", id}, {"scale", scale}});
  json points = json::array();
  for (const Vec3& p : recon.points) points.push_back(Vec(p));
  return {{"images", images}, {"cameras", cameras}, {"stars", stars}, {"points", points}};
}

GlobalReconstruction ReconstructionFromJson(const json& j) {
  return Parse("reconstruction", [&] {
    GlobalReconstruction r;
    for (const auto& image : j.at("images")) {
      const ImageId id = image.at("id").get<ImageId>();
      const Rotation rotation = ToRotation(image.at("quaternion"));
      // The translation is exact; the center is a derived convenience.
      r.poses[id] = image.contains("translation") ? Pose{rotation, ToVec3(image.at("translation"))}
                                                  : Pose::FromCenter(rotation, ToVec3(image.at("center")));
      r.camera_of_image[id] = image.value("camera", id);
      if (image.contains("width")) r.image_sizes[id] = {image.at("width").get<int>(), image.at("height").get<int>()};
    }
    for (const auto& c : j.at("cameras")) r.focals[c.at("id").get<CameraId>()] = c.at("focal").get<double>();
    for (const auto& s : j.value("stars", json::array())) r.star_scales[s.at("id").get<int>()] = s.at("scale").get<double>();
    for (const auto& p : j.value("points", json::array())) r.points.push_back(ToVec3(p));
    return r;
  });
}

json WindowsToJson(const std::vector<SubsequenceWindow>& windows) {
  json out = json::array();
  for (const auto& w : windows) {
    out.push_back({{"center", w.center}, {"stride", w.stride}, {"length", w.length}, {"first", w.First()}});
  }
  return out;
}

json KeypointsToJson(const KeypointIndex& keypoints) {
  json images = json::array();
  for (const auto& [image, kps] : keypoints) {
    json list = json::array();
    for (const Keypoint& kp : kps) list.push_back(json::array({kp.pixel.x(), kp.pixel.y()}));
    images.push_back({{"img", image}, {"keypoints", list}});
  }
  return {{"images", images}};
}

KeypointIndex KeypointsFromJson(const json& j) {
  return Parse("keypoints", [&] {
    KeypointIndex index;
    for (const auto& image : j.at("images")) {
      const ImageId id = image.at("img").get<ImageId>();
      auto& list = index[id];
      for (const auto& kp : image.at("keypoints")) {
        list.push_back(Keypoint{id, Vec2(kp.at(0).get<double>(), kp.at(1).get<double>()), static_cast<int>(list.size())});
      }
    }
    return index;
  });
}

void WriteStarBundle(const std::string& root, const LocalStarReconstruction& star,
                     const std::map<ImageId, CameraId>& camera_of_image) {
  star.Validate();
  const fs::path dir = fs::path(root) / ("star_" + std::to_string(star.center));
  fs::create_directories(dir);
  json poses = json::array();
  json cameras = json::array();
  for (size_t k = 0; k < star.members.size(); ++k) {
    poses.push_back({{"quaternion", Quaternion(star.poses[k].rotation)}, {"translation", Vec(star.poses[k].translation)}});
    auto it = camera_of_image.find(star.members[k]);
    cameras.push_back(it == camera_of_image.end() ? star.members[k] : it->second);
    WriteDepthMap((dir / ("depth_" + std::to_string(star.members[k]) + ".dpth")).string(), star.depths[k]);
  }
  WriteJson((dir / "meta.json").string(), {{"center", star.center},
                                           {"members", star.members},
                                           {"cameras", cameras},
                                           {"poses", poses},
                                           {"focals", star.focals}});
  WriteJson((dir / "tracks.json").string(), TracksToJson(star.tracks));
}

LocalStarReconstruction ReadStarBundle(const std::string& star_dir, std::map<ImageId, CameraId>* camera_of_image) {
  const fs::path dir(star_dir);
  const json meta = ReadJson((dir / "meta.json").string());
  LocalStarReconstruction star = Parse("star meta", [&] {
    LocalStarReconstruction s;
    s.center = meta.at("center").get<ImageId>();
    s.members = meta.at("members").get<std::vector<ImageId>>();
    s.focals = meta.at("focals").get<std::vector<double>>();
    const auto cameras = meta.at("cameras").get<std::vector<CameraId>>();
    if (cameras.size() != s.members.size() || meta.at("poses").size() != s.members.size()) {
      throw FormatError("star meta arrays have inconsistent sizes");
    }
    for (size_t k = 0; k < s.members.size(); ++k) {
      const json& p = meta.at("poses")[k];
      s.poses.push_back(Pose{ToRotation(p.at("quaternion")), ToVec3(p.at("translation"))});
      if (camera_of_image) (*camera_of_image)[s.members[k]] = cameras[k];
    }
    return s;
  });
  for (ImageId m : star.members) {
    try {
      star.depths.push_back(ReadDepthMap((dir / ("depth_" + std::to_string(m) + ".dpth")).string()));
    } catch (const std::exception& e) {
      throw FormatError(e.what());
    }
  }
  if (fs::exists(dir / "tracks.json")) {
    star.tracks = TracksFromJson(ReadJson((dir / "tracks.json").string()));
    for (Track& t : star.tracks) t.source_star = star.center;
  }
  try {
    star.Validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return star;
}

void WriteBundleDirectory(const std::string& root, const BundleDirectory& bundle) {
  fs::create_directories(root);
  WriteJson((fs::path(root) / "viewgraph.json").string(), ViewGraphToJson(bundle.graph));
  for (const auto& star : bundle.stars) WriteStarBundle(root, star, bundle.camera_of_image);
  if (!bundle.keypoints.empty()) WriteJson((fs::path(root) / "keypoints.json").string(), KeypointsToJson(bundle.keypoints));
  if (!bundle.classical.empty()) WriteJson((fs::path(root) / "tracks.json").string(), TracksToJson(bundle.classical));
  if (bundle.truth) WriteJson((fs::path(root) / "truth.json").string(), ReconstructionToJson(*bundle.truth));
}

BundleDirectory ReadBundleDirectory(const std::string& root) {
  const fs::path dir(root);
  if (!fs::is_directory(dir)) throw FormatError("bundle directory not found: " + root);
  BundleDirectory bundle;
  bundle.graph = ViewGraphFromJson(ReadJson((dir / "viewgraph.json").string()));
  std::map<ImageId, fs::path> star_dirs;
  const std::regex pattern("star_(-?[0-9]+)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && std::regex_match(name, m, pattern)) star_dirs[std::stoi(m[1])] = entry.path();
  }
  for (const auto& [center, path] : star_dirs) {
    bundle.stars.push_back(ReadStarBundle(path.string(), &bundle.camera_of_image));
  }
  if (fs::exists(dir / "keypoints.json")) bundle.keypoints = KeypointsFromJson(ReadJson((dir / "keypoints.json").string()));
  if (fs::exists(dir / "tracks.json")) bundle.classical = TracksFromJson(ReadJson((dir / "tracks.json").string()));
  if (fs::exists(dir / "truth.json")) bundle.truth = ReconstructionFromJson(ReadJson((dir / "truth.json").string()));
  return bundle;
}

}  // namespace starsfm
