#include "starsfm/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <set>

#include <Eigen/Geometry>

#include "starsfm/parallel.h"
#include "starsfm/tracks.h"

namespace starsfm {
namespace {

std::string ThresholdKey(double x) { return std::to_string(static_cast<int>(std::lround(x))); }

// Runs one stage, tagging failures and recording wall time when enabled.
template <typename F>
auto Stage(const std::string& name, bool timed, std::map<std::string, double>* timings, F&& fn) {
  const auto start = std::chrono::steady_clock::now();
  auto record = [&] {
    if (timed) {
      (*timings)[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record();
    } else {
      auto result = fn();
      record();
      return result;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

GlobalReconstruction Assemble(const std::map<ImageId, Rotation>& rotations, const std::map<ImageId, Vec3>& centers,
                              const std::map<CameraId, double>& focals, const BundleDirectory& bundle) {
  GlobalReconstruction recon;
  for (const auto& [id, rotation] : rotations) {
    auto c = centers.find(id);
    if (c == centers.end()) continue;
    recon.poses[id] = Pose::FromCenter(rotation, c->second);
    auto cam = bundle.camera_of_image.find(id);
    recon.camera_of_image[id] = cam == bundle.camera_of_image.end() ? id : cam->second;
  }
  for (const auto& star : bundle.stars) {
    for (size_t k = 0; k < star.members.size(); ++k) {
      const ImageId m = star.members[k];
      if (recon.poses.count(m) && !recon.image_sizes.count(m)) {
        recon.image_sizes[m] = ImageSize{star.depths[k].Width(), star.depths[k].Height()};
      }
    }
  }
  for (const auto& [id, camera] : recon.camera_of_image) {
    auto f = focals.find(camera);
    if (f == focals.end()) throw std::runtime_error("no focal estimate for camera " + std::to_string(camera));
    recon.focals[camera] = f->second;
  }
  return recon;
}

nlohmann::json AucJson(const AucTable& table) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : table) j[key] = value;
  return j;
}

}  // namespace

AucTable ComputeAucTable(const std::vector<PairError>& errors) {
  const std::vector<double> degrees = ErrorsInDegrees(errors);
  AucTable table;
  for (double x : kAucThresholdsDeg) table[ThresholdKey(x)] = AucAt(degrees, x);
  return table;
}

nlohmann::json EvalReportToJson(const EvalReport& report) {
  nlohmann::json checkpoints = nlohmann::json::object();
  for (const auto& [name, table] : report.checkpoints) checkpoints[name] = AucJson(table);
  nlohmann::json pairs = nlohmann::json::array();
  for (const PairError& e : report.pairs) {
    pairs.push_back({{"i", e.i}, {"j", e.j}, {"rotation", e.rotation}, {"translation", e.translation}, {"error", e.error}});
  }
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& [stage, seconds] : report.timings) timings[stage] = seconds;
  return {{"auc", AucJson(report.auc)},
          {"radius", report.graph.radius},
          {"fiedler", report.graph.fiedler},
          {"components", report.graph.num_components},
          {"num_images", report.num_images},
          {"registered", report.registered},
          {"checkpoints", checkpoints},
          {"pairs", pairs},
          {"timings", timings}};
}

BundleDirectory SimulateBundle(const PipelineConfig& config, SyntheticScene* scene_out) {
  BundleDirectory bundle;
  SyntheticScene scene;
  std::vector<StarGraph> star_graphs;
  Stage("viewgraph", false, nullptr, [&] {
    scene = GenerateScene(config.scene);
    bundle.graph = DynamicThresholdConnect(BuildCandidates(scene, config.candidates), config.schedule);
    star_graphs = DecomposeStars(bundle.graph, config.neighbor_cap);
  });
  Stage("local_inference", false, nullptr, [&] {
    config.noise.Validate();
    bundle.stars.resize(star_graphs.size());
    ParallelFor(static_cast<int>(star_graphs.size()), config.threads, [&](int k) {
      bundle.stars[k] = SimulateLocalStar(scene, star_graphs[k], config.noise, MixSeed(config.seed, 1, star_graphs[k].center));
    });
    std::vector<std::vector<Keypoint>> keypoints(scene.NumImages());
    ParallelFor(scene.NumImages(), config.threads, [&](int id) {
      keypoints[id] = ExtractKeypoints(scene, id, config.noise.keypoint_px, MixSeed(config.seed, 2, id));
    });
    bundle.classical = BuildClassicalTracks(keypoints, bundle.graph);
    for (ImageId id : bundle.graph.Vertices()) {
      bundle.keypoints[id] = keypoints[id];
      bundle.camera_of_image[id] = scene.camera_of_image[id];
    }
    bundle.truth = scene.Truth();
    CanonicalizeBundle(&bundle);
  });
  if (scene_out) *scene_out = std::move(scene);
  return bundle;
}

std::vector<OverlapResult> ComputeOverlaps(const PipelineConfig& config,
                                           const std::vector<LocalStarReconstruction>& stars) {
  std::vector<OverlapResult> overlaps(stars.size());
  ParallelFor(static_cast<int>(stars.size()), config.threads, [&](int k) {
    overlaps[k] = ComputeStarOverlap(stars[k], config.tau, config.overlap_stride);
  });
  return overlaps;
}

std::vector<ImageId> ConfidentComponent(const ViewGraph& filtered, double min_overlap) {
  ViewGraph confident;
  for (ImageId v : filtered.Vertices()) confident.AddVertex(v);
  for (const auto& [pair, data] : filtered.Edges()) {
    if (data.overlap >= min_overlap) confident.AddEdge(pair.first, pair.second, data);
  }
  auto components = confident.Components();
  if (components.empty() || components.front().size() < 2) throw std::runtime_error("no confidently overlapping image pair");
  return components.front();
}

AveragingOutput RunAveraging(const PipelineConfig& config, const BundleDirectory& bundle,
                             const std::vector<OverlapResult>& overlaps, const ViewGraph& filtered,
                             const std::vector<ImageId>& registered) {
  ViewGraph graph = filtered.InducedSubgraph(registered);
  std::vector<ImagePair> weak;
  for (const auto& [pair, data] : graph.Edges()) {
    if (data.overlap < config.min_overlap) weak.push_back(pair);
  }
  for (const auto& [i, j] : weak) graph.RemoveEdge(i, j);

  const auto measurements = ExtractMeasurements(bundle.stars, overlaps, graph);
  if (measurements.empty()) throw std::runtime_error("no relative measurements");
  const auto focals = AverageIntrinsics(bundle.stars, bundle.camera_of_image);

  AveragingOutput out;
  const auto init_rotations = InitializeRotationsSpanningTree(measurements);
  const auto init = InitializeCentersSpanningTree(init_rotations, measurements);
  out.spanning_tree = Assemble(init_rotations, init.centers, focals, bundle);
  out.spanning_tree.star_scales = init.scales;

  const RotationAveragingResult rotations = AverageRotations(measurements, config.rotation);
  SimilarityAveragingResult sim;
  std::map<int, double> scales;
  if (config.similarity_variant) {
    sim = AverageSimilarityVariant(rotations.rotations, measurements, config.similarity);
    for (const auto& [star, s] : sim.scales) scales[star] = 1.0 / s;
  } else {
    sim = AverageSimilarity(rotations.rotations, measurements, config.similarity);
    scales = sim.scales;
  }
  // A different anchor scale k rescales the world: s <- k s, c <- c / k.
  const double k = config.anchor_scale;
  std::map<ImageId, Vec3> centers = sim.centers;
  if (k != 1.0) {
    for (auto& [star, s] : scales) s *= k;
    for (auto& [id, c] : centers) c /= k;
  }
  out.averaged = Assemble(rotations.rotations, centers, focals, bundle);
  out.averaged.star_scales = scales;
  return out;
}

std::vector<Track> BuildTracks(const PipelineConfig& config, const BundleDirectory& bundle,
                               const std::vector<OverlapResult>& overlaps, const GlobalReconstruction& recon) {
  std::vector<Track> classical;
  std::vector<Track> feedforward;
  if (!config.skip_tracking) {
    if (config.feedforward_tracks) {
      std::vector<StarTrackSet> sets;
      for (size_t k = 0; k < bundle.stars.size(); ++k) {
        const auto& star = bundle.stars[k];
        StarTrackSet set{star.center, star.tracks, {}};
        for (ImageId m : star.members) {
          if (auto o = overlaps[k].Transitive(star.center, m)) set.weights[m] = *o;
        }
        sets.push_back(std::move(set));
      }
      feedforward = TriangulateTracks(SnapAndMerge(sets, bundle.keypoints, config.snap_radius), recon,
                                      config.min_parallax);
    }
    if (config.classical_tracks) classical = TriangulateTracks(bundle.classical, recon, config.min_parallax);
  }

  std::vector<Track> virtual_tracks;
  if (config.use_virtual_tracks) {
    std::vector<std::vector<Track>> per_star(bundle.stars.size());
    ParallelFor(static_cast<int>(bundle.stars.size()), config.threads, [&](int k) {
      const auto& star = bundle.stars[k];
      auto scale = recon.star_scales.find(star.center);
      if (scale == recon.star_scales.end() || !recon.IsRegistered(star.center)) return;
      auto generated = GenerateVirtualTracks(star, recon, scale->second, config.virtual_tracks,
                                             MixSeed(config.seed, 3, star.center));
      for (Track& t : generated) {
        std::erase_if(t.observations, [&](const Observation& o) { return !recon.IsRegistered(o.image); });
        if (t.observations.size() >= 2) per_star[k].push_back(std::move(t));
      }
    });
    for (auto& tracks : per_star) {
      for (Track& t : tracks) virtual_tracks.push_back(std::move(t));
    }
  }
  return MixTracks(classical, feedforward, virtual_tracks, config.pair_budget);
}

Similarity AlignCenters(const GlobalReconstruction& estimate, const GlobalReconstruction& truth) {
  std::vector<ImageId> common;
  for (const auto& [id, pose] : estimate.poses) {
    if (truth.IsRegistered(id)) common.push_back(id);
  }
  if (common.size() < 3) throw std::invalid_argument("alignment needs at least three common images");
  Eigen::Matrix3Xd src(3, common.size());
  Eigen::Matrix3Xd dst(3, common.size());
  for (size_t k = 0; k < common.size(); ++k) {
    src.col(k) = estimate.poses.at(common[k]).Center();
    dst.col(k) = truth.poses.at(common[k]).Center();
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, true);
  Similarity s;
  const Mat3 sr = t.topLeftCorner<3, 3>();
  s.scale = std::cbrt(sr.determinant());
  s.rotation = Rotation::FromMatrix(sr / s.scale);
  s.translation = t.topRightCorner<3, 1>();
  return s;
}

PipelineResult RunPipeline(const PipelineConfig& config, const BundleDirectory& bundle) {
  PipelineResult result;
  auto& timings = result.report.timings;
  const bool timed = config.timings;

  Stage("overlap", timed, &timings, [&] {
    if (bundle.stars.empty()) throw std::runtime_error("no star reconstructions");
    for (const auto& star : bundle.stars) star.Validate();
    result.overlaps = ComputeOverlaps(config, bundle.stars);
    result.filtered = FilterEdges(bundle.graph, result.overlaps, config.min_overlap);
    result.registered = ConfidentComponent(result.filtered, config.min_overlap);
  });

  Stage("averaging", timed, &timings, [&] {
    AveragingOutput out = RunAveraging(config, bundle, result.overlaps, result.filtered, result.registered);
    result.spanning_tree = std::move(out.spanning_tree);
    result.averaging = std::move(out.averaged);
  });

  result.final_recon = result.averaging;
  if (!config.skip_aba) {
    Stage("tracks", timed, &timings, [&] {
      result.tracks = BuildTracks(config, bundle, result.overlaps, result.averaging);
      if (result.tracks.empty()) throw std::runtime_error("no tracks for bundle adjustment");
    });
    Stage("ba", timed, &timings, [&] {
      result.ba = BundleAdjust(&result.final_recon, &result.tracks, config.ba);
    });
  }

  Stage("eval", timed, &timings, [&] {
    EvalReport& report = result.report;
    report.graph = ComputeGraphStats(result.filtered);
    report.num_images = static_cast<int>(bundle.graph.NumVertices());
    report.registered = static_cast<int>(result.final_recon.poses.size());
    if (bundle.truth) {
      report.checkpoints["spanning_tree"] = ComputeAucTable(PairwisePoseErrors(result.spanning_tree, *bundle.truth));
      report.checkpoints["averaging"] = ComputeAucTable(PairwisePoseErrors(result.averaging, *bundle.truth));
      report.pairs = PairwisePoseErrors(result.final_recon, *bundle.truth);
      report.auc = ComputeAucTable(report.pairs);
      report.checkpoints["final"] = report.auc;
    }
  });
  return result;
}

void WritePipelineOutputs(const std::string& dir, const PipelineResult& result) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  WriteJson((root / "spanning_tree.json").string(), ReconstructionToJson(result.spanning_tree));
  WriteJson((root / "averaging.json").string(), ReconstructionToJson(result.averaging));
  WriteJson((root / "reconstruction.json").string(), ReconstructionToJson(result.final_recon));
  WriteJson((root / "tracks.json").string(), TracksToJson(result.tracks));
  if (result.ba) WriteJson((root / "ba.json").string(), BundleReportToJson(*result.ba));
  WriteJson((root / "report.json").string(), EvalReportToJson(result.report));
}

}  // namespace starsfm
