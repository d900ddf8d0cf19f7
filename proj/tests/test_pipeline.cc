#include <gtest/gtest.h>

#include <filesystem>

#include "starsfm/pipeline.h"

namespace starsfm {
namespace fs = std::filesystem;
namespace {

PipelineConfig LoopConfig(int cameras, std::vector<std::string> overrides = {}) {
  overrides.push_back("scene.num_cameras=" + std::to_string(cameras));
  return LoadConfig(std::nullopt, overrides, 1);
}

TEST(PipelineTest, NoiselessLoopIsRecoveredAtBothCheckpoints) {
  const PipelineConfig config = LoopConfig(30);
  const BundleDirectory bundle = SimulateBundle(config);
  const PipelineResult result = RunPipeline(config, bundle);
  EXPECT_EQ(result.report.registered, 30);
  EXPECT_GE(result.report.checkpoints.at("averaging").at("1"), 99.9);
  EXPECT_GE(result.report.checkpoints.at("final").at("1"), 99.9);
  EXPECT_GE(result.report.auc.at("1"), 99.9);
  ASSERT_TRUE(result.ba.has_value());
  EXPECT_LE(result.ba->final_cost, 1e-12);
  EXPECT_FALSE(result.tracks.empty());
}

TEST(PipelineTest, AucIsMonotoneInThreshold) {
  const PipelineConfig config = LoopConfig(16, {"noise.rotation_deg=2", "noise.center_fraction=0.02"});
  const PipelineResult result = RunPipeline(config, SimulateBundle(config));
  for (const auto& [name, table] : result.report.checkpoints) {
    double previous = 0.0;
    for (double x : kAucThresholdsDeg) {
      const double auc = table.at(std::to_string(static_cast<int>(x)));
      EXPECT_GE(auc, previous) << name;
      EXPECT_LE(auc, 100.0);
      previous = auc;
    }
  }
}

TEST(PipelineTest, SkipAbaEqualsAveragingCheckpoint) {
  const PipelineConfig config = LoopConfig(12, {"noise.rotation_deg=1", "stages.skip_aba=true"});
  const PipelineResult result = RunPipeline(config, SimulateBundle(config));
  EXPECT_FALSE(result.ba.has_value());
  EXPECT_TRUE(result.tracks.empty());
  EXPECT_EQ(ReconstructionToJson(result.final_recon), ReconstructionToJson(result.averaging));
  EXPECT_EQ(result.report.checkpoints.at("final"), result.report.checkpoints.at("averaging"));
}

TEST(PipelineTest, IngestedBundleMatchesInMemoryRun) {
  const PipelineConfig config =
      LoopConfig(12, {"noise.rotation_deg=1", "noise.center_fraction=0.01", "noise.depth_relative=0.01"});
  const BundleDirectory bundle = SimulateBundle(config);
  const fs::path dir = fs::temp_directory_path() / "starsfm_pipeline_ingest";
  fs::remove_all(dir);
  WriteBundleDirectory(dir.string(), bundle);
  const BundleDirectory ingested = ReadBundleDirectory(dir.string());
  fs::remove_all(dir);

  const PipelineResult a = RunPipeline(config, bundle);
  const PipelineResult b = RunPipeline(config, ingested);
  EXPECT_EQ(ReconstructionToJson(a.final_recon).dump(), ReconstructionToJson(b.final_recon).dump());
  EXPECT_EQ(ReconstructionToJson(a.averaging).dump(), ReconstructionToJson(b.averaging).dump());
  EXPECT_EQ(EvalReportToJson(a.report).dump(), EvalReportToJson(b.report).dump());
}

TEST(PipelineTest, DeterministicAcrossRunsAndThreadCounts) {
  const std::vector<std::string> noise = {"noise.rotation_deg=1", "noise.center_fraction=0.01"};
  std::vector<std::string> threaded = noise;
  threaded.push_back("threads=4");
  const PipelineConfig one = LoopConfig(12, noise);
  const PipelineConfig four = LoopConfig(12, threaded);
  const PipelineResult a = RunPipeline(one, SimulateBundle(one));
  const PipelineResult b = RunPipeline(one, SimulateBundle(one));
  const PipelineResult c = RunPipeline(four, SimulateBundle(four));
  EXPECT_EQ(ReconstructionToJson(a.final_recon).dump(), ReconstructionToJson(b.final_recon).dump());
  EXPECT_EQ(EvalReportToJson(a.report).dump(), EvalReportToJson(b.report).dump());
  ASSERT_TRUE(a.ba && c.ba);
  EXPECT_EQ(a.ba->accepted_costs, c.ba->accepted_costs);
  EXPECT_EQ(ReconstructionToJson(a.final_recon).dump(), ReconstructionToJson(c.final_recon).dump());
}

TEST(PipelineTest, AnchorScaleRescalesWorld) {
  const PipelineConfig base = LoopConfig(10, {"stages.skip_aba=true"});
  const PipelineConfig scaled = LoopConfig(10, {"stages.skip_aba=true", "similarity_averaging.anchor_scale=2"});
  const BundleDirectory bundle = SimulateBundle(base);
  const PipelineResult a = RunPipeline(base, bundle);
  const PipelineResult b = RunPipeline(scaled, bundle);
  for (const auto& [id, pose] : a.averaging.poses) {
    EXPECT_NEAR((b.averaging.poses.at(id).Center() - pose.Center() / 2.0).norm(), 0.0, 1e-12);
  }
  for (const auto& [star, s] : a.averaging.star_scales) EXPECT_NEAR(b.averaging.star_scales.at(star), 2.0 * s, 1e-12);
  EXPECT_NEAR(a.report.auc.at("1"), b.report.auc.at("1"), 1e-9);
}

TEST(PipelineTest, SimilarityVariantAlsoRecoversNoiselessLoop) {
  const PipelineConfig config = LoopConfig(12, {"similarity_averaging.variant=true", "stages.skip_aba=true"});
  const PipelineResult result = RunPipeline(config, SimulateBundle(config));
  EXPECT_GE(result.report.auc.at("1"), 99.9);
}

TEST(PipelineTest, StageFailuresCarryTheStageName) {
  const PipelineConfig config = LoopConfig(8);
  BundleDirectory empty;
  empty.graph.AddVertex(0);
  try {
    RunPipeline(config, empty);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.Stage(), "overlap");
  }

  BundleDirectory bundle = SimulateBundle(config);
  bundle.camera_of_image.clear();
  for (auto& star : bundle.stars) star.focals.assign(star.members.size(), 0.0);
  try {
    RunPipeline(config, bundle);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.Stage(), "overlap");
  }
}

TEST(PipelineTest, ReportJsonHasDocumentedShape) {
  const PipelineConfig config = LoopConfig(8, {"output.timings=true"});
  const PipelineResult result = RunPipeline(config, SimulateBundle(config));
  const nlohmann::json j = EvalReportToJson(result.report);
  for (const char* key : {"1", "3", "5", "10", "20", "30"}) EXPECT_TRUE(j.at("auc").contains(key));
  EXPECT_TRUE(j.at("radius").is_number_integer());
  EXPECT_TRUE(j.at("fiedler").is_number());
  for (const char* stage : {"overlap", "averaging", "tracks", "ba", "eval"}) EXPECT_TRUE(j.at("timings").contains(stage));
  EXPECT_EQ(j.at("pairs").size(), 28u);
}

TEST(PipelineTest, AlignCentersRecoversSimilarity) {
  const PipelineConfig config = LoopConfig(8);
  const GlobalReconstruction truth = *SimulateBundle(config).truth;
  const Similarity gauge{Rotation::Exp(Vec3(0.2, 0.4, -0.3)), Vec3(1.0, 2.0, 3.0), 0.5};
  GlobalReconstruction moved = truth;
  for (auto& [id, pose] : moved.poses) pose = gauge.TransformPose(pose);
  const Similarity back = AlignCenters(moved, truth);
  for (const auto& [id, pose] : moved.poses) {
    EXPECT_NEAR((back.Apply(pose.Center()) - truth.poses.at(id).Center()).norm(), 0.0, 1e-9);
  }
}

}  // namespace
}  // namespace starsfm
