#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "starsfm/geometry.h"

namespace starsfm {
namespace {

// Rodrigues formula, written independently of the library.
Mat3 Rodrigues(const Vec3& axis, double angle) {
  const Vec3 u = axis.normalized();
  Mat3 k;
  k << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
  return Mat3::Identity() + std::sin(angle) * k + (1 - std::cos(angle)) * k * k;
}

Vec3 RandomUnit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

Rotation RandomRotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, M_PI);
  return Rotation::FromAxisAngle(RandomUnit(rng), u(rng));
}

Pose RandomPose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 3.0);
  return Pose{RandomRotation(rng), Vec3(n(rng), n(rng), n(rng))};
}

TEST(Rotation, GeodesicDistanceExamples) {
  EXPECT_DOUBLE_EQ(GeodesicDistance(Rotation(), Rotation()), 0.0);
  EXPECT_NEAR(GeodesicDistance(RotZ(M_PI / 2), Rotation()), M_PI / 2, 1e-12);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> theta(0.01, M_PI - 0.01);
  for (int k = 0; k < 100; ++k) {
    const Rotation r = RandomRotation(rng);
    const double t = theta(rng);
    const Rotation b = Rotation::FromMatrix(r.Matrix() * Rodrigues(RandomUnit(rng), t));
    EXPECT_NEAR(GeodesicDistance(r, b), t, 1e-9);
  }
}

TEST(Rotation, ExpMatchesRodrigues) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> theta(0.0, M_PI);
  for (int k = 0; k < 100; ++k) {
    const Vec3 u = RandomUnit(rng);
    const double t = theta(rng);
    EXPECT_LT((Rotation::Exp(t * u).Matrix() - Rodrigues(u, t)).norm(), 1e-12);
  }
}

TEST(Rotation, LogInvertsExp) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> theta(0.0, M_PI - 1e-3);
  for (int k = 0; k < 100; ++k) {
    const Vec3 w = theta(rng) * RandomUnit(rng);
    EXPECT_LT((Rotation::Exp(w).Log() - w).norm(), 1e-10);
  }
  EXPECT_LT(Rotation::Exp(Vec3(1e-14, 0, 0)).Log().norm(), 1e-13);
}

TEST(Rotation, CompositionStaysNormalized) {
  std::mt19937_64 rng(5);
  Rotation acc;
  for (int k = 0; k < 10000; ++k) acc = acc * RandomRotation(rng);
  EXPECT_NEAR(acc.Quaternion().norm(), 1.0, 1e-12);
  const Mat3 m = acc.Matrix();
  EXPECT_LT((m * m.transpose() - Mat3::Identity()).norm(), 1e-12);
}

TEST(Rotation, Associativity) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 100; ++k) {
    const Rotation a = RandomRotation(rng), b = RandomRotation(rng), c = RandomRotation(rng);
    EXPECT_LT(GeodesicDistance((a * b) * c, a * (b * c)), 1e-12);
  }
}

TEST(Rotation, TriangleInequality) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 200; ++k) {
    const Rotation a = RandomRotation(rng), b = RandomRotation(rng), c = RandomRotation(rng);
    EXPECT_LE(GeodesicDistance(a, c), GeodesicDistance(a, b) + GeodesicDistance(b, c) + 1e-10);
  }
}

TEST(Rotation, JacobianInverses) {
  // log(exp(a) E) ~ phi + Jl^-1 a and log(E exp(a)) ~ phi + Jr^-1 a.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> theta(0.1, 2.5);
  const double h = 1e-6;
  for (int k = 0; k < 50; ++k) {
    const Vec3 phi = theta(rng) * RandomUnit(rng);
    const Rotation e = Rotation::Exp(phi);
    Mat3 left, right;
    for (int c = 0; c < 3; ++c) {
      const Vec3 d = h * Vec3::Unit(c);
      left.col(c) = ((Rotation::Exp(d) * e).Log() - (Rotation::Exp(-d) * e).Log()) / (2 * h);
      right.col(c) = ((e * Rotation::Exp(d)).Log() - (e * Rotation::Exp(-d)).Log()) / (2 * h);
    }
    EXPECT_LT((left - LeftJacobianInverse(phi)).norm(), 1e-6 * left.norm());
    EXPECT_LT((right - RightJacobianInverse(phi)).norm(), 1e-6 * right.norm());
  }
}

TEST(Pose, InverseComposesToIdentity) {
  std::mt19937_64 rng(10);
  for (int k = 0; k < 100; ++k) {
    const Pose p = RandomPose(rng);
    const Pose id = Compose(p, p.Inverse());
    EXPECT_LT(id.rotation.Angle(), 1e-10);
    EXPECT_LT(id.translation.norm(), 1e-10);
  }
}

TEST(Pose, CenterRoundTrip) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 100; ++k) {
    const Pose p = RandomPose(rng);
    const Vec3 c = -(p.rotation.Matrix().transpose() * p.translation);
    EXPECT_LT((p.Center() - c).norm(), 1e-12);
    const Pose q = Pose::FromCenter(p.rotation, c);
    EXPECT_LT((q.translation - p.translation).norm(), 1e-12);
  }
}

TEST(Pose, RelativePoseExamples) {
  std::mt19937_64 rng(12);
  const Pose p = RandomPose(rng);
  const Pose same = RelativePose(p, p);
  EXPECT_LT(same.rotation.Angle(), 1e-12);
  EXPECT_LT(same.translation.norm(), 1e-12);

  const Pose t{Rotation(), Vec3(1, 2, 3)};
  EXPECT_LT((RelativePose(Pose::Identity(), t).translation - Vec3(1, 2, 3)).norm(), 1e-15);

  for (int k = 0; k < 100; ++k) {
    const Pose a = RandomPose(rng), b = RandomPose(rng);
    const Pose back = Compose(RelativePose(a, b), a);
    EXPECT_LT(GeodesicDistance(back.rotation, b.rotation), 1e-10);
    EXPECT_LT((back.translation - b.translation).norm(), 1e-10);
  }
}

TEST(Similarity, TransformPoseMovesWorldPoints) {
  // A world point seen by a camera keeps its camera-frame direction and has
  // its depth multiplied by the scale.
  std::mt19937_64 rng(13);
  const Similarity sim{RandomRotation(rng), Vec3(1, -2, 0.5), 2.5};
  const Pose p = RandomPose(rng);
  const Vec3 x(0.3, 0.7, -1.2);
  const Vec3 before = p.Apply(x);
  const Vec3 after = sim.TransformPose(p).Apply(sim.Apply(x));
  EXPECT_LT((after - 2.5 * before).norm(), 1e-12);
  const Pose back = sim.InverseTransformPose(sim.TransformPose(p));
  EXPECT_LT(GeodesicDistance(back.rotation, p.rotation), 1e-12);
  EXPECT_LT((back.translation - p.translation).norm(), 1e-11);
  EXPECT_LT((sim.ApplyInverse(sim.Apply(x)) - x).norm(), 1e-12);
}

TEST(PinholeCamera, ProjectExamples) {
  const PinholeCamera cam = PinholeCamera::Centered(500, 640, 480);
  const Projection p = cam.Project(Vec3(0, 0, 1));
  EXPECT_TRUE(p.valid);
  EXPECT_DOUBLE_EQ(p.pixel.x(), 320.0);
  EXPECT_DOUBLE_EQ(p.pixel.y(), 240.0);
  EXPECT_FALSE(cam.Project(Vec3(0, 0, -1)).valid);
  EXPECT_FALSE(cam.Project(Vec3(1, 1, 1e-9)).valid);
  // Behind the camera the pixel is still reported.
  const Projection behind = cam.Project(Vec3(1, 0, -2));
  EXPECT_NEAR(behind.pixel.x(), 320.0 - 250.0, 1e-12);
}

TEST(PinholeCamera, UnprojectProjectRoundTrip) {
  const PinholeCamera cam = PinholeCamera::Centered(321.5, 320, 240);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> ux(0, 320), uy(0, 240), ud(0.01, 100);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 x(ux(rng), uy(rng));
    const Projection p = cam.Project(cam.Unproject(x, ud(rng)));
    ASSERT_TRUE(p.valid);
    EXPECT_LT((p.pixel - x).norm(), 1e-9);
  }
}

TEST(DepthMap, RejectsNegative) {
  DepthMap d(2, 2);
  EXPECT_THROW(d.Set(0, 0, -1.0), std::invalid_argument);
}

TEST(DepthMap, BilinearSample) {
  DepthMap d(2, 2);
  d.Set(0, 0, 1.0);
  d.Set(1, 0, 2.0);
  d.Set(0, 1, 3.0);
  d.Set(1, 1, 4.0);
  double v;
  ASSERT_TRUE(d.Sample(Vec2(0.5, 0.5), &v));
  EXPECT_DOUBLE_EQ(v, 1.0);
  ASSERT_TRUE(d.Sample(Vec2(1.0, 1.0), &v));
  EXPECT_DOUBLE_EQ(v, 2.5);
  ASSERT_TRUE(d.Sample(Vec2(1.5, 0.5), &v));
  EXPECT_DOUBLE_EQ(v, 2.0);
  EXPECT_FALSE(d.Sample(Vec2(0.2, 0.5), &v));
  d.Set(1, 1, 0.0);
  EXPECT_FALSE(d.Sample(Vec2(1.0, 1.0), &v));
  ASSERT_TRUE(d.Sample(Vec2(0.5, 0.5), &v));
}

TEST(DepthMap, FileRoundTripAndLayout) {
  DepthMap d(3, 2);
  d.Set(0, 0, 1.5);
  d.Set(2, 1, 0.25);
  d.Set(1, 0, 1.0 / 3.0);
  const std::string path = (std::filesystem::temp_directory_path() / "starsfm_depth_test.dpth").string();
  WriteDepthMap(path, d);
  EXPECT_EQ(std::filesystem::file_size(path), 16u + 6u * 4u);

  // Independent decode of the byte layout.
  std::ifstream in(path, std::ios::binary);
  unsigned char header[16];
  in.read(reinterpret_cast<char*>(header), 16);
  EXPECT_EQ(std::string(reinterpret_cast<char*>(header), 4), "DPTH");
  EXPECT_EQ(header[4] | header[5] << 8, 3);
  EXPECT_EQ(header[8] | header[9] << 8, 2);
  float first;
  in.read(reinterpret_cast<char*>(&first), 4);
  EXPECT_EQ(first, 1.5f);

  const DepthMap back = ReadDepthMap(path);
  ASSERT_EQ(back.Width(), 3);
  ASSERT_EQ(back.Height(), 2);
  EXPECT_EQ(back.At(1, 0), static_cast<double>(static_cast<float>(1.0 / 3.0)));
  EXPECT_EQ(back.At(2, 1), 0.25);
  EXPECT_EQ(back.At(0, 1), 0.0);
  std::filesystem::remove(path);
}

TEST(DepthMap, ReadRejectsBadMagic) {
  const std::string path = (std::filesystem::temp_directory_path() / "starsfm_bad.dpth").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE0000000000000000";
  }
  EXPECT_THROW(ReadDepthMap(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(RobustLoss, Examples) {
  const LossValue zero = RobustLoss::Huber(1.0).Evaluate(0.0);
  EXPECT_EQ(zero.value, 0.0);
  EXPECT_EQ(zero.derivative, 1.0);
  const LossValue four = RobustLoss::Huber(1.0).Evaluate(4.0);
  EXPECT_DOUBLE_EQ(four.value, 3.0);
  EXPECT_DOUBLE_EQ(four.derivative, 0.5);
  EXPECT_NEAR(RobustLoss::Arctan(1.0).Evaluate(1e18).value, M_PI / 2, 1e-12);
  EXPECT_THROW(RobustLoss::Huber(1.0).Evaluate(-1.0), std::invalid_argument);
  EXPECT_EQ(RobustLoss::Huber(2.0).Evaluate(3.9).value, 3.9);
}

TEST(RobustLoss, DerivativeMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> us(0.01, 50.0);
  for (const RobustLoss loss : {RobustLoss::Trivial(), RobustLoss::Huber(1.3), RobustLoss::Arctan(2.0)}) {
    for (int k = 0; k < 100; ++k) {
      const double s = us(rng);
      const double h = 1e-6;
      const double fd = (loss.Evaluate(s + h).value - loss.Evaluate(s - h).value) / (2 * h);
      const double d = loss.Evaluate(s).derivative;
      EXPECT_LE(std::abs(fd - d), 1e-5 * std::max(std::abs(d), 1e-3)) << LossKindName(loss.kind) << " s=" << s;
    }
  }
}

TEST(RobustLoss, MonotoneAndZeroAtOrigin) {
  for (const RobustLoss loss : {RobustLoss::Huber(0.5), RobustLoss::Arctan(0.5)}) {
    EXPECT_EQ(loss.Evaluate(0.0).value, 0.0);
    double previous = 0.0;
    for (double s = 0.0; s < 100.0; s += 0.37) {
      const double v = loss.Evaluate(s).value;
      EXPECT_GE(v, previous);
      previous = v;
    }
  }
  EXPECT_EQ(ParseLossKind("arctan"), LossKind::kArctan);
  EXPECT_THROW(ParseLossKind("cauchy"), std::invalid_argument);
}

}  // namespace
}  // namespace starsfm
