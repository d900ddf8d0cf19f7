#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace starsfm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

using ImageId = int;
using CameraId = int;

// Skew-symmetric matrix with Hat(a) * b = a x b.
Mat3 Hat(const Vec3& v);

// SO(3) exponential / logarithm maps in axis-angle form.
Mat3 ExpSO3(const Vec3& omega);
Vec3 LogSO3(const Mat3& rotation);

// Inverse left/right Jacobians of SO(3). For E = exp(phi):
//   log(exp(a) E) ~= phi + LeftJacobianInverse(phi) a
//   log(E exp(a)) ~= phi + RightJacobianInverse(phi) a
Mat3 LeftJacobianInverse(const Vec3& phi);
Mat3 RightJacobianInverse(const Vec3& phi);

// Element of SO(3), stored as a unit quaternion. Every constructor and
// composition re-normalizes.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}

  static Rotation FromQuaternion(const Eigen::Quaterniond& q);
  static Rotation FromMatrix(const Mat3& m);
  static Rotation FromAxisAngle(const Vec3& axis, double angle);
  static Rotation Exp(const Vec3& omega);

  Vec3 Log() const;
  // Rotation angle in [0, pi].
  double Angle() const;
  Rotation Inverse() const;
  Mat3 Matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& Quaternion() const { return q_; }

  Rotation operator*(const Rotation& other) const;
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

 private:
  explicit Rotation(const Eigen::Quaterniond& q);
  Eigen::Quaterniond q_;
};

Rotation RotZ(double angle);

// Angle of a * b^T, in [0, pi].
double GeodesicDistance(const Rotation& a, const Rotation& b);

// Camera-from-world rigid transform: x_cam = R * x_world + t.
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static Pose Identity() { return Pose{}; }
  static Pose FromCenter(const Rotation& rotation, const Vec3& center);

  // c = -R^T t
  Vec3 Center() const;
  Vec3 Apply(const Vec3& x_world) const { return rotation * x_world + translation; }
  Pose Inverse() const;
};

// (a o b)(x) = a(b(x))
Pose Compose(const Pose& a, const Pose& b);

// Pose mapping camera-i coordinates to camera-j coordinates, so that
// Compose(RelativePose(p_i, p_j), p_i) == p_j.
Pose RelativePose(const Pose& p_i, const Pose& p_j);

// x -> scale * R x + t. Used for star gauges.
struct Similarity {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 Apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  Vec3 ApplyInverse(const Vec3& y) const {
    return rotation.Inverse() * ((y - translation) / scale);
  }
  // Expresses a camera-from-world pose in the transformed world frame.
  Pose TransformPose(const Pose& pose) const;
  Pose InverseTransformPose(const Pose& pose) const;
};

constexpr double kDefaultPlaneEpsilon = 1e-8;

struct Projection {
  Vec2 pixel = Vec2::Zero();
  // False when the point is behind the camera or within the plane epsilon
  // of the imaging plane. `pixel` is still populated behind the camera and
  // only undefined (NaN) inside the plane epsilon band.
  bool valid = false;
};

// Pixel centers sit at integer + 0.5; the principal point defaults to the
// image center (width / 2, height / 2).
struct PinholeCamera {
  double focal = 1.0;
  Vec2 principal_point = Vec2::Zero();
  int width = 0;
  int height = 0;

  static PinholeCamera Centered(double focal, int width, int height);

  Projection Project(const Vec3& x_cam, double plane_epsilon = kDefaultPlaneEpsilon) const;
  // (u, v, 1) for a pixel.
  Vec3 NormalizedRay(const Vec2& pixel) const;
  Vec3 Unproject(const Vec2& pixel, double depth) const { return depth * NormalizedRay(pixel); }
  bool InBounds(const Vec2& pixel) const;
};

// Row-major depth raster; 0 encodes invalid. Values are kept in double
// precision in memory and stored as f32 on disk.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int width, int height, double fill = 0.0);

  int Width() const { return width_; }
  int Height() const { return height_; }
  double At(int x, int y) const { return values_[static_cast<size_t>(y) * width_ + x]; }
  void Set(int x, int y, double value);
  const std::vector<double>& Values() const { return values_; }
  std::vector<double>& MutableValues() { return values_; }

  // Bilinear lookup at a continuous pixel position (pixel centers at
  // integer + 0.5). Returns false when any of the four neighbors is invalid
  // or out of the raster.
  bool Sample(const Vec2& pixel, double* depth) const;

  double ValidFraction() const;
  // Rounds every value to the nearest f32, matching what a DPTH file holds.
  void RoundToFloat();

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

void WriteDepthMap(const std::string& path, const DepthMap& depth);
DepthMap ReadDepthMap(const std::string& path);

enum class LossKind { kTrivial, kHuber, kArctan };

struct LossValue {
  double value = 0.0;
  double derivative = 0.0;
};

// rho(s) on squared residuals s >= 0.
//   huber:  s                       for s <= k^2
//           2 k sqrt(s) - k^2       otherwise
//   arctan: k^2 atan(s / k^2)
struct RobustLoss {
  LossKind kind = LossKind::kTrivial;
  double scale = 1.0;

  static RobustLoss Trivial() { return {LossKind::kTrivial, 1.0}; }
  static RobustLoss Huber(double scale) { return {LossKind::kHuber, scale}; }
  static RobustLoss Arctan(double scale) { return {LossKind::kArctan, scale}; }

  LossValue Evaluate(double squared_residual) const;
};

std::string LossKindName(LossKind kind);
LossKind ParseLossKind(const std::string& name);

}  // namespace starsfm
