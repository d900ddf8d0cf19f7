#include "starsfm/geometry.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace starsfm {

static_assert(std::endian::native == std::endian::little,
              "DPTH I/O assumes a little-endian host");

Mat3 Hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 ExpSO3(const Vec3& omega) { return Rotation::Exp(omega).Matrix(); }

Vec3 LogSO3(const Mat3& rotation) { return Rotation::FromMatrix(rotation).Log(); }

Mat3 LeftJacobianInverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 P = Hat(phi);
  if (theta < 1e-6) {
    return Mat3::Identity() - 0.5 * P + (1.0 / 12.0) * P * P;
  }
  const double coeff =
      1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() - 0.5 * P + coeff * P * P;
}

Mat3 RightJacobianInverse(const Vec3& phi) { return LeftJacobianInverse(-phi); }

// Unit quaternions are kept as given so that normalization is idempotent and
// serialized rotations read back bit for bit.
Rotation::Rotation(const Eigen::Quaterniond& q)
    : q_(std::abs(q.squaredNorm() - 1.0) < 1e-14 ? q : q.normalized()) {
  if (q_.w() < 0.0) q_.coeffs() *= -1.0;
}

Rotation Rotation::FromQuaternion(const Eigen::Quaterniond& q) {
  if (!(q.norm() > 0.0)) throw std::invalid_argument("zero quaternion");
  return Rotation(q);
}

Rotation Rotation::FromMatrix(const Mat3& m) {
  // Project onto SO(3) first so slightly non-orthonormal input is accepted.
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return Rotation(Eigen::Quaterniond(r));
}

Rotation Rotation::FromAxisAngle(const Vec3& axis, double angle) {
  return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
}

Rotation Rotation::Exp(const Vec3& omega) {
  const double theta = omega.norm();
  Eigen::Quaterniond q;
  if (theta < 1e-12) {
    q = Eigen::Quaterniond(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
  } else {
    const double s = std::sin(0.5 * theta) / theta;
    q = Eigen::Quaterniond(std::cos(0.5 * theta), s * omega.x(), s * omega.y(), s * omega.z());
  }
  return Rotation(q);
}

Vec3 Rotation::Log() const {
  const Vec3 v = q_.vec();
  const double n = v.norm();
  const double w = q_.w();  // >= 0 by construction
  if (n < 1e-12) {
    return (2.0 / w) * v;
  }
  const double angle = 2.0 * std::atan2(n, w);
  return (angle / n) * v;
}

double Rotation::Angle() const { return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w())); }

Rotation Rotation::Inverse() const { return Rotation(q_.conjugate()); }

Rotation Rotation::operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }

Rotation RotZ(double angle) { return Rotation::FromAxisAngle(Vec3::UnitZ(), angle); }

double GeodesicDistance(const Rotation& a, const Rotation& b) {
  return (a * b.Inverse()).Angle();
}

Pose Pose::FromCenter(const Rotation& rotation, const Vec3& center) {
  return Pose{rotation, -(rotation * center)};
}

Vec3 Pose::Center() const { return -(rotation.Inverse() * translation); }

Pose Pose::Inverse() const {
  const Rotation r_inv = rotation.Inverse();
  return Pose{r_inv, -(r_inv * translation)};
}

Pose Compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose RelativePose(const Pose& p_i, const Pose& p_j) { return Compose(p_j, p_i.Inverse()); }

Pose Similarity::TransformPose(const Pose& pose) const {
  // Camera frame distances scale with the world: x_cam' = s * x_cam.
  const Rotation r = pose.rotation * rotation.Inverse();
  return Pose::FromCenter(r, Apply(pose.Center()));
}

Pose Similarity::InverseTransformPose(const Pose& pose) const {
  const Rotation r = pose.rotation * rotation;
  return Pose::FromCenter(r, ApplyInverse(pose.Center()));
}

PinholeCamera PinholeCamera::Centered(double focal, int width, int height) {
  return PinholeCamera{focal, Vec2(0.5 * width, 0.5 * height), width, height};
}

Projection PinholeCamera::Project(const Vec3& x_cam, double plane_epsilon) const {
  Projection p;
  const double z = x_cam.z();
  if (std::abs(z) < plane_epsilon) {
    p.pixel.setConstant(std::numeric_limits<double>::quiet_NaN());
    p.valid = false;
    return p;
  }
  p.pixel = Vec2(focal * x_cam.x() / z + principal_point.x(),
                 focal * x_cam.y() / z + principal_point.y());
  p.valid = z > 0.0;
  return p;
}

Vec3 PinholeCamera::NormalizedRay(const Vec2& pixel) const {
  return Vec3((pixel.x() - principal_point.x()) / focal,
              (pixel.y() - principal_point.y()) / focal, 1.0);
}

bool PinholeCamera::InBounds(const Vec2& pixel) const {
  return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() < width && pixel.y() < height;
}

DepthMap::DepthMap(int width, int height, double fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("negative depth map size");
  if (fill < 0.0) throw std::invalid_argument("negative depth");
  values_.assign(static_cast<size_t>(width) * height, fill);
}

void DepthMap::Set(int x, int y, double value) {
  if (!(value >= 0.0)) throw std::invalid_argument("depth values must be >= 0");
  values_[static_cast<size_t>(y) * width_ + x] = value;
}

bool DepthMap::Sample(const Vec2& pixel, double* depth) const {
  const double gx = pixel.x() - 0.5;
  const double gy = pixel.y() - 0.5;
  if (!(gx >= 0.0) || !(gy >= 0.0) || gx > width_ - 1 || gy > height_ - 1) return false;
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const double fx = gx - x0;
  const double fy = gy - y0;
  // Neighbors with zero weight are not consulted, so sampling exactly at a
  // pixel center returns the stored value.
  const int x1 = fx > 0.0 ? x0 + 1 : x0;
  const int y1 = fy > 0.0 ? y0 + 1 : y0;
  const double d00 = At(x0, y0);
  const double d10 = At(x1, y0);
  const double d01 = At(x0, y1);
  const double d11 = At(x1, y1);
  if (d00 <= 0.0 || d10 <= 0.0 || d01 <= 0.0 || d11 <= 0.0) return false;
  *depth = (1.0 - fy) * ((1.0 - fx) * d00 + fx * d10) + fy * ((1.0 - fx) * d01 + fx * d11);
  return true;
}

double DepthMap::ValidFraction() const {
  if (values_.empty()) return 0.0;
  size_t valid = 0;
  for (double v : values_) valid += v > 0.0 ? 1 : 0;
  return static_cast<double>(valid) / values_.size();
}

void DepthMap::RoundToFloat() {
  for (double& v : values_) v = static_cast<double>(static_cast<float>(v));
}

namespace {

constexpr char kDepthMagic[4] = {'D', 'P', 'T', 'H'};

void PutU32(std::ostream& out, uint32_t v) {
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.write(bytes, 4);
}

uint32_t GetU32(std::istream& in) {
  char bytes[4];
  in.read(bytes, 4);
  uint32_t v;
  std::memcpy(&v, bytes, 4);
  return v;
}

}  // namespace

void WriteDepthMap(const std::string& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kDepthMagic, 4);
  PutU32(out, static_cast<uint32_t>(depth.Width()));
  PutU32(out, static_cast<uint32_t>(depth.Height()));
  PutU32(out, 0u);
  std::vector<float> buffer(depth.Values().begin(), depth.Values().end());
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path);
}

DepthMap ReadDepthMap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDepthMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a DPTH file");
  }
  const uint32_t width = GetU32(in);
  const uint32_t height = GetU32(in);
  GetU32(in);  // reserved
  std::vector<float> buffer(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(buffer.data()),
          static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!in) throw std::runtime_error(path + ": truncated depth raster");
  DepthMap depth(static_cast<int>(width), static_cast<int>(height));
  auto& values = depth.MutableValues();
  for (size_t k = 0; k < buffer.size(); ++k) {
    if (!(buffer[k] >= 0.0f)) throw std::runtime_error(path + ": negative or NaN depth");
    values[k] = buffer[k];
  }
  return depth;
}

LossValue RobustLoss::Evaluate(double s) const {
  if (!(s >= 0.0)) throw std::invalid_argument("squared residual must be non-negative");
  const double k2 = scale * scale;
  switch (kind) {
    case LossKind::kTrivial:
      return {s, 1.0};
    case LossKind::kHuber:
      if (s <= k2) return {s, 1.0};
      {
        const double r = std::sqrt(s);
        return {2.0 * scale * r - k2, scale / r};
      }
    case LossKind::kArctan: {
      const double a = s / k2;
      return {k2 * std::atan(a), 1.0 / (1.0 + a * a)};
    }
  }
  return {s, 1.0};
}

std::string LossKindName(LossKind kind) {
  switch (kind) {
    case LossKind::kTrivial: return "trivial";
    case LossKind::kHuber: return "huber";
    case LossKind::kArctan: return "arctan";
  }
  return "trivial";
}

LossKind ParseLossKind(const std::string& name) {
  if (name == "trivial") return LossKind::kTrivial;
  if (name == "huber") return LossKind::kHuber;
  if (name == "arctan") return LossKind::kArctan;
  throw std::invalid_argument("unknown loss kind: " + name);
}

}  // namespace starsfm
