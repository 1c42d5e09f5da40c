#include "lip3d/geometry.hpp"

#include <cmath>
#include <string>

#include "lip3d/errors.hpp"

namespace lip3d {

namespace {

constexpr double kDegenerateMm = 1e-6;

FaceCloud transformed(const FaceCloud& cloud, const RigidTransform& t) {
  FaceCloud out = cloud;
  for (auto& p : out.points) p = t.apply(p);
  return out;
}

}  // namespace

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Mat3 Mat3::rotation_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r.m[0][0] = 1;
  r.m[0][1] = 0;
  r.m[0][2] = 0;
  r.m[1][0] = 0;
  r.m[1][1] = c;
  r.m[1][2] = -s;
  r.m[2][0] = 0;
  r.m[2][1] = s;
  r.m[2][2] = c;
  return r;
}

Mat3 Mat3::rotation_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r.m[0][0] = c;
  r.m[0][1] = 0;
  r.m[0][2] = s;
  r.m[1][0] = 0;
  r.m[1][1] = 1;
  r.m[1][2] = 0;
  r.m[2][0] = -s;
  r.m[2][1] = 0;
  r.m[2][2] = c;
  return r;
}

Mat3 Mat3::rotation_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r.m[0][0] = c;
  r.m[0][1] = -s;
  r.m[0][2] = 0;
  r.m[1][0] = s;
  r.m[1][1] = c;
  r.m[1][2] = 0;
  r.m[2][0] = 0;
  r.m[2][1] = 0;
  r.m[2][2] = 1;
  return r;
}

Vec3 Mat3::apply(const Vec3& v) const {
  return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
          m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
          m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      r.m[i][j] =
          m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
    }
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
  return r;
}

double Mat3::det() const {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

RigidTransform RigidTransform::compose_after(const RigidTransform& first) const {
  RigidTransform r;
  r.rotation = rotation * first.rotation;
  r.translation = rotation.apply(first.translation) + translation;
  return r;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform r;
  r.rotation = rotation.transposed();
  r.translation = r.rotation.apply(translation) * -1.0;
  return r;
}

void validate_cloud(const FaceCloud& cloud) {
  const std::size_t n = cloud.points.size();
  if (n == 0) throw ValueError("cloud: no points");
  if (cloud.corner_left_idx >= n || cloud.corner_right_idx >= n ||
      cloud.upper_ref_idx >= n) {
    throw ValueError("cloud: landmark index out of range for " +
                     std::to_string(n) + " points");
  }
  if (cloud.corner_left_idx == cloud.corner_right_idx) {
    throw ValueError("cloud: mouth corner indices must be distinct");
  }
  for (const auto& p : cloud.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw ValueError("cloud: non-finite coordinate");
    }
  }
}

CorrectionStep translate_to_mouth_origin(const FaceCloud& cloud) {
  validate_cloud(cloud);
  const Vec3 l = cloud.corner_left();
  const Vec3 r = cloud.corner_right();
  if ((r - l).norm() < kDegenerateMm) {
    throw DegenerateCloudError("translate: mouth corners coincide");
  }
  RigidTransform t;
  t.translation = (l + r) * -0.5;
  return {transformed(cloud, t), t};
}

CorrectionStep yaw_correct(const FaceCloud& cloud) {
  validate_cloud(cloud);
  const Vec3 l = cloud.corner_left();
  const Vec3 r = cloud.corner_right();
  const double dx = r.x - l.x;
  const double dz = r.z - l.z;
  if (std::hypot(dx, dz) < kDegenerateMm) {
    throw DegenerateCloudError("yaw: corners coincide in XZ projection");
  }
  RigidTransform t;
  t.rotation = Mat3::rotation_y(std::atan2(dz, dx));
  return {transformed(cloud, t), t};
}

CorrectionStep roll_correct(const FaceCloud& cloud) {
  validate_cloud(cloud);
  const Vec3 l = cloud.corner_left();
  const Vec3 r = cloud.corner_right();
  const double dx = r.x - l.x;
  const double dy = r.y - l.y;
  if (std::hypot(dx, dy) < kDegenerateMm) {
    throw DegenerateCloudError("roll: corners coincide in XY projection");
  }
  RigidTransform t;
  t.rotation = Mat3::rotation_z(-std::atan2(dy, dx));
  return {transformed(cloud, t), t};
}

CorrectionStep pitch_correct(const FaceCloud& cloud) {
  validate_cloud(cloud);
  const Vec3 u = cloud.upper_ref();
  if (std::hypot(u.y, u.z) < kDegenerateMm) {
    throw DegenerateCloudError(
        "pitch: upper reference lies on the X axis, pitch undefined");
  }
  RigidTransform t;
  t.rotation = Mat3::rotation_x(-std::atan2(u.z, u.y));
  return {transformed(cloud, t), t};
}

PostureCorrection correct_posture(const FaceCloud& cloud) {
  auto t = translate_to_mouth_origin(cloud);
  auto y = yaw_correct(t.cloud);
  auto r = roll_correct(y.cloud);
  auto p = pitch_correct(r.cloud);

  PostureCorrection out;
  out.cloud = std::move(p.cloud);
  out.transform = p.transform.compose_after(
      r.transform.compose_after(y.transform.compose_after(t.transform)));
  out.translation = t.transform.translation;
  // Recover the applied angles from the single-axis rotation steps.
  out.yaw = std::atan2(y.transform.rotation.m[0][2], y.transform.rotation.m[0][0]);
  out.roll = std::atan2(r.transform.rotation.m[1][0], r.transform.rotation.m[0][0]);
  out.pitch = std::atan2(p.transform.rotation.m[2][1], p.transform.rotation.m[1][1]);
  return out;
}

}  // namespace lip3d
