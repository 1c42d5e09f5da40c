#pragma once

// Rigid normalization of 3D landmark clouds: the mouth-corner midpoint moves
// to the origin, the corner line onto the X axis, and a reference landmark on
// the upper lip into the XY plane. All maps are rigid (rotation+translation),
// so pairwise distances are preserved and the result is pose-invariant.

#include <cstddef>
#include <vector>

namespace lip3d {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const;
};

struct Mat3 {
  // Row-major.
  double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  static Mat3 identity() { return Mat3{}; }
  static Mat3 rotation_x(double angle);
  static Mat3 rotation_y(double angle);
  static Mat3 rotation_z(double angle);

  Vec3 apply(const Vec3& v) const;
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  double det() const;
};

struct RigidTransform {
  Mat3 rotation;
  Vec3 translation;

  Vec3 apply(const Vec3& p) const { return rotation.apply(p) + translation; }
  // this∘first: apply `first`, then this.
  RigidTransform compose_after(const RigidTransform& first) const;
  RigidTransform inverse() const;
};

struct FaceCloud {
  std::vector<Vec3> points;
  int frame_index = 0;
  std::size_t corner_left_idx = 0;
  std::size_t corner_right_idx = 0;
  std::size_t upper_ref_idx = 0;

  const Vec3& corner_left() const { return points[corner_left_idx]; }
  const Vec3& corner_right() const { return points[corner_right_idx]; }
  const Vec3& upper_ref() const { return points[upper_ref_idx]; }
};

// Validates corner/upper indices; throws ValueError on bad indices or
// non-finite coordinates.
void validate_cloud(const FaceCloud& cloud);

struct CorrectionStep {
  FaceCloud cloud;
  RigidTransform transform;
};

// Pure translation putting the corner midpoint at the origin.
CorrectionStep translate_to_mouth_origin(const FaceCloud& cloud);

// Rotation about Y placing both corners at z=0 (Y coordinates unchanged).
CorrectionStep yaw_correct(const FaceCloud& cloud);

// Rotation about Z placing both corners at y=0.
CorrectionStep roll_correct(const FaceCloud& cloud);

// Rotation about X placing the upper reference landmark at z=0, y>0.
// Requires corners already on the X axis.
CorrectionStep pitch_correct(const FaceCloud& cloud);

struct PostureCorrection {
  FaceCloud cloud;
  RigidTransform transform;  // composed map applied to the input
  double yaw = 0.0, roll = 0.0, pitch = 0.0;  // radians
  Vec3 translation;                           // mm
};

// translate -> yaw -> roll -> pitch. Idempotent within 1e-9 mm.
PostureCorrection correct_posture(const FaceCloud& cloud);

}  // namespace lip3d
