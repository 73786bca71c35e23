// SPDX-License-Identifier: Apache-2.0
//
// Point clouds, rigid poses (Hamilton quaternion + translation) and the
// KITTI-style file formats they travel in.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace regformer {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);

/// Hamilton quaternion, (w, x, y, z) order.
struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const;
    Quaternion normalized() const;
    Quaternion conjugate() const { return {w, -x, -y, -z}; }
    static Quaternion from_axis_angle(const Vec3& axis, double radians);
};

Quaternion operator*(const Quaternion& a, const Quaternion& b);
double dot(const Quaternion& a, const Quaternion& b);

/// Rotates v by q through the sandwich q [0, v] q*.
Vec3 rotate(const Quaternion& q, const Vec3& v);

using Mat3 = std::array<std::array<double, 3>, 3>;
Mat3 rotation_matrix(const Quaternion& q);

/// Rigid motion x -> R(q) x + t. The quaternion is renormalized on construction.
struct Pose {
    Quaternion q;
    Vec3 t{0.0, 0.0, 0.0};

    Pose() = default;
    Pose(const Quaternion& rotation, const Vec3& translation);

    static Pose identity() { return {}; }
    Vec3 apply(const Vec3& p) const { return rotate(q, p) + t; }
};

/// a ∘ b: apply b first, then a.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Rotation angle of p in degrees, in [0, 180].
double rotation_angle_deg(const Pose& p);

/// Row-major 3x4 [R | t].
std::array<double, 12> to_kitti_row(const Pose& p);

/// Converts a row-major 3x4 [R | t]. R is projected to the nearest rotation
/// when its orthonormality drift exceeds 1e-6 and rejected beyond 1e-3.
Pose from_kitti_row(const std::array<double, 12>& row);

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<float> intensity;  // empty or one value per point
    std::string frame_id;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct LoadReport {
    std::size_t dropped_nonfinite = 0;
    std::size_t dropped_zero = 0;
    std::vector<std::string> warnings;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads little-endian float32 quadruples (x, y, z, intensity).
PointCloud read_kitti_bin(const std::filesystem::path& path, LoadReport* report = nullptr);
void write_kitti_bin(const std::filesystem::path& path, const PointCloud& pc);

/// One pose per line, 12 whitespace-separated scalars.
std::vector<Pose> read_pose_file(const std::filesystem::path& path);

PointCloud apply_rigid_transform(const PointCloud& pc, const Pose& pose);

/// Ray-cast scene (ground plane, box buildings, clutter, enclosing wall) seen
/// from a sensor at the origin. Deterministic in seed; every point has range > 0.5 m.
PointCloud synth_scene(std::uint64_t seed, std::size_t n_points, double extent = 30.0);

/// Uniform axis, uniform angle in [0, max_rot_deg], uniform translation in the
/// ball of radius max_trans_m.
Pose random_pose_sample(std::uint64_t seed, double max_rot_deg, double max_trans_m);

}  // namespace regformer
