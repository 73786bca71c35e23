// SPDX-License-Identifier: Apache-2.0

#include "regformer/pointcloud.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace regformer {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
    const double n = norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("cannot normalize a zero or non-finite quaternion");
    return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double radians) {
    const double n = regformer::norm(axis);
    if (n == 0.0) return {};
    const double s = std::sin(0.5 * radians) / n;
    return Quaternion{std::cos(0.5 * radians), axis[0] * s, axis[1] * s, axis[2] * s}.normalized();
}

Quaternion operator*(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z, a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x, a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

double dot(const Quaternion& a, const Quaternion& b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 rotate(const Quaternion& q, const Vec3& v) {
    const Quaternion r = q * Quaternion{0.0, v[0], v[1], v[2]} * q.conjugate();
    return {r.x, r.y, r.z};
}

Mat3 rotation_matrix(const Quaternion& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Pose::Pose(const Quaternion& rotation, const Vec3& translation) : q(rotation.normalized()), t(translation) {}

Pose compose(const Pose& a, const Pose& b) { return Pose(a.q * b.q, rotate(a.q, b.t) + a.t); }

Pose inverse(const Pose& p) {
    const Quaternion qi = p.q.conjugate();
    return Pose(qi, -1.0 * rotate(qi, p.t));
}

double rotation_angle_deg(const Pose& p) {
    const double c = std::clamp(std::abs(p.q.w) / p.q.norm(), 0.0, 1.0);
    return 2.0 * std::acos(c) * 180.0 / std::numbers::pi;
}

std::array<double, 12> to_kitti_row(const Pose& p) {
    const Mat3 r = rotation_matrix(p.q);
    return {r[0][0], r[0][1], r[0][2], p.t[0], r[1][0], r[1][1], r[1][2], p.t[1], r[2][0], r[2][1], r[2][2], p.t[2]};
}

Pose from_kitti_row(const std::array<double, 12>& row) {
    Eigen::Matrix3d r;
    r << row[0], row[1], row[2], row[4], row[5], row[6], row[8], row[9], row[10];
    const double drift = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (drift > 1e-3 || r.determinant() <= 0.0) {
        std::ostringstream os;
        os << "rotation is not orthonormal (drift " << drift << ", det " << r.determinant() << ")";
        throw FormatError(os.str());
    }
    if (drift > 1e-6) {
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
        r = svd.matrixU() * svd.matrixV().transpose();
    }
    const Eigen::Quaterniond q(r);
    return Pose(Quaternion{q.w(), q.x(), q.y(), q.z()}, Vec3{row[3], row[7], row[11]});
}

// ---------------------------------------------------------------- IO

PointCloud read_kitti_bin(const std::filesystem::path& path, LoadReport* report) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw FormatError("cannot open " + path.string());
    const auto size = static_cast<std::size_t>(is.tellg());
    if (size % 16 != 0) {
        throw FormatError(path.string() + ": format error at offset " + std::to_string(size - size % 16) +
                          " (file length " + std::to_string(size) + " is not a multiple of 16 bytes)");
    }
    is.seekg(0);
    std::vector<unsigned char> bytes(size);
    if (size > 0 && !is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw FormatError(path.string() + ": read failed");
    }
    LoadReport local;
    LoadReport& rep = report ? *report : local;
    PointCloud pc;
    pc.frame_id = path.filename().string();
    if (size == 0) rep.warnings.push_back(path.string() + ": empty point cloud");
    auto read_f32 = [&](std::size_t offset) {
        const std::uint32_t bits = static_cast<std::uint32_t>(bytes[offset]) |
                                   (static_cast<std::uint32_t>(bytes[offset + 1]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[offset + 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[offset + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    };
    pc.points.reserve(size / 16);
    pc.intensity.reserve(size / 16);
    for (std::size_t off = 0; off < size; off += 16) {
        const float x = read_f32(off), y = read_f32(off + 4), z = read_f32(off + 8), i = read_f32(off + 12);
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
            ++rep.dropped_nonfinite;
            continue;
        }
        if (x == 0.0f && y == 0.0f && z == 0.0f) {
            ++rep.dropped_zero;
            continue;
        }
        pc.points.push_back({x, y, z});
        pc.intensity.push_back(i);
    }
    return pc;
}

void write_kitti_bin(const std::filesystem::path& path, const PointCloud& pc) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    auto put = [&](float f) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    for (std::size_t i = 0; i < pc.points.size(); ++i) {
        for (double c : pc.points[i]) put(static_cast<float>(c));
        put(pc.intensity.size() == pc.points.size() ? pc.intensity[i] : 0.0f);
    }
}

std::vector<Pose> read_pose_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    std::vector<Pose> poses;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::vector<double> vals;
        std::string tok;
        while (ls >> tok) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": bad number '" + tok + "'");
            }
        }
        if (vals.size() != 12) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 12 values, got " +
                              std::to_string(vals.size()));
        }
        std::array<double, 12> row;
        std::copy(vals.begin(), vals.end(), row.begin());
        try {
            poses.push_back(from_kitti_row(row));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return poses;
}

PointCloud apply_rigid_transform(const PointCloud& pc, const Pose& pose) {
    PointCloud out = pc;
    for (auto& p : out.points) p = pose.apply(p);
    return out;
}

// ---------------------------------------------------------------- synthetic data

namespace {

struct Box {
    Vec3 lo, hi;
};

// Slab test; returns entry distance or +inf.
double ray_box(const Vec3& dir, const Box& b) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-15) {
            if (0.0 < b.lo[a] || 0.0 > b.hi[a]) return std::numeric_limits<double>::infinity();
            continue;
        }
        double ta = b.lo[a] / dir[a], tb = b.hi[a] / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::numeric_limits<double>::infinity();
    }
    return t0 > 0.0 ? t0 : std::numeric_limits<double>::infinity();
}

}  // namespace

PointCloud synth_scene(std::uint64_t seed, std::size_t n_points, double extent) {
    constexpr double kGround = -1.73;
    constexpr double kMinElevation = -24.0 * std::numbers::pi / 180.0;
    constexpr double kMaxElevation = 2.0 * std::numbers::pi / 180.0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    std::vector<Box> boxes;
    const int buildings = 6 + static_cast<int>(rng() % 7);
    for (int i = 0; i < buildings; ++i) {
        const double az = uniform(-std::numbers::pi, std::numbers::pi);
        const double r = uniform(0.3, 0.85) * extent;
        const double sx = uniform(2.0, 8.0), sy = uniform(2.0, 8.0), h = uniform(3.0, 10.0);
        const Vec3 c{r * std::cos(az), r * std::sin(az), 0.0};
        boxes.push_back({{c[0] - sx / 2, c[1] - sy / 2, kGround}, {c[0] + sx / 2, c[1] + sy / 2, kGround + h}});
    }
    const int clutter = 10 + static_cast<int>(rng() % 11);
    for (int i = 0; i < clutter; ++i) {
        const double az = uniform(-std::numbers::pi, std::numbers::pi);
        const double r = uniform(4.0, 0.6 * extent);
        const double s = uniform(0.3, 1.2), h = uniform(0.3, 2.0);
        const Vec3 c{r * std::cos(az), r * std::sin(az), 0.0};
        boxes.push_back({{c[0] - s / 2, c[1] - s / 2, kGround}, {c[0] + s / 2, c[1] + s / 2, kGround + h}});
    }

    PointCloud pc;
    pc.frame_id = "synth-" + std::to_string(seed);
    pc.points.reserve(n_points);
    pc.intensity.reserve(n_points);
    while (pc.points.size() < n_points) {
        const double az = uniform(-std::numbers::pi, std::numbers::pi);
        const double el = uniform(kMinElevation, kMaxElevation);
        const Vec3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
        // Enclosing cylindrical wall of radius `extent` guarantees a hit.
        double best = extent / std::hypot(dir[0], dir[1]);
        float intensity = 0.2f;
        if (dir[2] < 0.0) {
            const double tg = kGround / dir[2];
            if (tg < best) {
                best = tg;
                intensity = 0.1f;
            }
        }
        for (const Box& b : boxes) {
            const double tb = ray_box(dir, b);
            if (tb < best) {
                best = tb;
                intensity = 0.6f;
            }
        }
        if (best <= 0.5) continue;
        pc.points.push_back(best * dir);
        pc.intensity.push_back(intensity);
    }
    return pc;
}

Pose random_pose_sample(std::uint64_t seed, double max_rot_deg, double max_trans_m) {
    if (max_rot_deg < 0.0 || max_trans_m < 0.0) throw std::invalid_argument("pose bounds must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto unit_vector = [&] {
        Vec3 v{0.0, 0.0, 0.0};
        while (norm(v) < 1e-9) v = {gauss(rng), gauss(rng), gauss(rng)};
        return (1.0 / norm(v)) * v;
    };
    const Vec3 axis = unit_vector();
    const double angle = unit(rng) * max_rot_deg * std::numbers::pi / 180.0;
    const Vec3 dir = unit_vector();
    const double radius = max_trans_m * std::cbrt(unit(rng));
    return Pose(Quaternion::from_axis_angle(axis, angle), radius * dir);
}

}  // namespace regformer
