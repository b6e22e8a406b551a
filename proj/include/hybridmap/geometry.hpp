#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "hybridmap/errors.hpp"

namespace hmap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kInvalidDepth = std::numeric_limits<double>::quiet_NaN();

/// Row-major 2D raster. Pixel (x, y) is column x, row y; pixel centres sit on integer coordinates.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int width, int height, const T& fill = T{})
        : width_(width), height_(height), data_(checked_size(width, height), fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    T& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    const T& operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(const Image& o) const { return width_ == o.width_ && height_ == o.height_; }
    template <typename U>
    bool same_shape(const Image<U>& o) const { return width_ == o.width() && height_ == o.height(); }

    friend bool operator==(const Image& a, const Image& b) {
        return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
    }

private:
    static std::size_t checked_size(int width, int height) {
        if (width < 0 || height < 0) throw ContractViolation("negative image dimensions");
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

/// Metric depth (z along the optical axis). Non-finite or non-positive values are holes.
using DepthImage = Image<double>;
using PointImage = Image<Vec3>;
using MaskImage = Image<std::uint8_t>;

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb8&, const Rgb8&) = default;
};
using RgbImage = Image<Rgb8>;

inline bool is_valid_depth(double d) { return std::isfinite(d) && d > 0.0; }
inline bool is_valid_point(const Vec3& p) { return std::isfinite(p.x()); }
inline Vec3 invalid_point() { return Vec3::Constant(std::numeric_limits<double>::quiet_NaN()); }

std::size_t count_valid(const DepthImage& depth);

struct Intrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    int width = 1, height = 1;

    /// Throws ContractViolation when focal lengths or principal point are out of range.
    void validate() const;
    Mat3 matrix() const;

    /// Same camera at a different resolution: focal lengths and principal point scale with the size ratio, so
    /// pixel (2x, 2y) at full size and (x, y) at half size see the same ray.
    Intrinsics scaled(int new_width, int new_height) const;

    friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// Rigid transform x -> R x + t. Poses in this library are world-from-camera unless named otherwise.
class Pose {
public:
    Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
    Pose(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {}

    static Pose identity() { return {}; }
    static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
    static Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t);
    static Pose from_matrix(const Mat4& m);

    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    Mat4 matrix() const;
    Eigen::Quaterniond quaternion() const;

    Pose inverse() const;
    Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }
    Pose operator*(const Pose& o) const {
        return {rotation_ * o.rotation_, rotation_ * o.translation_ + translation_};
    }

    /// RᵀR = I and det R = 1 within tol.
    bool is_valid(double tol = 1e-6) const;

private:
    Mat3 rotation_;
    Vec3 translation_;
};

/// Geodesic angle between two rotations, radians in [0, pi].
double rotation_angle(const Mat3& a, const Mat3& b);
inline double rotation_angle_deg(const Mat3& a, const Mat3& b) { return rotation_angle(a, b) * 180.0 / M_PI; }

/// Rotation of `angle` radians about a unit axis.
Mat3 axis_angle(const Vec3& axis, double angle);

/// Camera rotation (x right, y down, z forward) looking from `eye` at `target`, with `up` as the world up direction.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

PointImage back_project(const DepthImage& depth, const Intrinsics& intr);

/// Throws BehindCameraError when p.z <= 0.
Vec2 project(const Vec3& p, const Intrinsics& intr);

/// Applies the pose to every valid point; holes stay holes.
PointImage transform(const Pose& pose, const PointImage& points);

/// A posed RGB frame, the unit of streaming.
struct Frame {
    std::uint64_t frame_id = 0;
    double timestamp = 0.0;
    Intrinsics intrinsics;
    Pose pose;
    RgbImage rgb;
};

struct TrajectoryEntry {
    std::uint64_t frame_id = 0;
    Pose pose;
};
using Trajectory = std::vector<TrajectoryEntry>;

/// "frame_id tx ty tz qx qy qz qw" per line, world-from-camera.
Trajectory read_trajectory(std::istream& in);
Trajectory read_trajectory(const std::filesystem::path& path);
void write_trajectory(std::ostream& out, const Trajectory& traj);
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);

} // namespace hmap
