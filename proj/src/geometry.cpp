#include "hybridmap/geometry.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace hmap {

std::size_t count_valid(const DepthImage& depth) {
    return static_cast<std::size_t>(
        std::count_if(depth.data().begin(), depth.data().end(), [](double d) { return is_valid_depth(d); }));
}

void Intrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ContractViolation("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ContractViolation("intrinsics: image size must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
        throw ContractViolation("intrinsics: principal point outside the image");
}

Mat3 Intrinsics::matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

Intrinsics Intrinsics::scaled(int new_width, int new_height) const {
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    return {fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
}

Pose Pose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
    return {q.normalized().toRotationMatrix(), t};
}

Pose Pose::from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Mat4 Pose::matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
}

Eigen::Quaterniond Pose::quaternion() const {
    return Eigen::Quaterniond(rotation_).normalized();
}

Pose Pose::inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
}

bool Pose::is_valid(double tol) const {
    if (!rotation_.allFinite() || !translation_.allFinite()) return false;
    const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation_.determinant() - 1.0) <= tol;
}

double rotation_angle(const Mat3& a, const Mat3& b) {
    // atan2 form stays accurate near 0 and pi where acos of the trace does not.
    const Mat3 r = a.transpose() * b;
    const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    const double s = 0.5 * axis.norm();
    const double c = 0.5 * (r.trace() - 1.0);
    return std::atan2(s, c);
}

Mat3 axis_angle(const Vec3& axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitX());
    right.normalize();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = forward;
    return {r, eye};
}

PointImage back_project(const DepthImage& depth, const Intrinsics& intr) {
    if (depth.width() != intr.width || depth.height() != intr.height)
        throw ContractViolation("back_project: depth image does not match intrinsics");
    PointImage out(depth.width(), depth.height(), invalid_point());
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            const double d = depth(x, y);
            if (!is_valid_depth(d)) continue;
            out(x, y) = Vec3(d * (x - intr.cx) / intr.fx, d * (y - intr.cy) / intr.fy, d);
        }
    }
    return out;
}

Vec2 project(const Vec3& p, const Intrinsics& intr) {
    if (!(p.z() > 0.0)) throw BehindCameraError("project: point is not in front of the camera");
    return {intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy};
}

PointImage transform(const Pose& pose, const PointImage& points) {
    PointImage out(points.width(), points.height(), invalid_point());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (is_valid_point(points[i])) out[i] = pose * points[i];
    }
    return out;
}

Trajectory read_trajectory(std::istream& in) {
    Trajectory traj;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        TrajectoryEntry e;
        double tx, ty, tz, qx, qy, qz, qw;
        if (!(ls >> e.frame_id >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
            throw DatasetError("trajectory: malformed line " + std::to_string(line_no));
        e.pose = Pose::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));
        traj.push_back(e);
    }
    return traj;
}

Trajectory read_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trajectory " + path.string());
    return read_trajectory(in);
}

void write_trajectory(std::ostream& out, const Trajectory& traj) {
    out << std::setprecision(17);
    for (const auto& e : traj) {
        const Vec3& t = e.pose.translation();
        const Eigen::Quaterniond q = e.pose.quaternion();
        out << e.frame_id << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' '
            << q.z() << ' ' << q.w() << '\n';
    }
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trajectory " + path.string());
    write_trajectory(out, traj);
}

} // namespace hmap
