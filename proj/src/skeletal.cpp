#include "hybridmap/skeletal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace hmap {
namespace {

constexpr double kDegenerateNorm = 1e-8;

Vec3 normalise_or_throw(const Vec3& v, Joint j, const char* what) {
    const double n = v.norm();
    if (!(n >= kDegenerateNorm))
        throw DegenerateSkeletonError(std::string("degenerate ") + what + " at joint " + std::string(joint_name(j)));
    return v / n;
}

bool is_torso_bone(Joint child) {
    switch (child) {
    case Joint::Neck:
    case Joint::Head:
    case Joint::RShoulder:
    case Joint::LShoulder:
    case Joint::RHip:
    case Joint::LHip:
        return true;
    default:
        return false;
    }
}

bool is_torso_joint(Joint j) { return is_torso_bone(j) || j == Joint::MidHip; }

} // namespace

std::string_view joint_name(Joint j) {
    static constexpr std::array<std::string_view, kJointCount> names = {
        "head",  "neck",   "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
        "mid_hip", "r_hip", "r_knee",    "r_ankle", "l_hip",   "l_knee",     "l_ankle"};
    return names[idx(j)];
}

std::optional<Joint> joint_parent(Joint j) {
    switch (j) {
    case Joint::MidHip: return std::nullopt;
    case Joint::Neck: return Joint::MidHip;
    case Joint::Head: return Joint::Neck;
    case Joint::RShoulder: return Joint::Neck;
    case Joint::RElbow: return Joint::RShoulder;
    case Joint::RWrist: return Joint::RElbow;
    case Joint::LShoulder: return Joint::Neck;
    case Joint::LElbow: return Joint::LShoulder;
    case Joint::LWrist: return Joint::LElbow;
    case Joint::RHip: return Joint::MidHip;
    case Joint::RKnee: return Joint::RHip;
    case Joint::RAnkle: return Joint::RKnee;
    case Joint::LHip: return Joint::MidHip;
    case Joint::LKnee: return Joint::LHip;
    case Joint::LAnkle: return Joint::LKnee;
    }
    return std::nullopt;
}

const std::array<Joint, kJointCount>& joints_topological() {
    static constexpr std::array<Joint, kJointCount> order = {
        Joint::MidHip,    Joint::Neck,   Joint::Head,   Joint::RShoulder, Joint::RElbow,
        Joint::RWrist,    Joint::LShoulder, Joint::LElbow, Joint::LWrist, Joint::RHip,
        Joint::RKnee,     Joint::RAnkle, Joint::LHip,   Joint::LKnee,     Joint::LAnkle};
    return order;
}

const JointFrameSpec& default_joint_frame_spec() {
    static const JointFrameSpec spec = [] {
        JointFrameSpec s{};
        using J = Joint;
        s[idx(J::MidHip)] = JointFrameDef{J::RHip, J::LHip, J::Neck, J::Neck};
        s[idx(J::Neck)] = JointFrameDef{J::RShoulder, J::LShoulder, J::Head, J::Head};
        s[idx(J::RShoulder)] = JointFrameDef{J::RShoulder, J::RElbow, J::LShoulder, J::RElbow};
        s[idx(J::LShoulder)] = JointFrameDef{J::LShoulder, J::RShoulder, J::LElbow, J::LElbow};
        s[idx(J::RElbow)] = JointFrameDef{J::RElbow, J::RWrist, J::LElbow, J::RWrist};
        s[idx(J::LElbow)] = JointFrameDef{J::LElbow, J::RElbow, J::LWrist, J::LWrist};
        s[idx(J::RHip)] = JointFrameDef{J::RHip, J::RKnee, J::LHip, J::RKnee};
        s[idx(J::LHip)] = JointFrameDef{J::LHip, J::RHip, J::LKnee, J::LKnee};
        s[idx(J::RKnee)] = JointFrameDef{J::RKnee, J::RAnkle, J::LKnee, J::RAnkle};
        s[idx(J::LKnee)] = JointFrameDef{J::LKnee, J::RKnee, J::LAnkle, J::LAnkle};
        return s;
    }();
    return spec;
}

BodyModel BodyModel::neutral(double scale, const JointFrameSpec& spec) {
    BodyModel b;
    using J = Joint;
    auto off = [&](J j, double x, double y, double z) { b.rest_offsets[idx(j)] = scale * Vec3(x, y, z); };
    off(J::MidHip, 0, 0, 0);
    off(J::Neck, 0, 0.52, 0);
    off(J::Head, 0, 0.22, 0);
    off(J::RShoulder, -0.20, 0, 0);
    off(J::RElbow, 0, -0.28, 0);
    off(J::RWrist, 0, -0.26, 0);
    off(J::LShoulder, 0.20, 0, 0);
    off(J::LElbow, 0, -0.28, 0);
    off(J::LWrist, 0, -0.26, 0);
    off(J::RHip, -0.10, 0, 0);
    off(J::RKnee, 0, -0.44, 0);
    off(J::RAnkle, 0, -0.42, 0);
    off(J::LHip, 0.10, 0, 0);
    off(J::LKnee, 0, -0.44, 0);
    off(J::LAnkle, 0, -0.42, 0);

    auto rad = [&](J j, double r) { b.bone_radii[idx(j)] = scale * r; };
    rad(J::MidHip, 0.0);
    rad(J::Neck, 0.14);
    rad(J::Head, 0.10);
    rad(J::RShoulder, 0.06);
    rad(J::LShoulder, 0.06);
    rad(J::RElbow, 0.05);
    rad(J::LElbow, 0.05);
    rad(J::RWrist, 0.04);
    rad(J::LWrist, 0.04);
    rad(J::RHip, 0.09);
    rad(J::LHip, 0.09);
    rad(J::RKnee, 0.075);
    rad(J::LKnee, 0.075);
    rad(J::RAnkle, 0.055);
    rad(J::LAnkle, 0.055);

    b.calibrate_rest_orientations(spec);
    return b;
}

void BodyModel::set_identity_rest_orientations() {
    for (auto& r : rest_orientations) r = Mat3::Identity();
}

void BodyModel::calibrate_rest_orientations(const JointFrameSpec& spec) {
    set_identity_rest_orientations();
    const Skeleton rest = skeleton_from_keypoints(forward_kinematics(*this, PoseParams::identity()));
    const JointPoses frames = global_joint_poses(rest, spec);
    for (int j = 0; j < kJointCount; ++j)
        if (frames[j]) rest_orientations[j] = frames[j]->rotation();
}

void BodyModel::set_torso_length(double length) {
    const double current = torso_length();
    if (!(current > 0.0) || !(length > 0.0)) throw ContractViolation("torso length must be positive");
    rest_offsets[idx(Joint::Neck)] *= length / current;
}

PoseParams PoseParams::identity() {
    PoseParams p;
    for (auto& r : p.local) r = Mat3::Identity();
    return p;
}

JointPoses global_joint_poses(const Skeleton& skeleton, const JointFrameSpec& spec) {
    JointPoses out{};
    for (int j = 0; j < kJointCount; ++j) {
        if (!spec[j]) continue;
        const JointFrameDef& d = *spec[j];
        const Joint joint = static_cast<Joint>(j);
        const Vec3& t = skeleton.keypoints[j];
        const Vec3 y = normalise_or_throw(skeleton[d.y_axis] - t, joint, "y axis");
        const Vec3 n =
            normalise_or_throw((skeleton[d.k1] - skeleton[d.k0]).cross(skeleton[d.k2] - skeleton[d.k0]), joint,
                               "plane normal");
        const Vec3 x = normalise_or_throw(y.cross(n), joint, "x axis");
        const Vec3 z = normalise_or_throw(x.cross(y), joint, "z axis");
        Mat3 r;
        r.col(0) = x;
        r.col(1) = y;
        r.col(2) = z;
        out[j] = Pose(r, t);
    }
    return out;
}

PoseParams local_orientations(const JointPoses& global, const BodyModel& body) {
    PoseParams params = PoseParams::identity();
    const int root = idx(Joint::MidHip);
    if (!global[root]) throw ContractViolation("local_orientations: mid-hip has no world frame");
    params.root = Pose(global[root]->rotation() * body.rest_orientations[root].transpose(),
                       global[root]->translation());
    for (int j = 0; j < kJointCount; ++j) {
        if (j == root || !global[j]) continue;
        const Joint parent = *joint_parent(static_cast<Joint>(j));
        const auto& parent_pose = global[idx(parent)];
        if (!parent_pose)
            throw ContractViolation("local_orientations: no world frame for parent of " +
                                    std::string(joint_name(static_cast<Joint>(j))));
        params.local[j] = body.rest_orientations[idx(parent)] * parent_pose->rotation().transpose() *
                          global[j]->rotation() * body.rest_orientations[j].transpose();
    }
    return params;
}

double estimate_torso(const Skeleton& skeleton, const BodyModel& body) {
    const double skeleton_torso = (skeleton[Joint::Neck] - skeleton[Joint::MidHip]).norm();
    return kTorsoStiffness * (skeleton_torso - body.torso_length());
}

PerJoint<Mat3> forward_rotations(const BodyModel& body, const PoseParams& params) {
    (void)body;
    PerJoint<Mat3> world{};
    for (Joint j : joints_topological()) {
        const auto parent = joint_parent(j);
        world[idx(j)] = parent ? Mat3(world[idx(*parent)] * params.local[idx(j)])
                               : Mat3(params.root.rotation() * params.local[idx(j)]);
    }
    return world;
}

PerJoint<Vec3> forward_kinematics(const BodyModel& body, const PoseParams& params) {
    const PerJoint<Mat3> world = forward_rotations(body, params);
    PerJoint<Vec3> pos{};
    for (Joint j : joints_topological()) {
        const auto parent = joint_parent(j);
        pos[idx(j)] = parent ? Vec3(pos[idx(*parent)] + world[idx(*parent)] * body.rest_offsets[idx(j)])
                             : params.root.translation();
    }
    return pos;
}

Skeleton skeleton_from_keypoints(const PerJoint<Vec3>& keypoints, int person_id) {
    Skeleton s;
    s.keypoints = keypoints;
    s.person_id = person_id;
    return s;
}

FittedBody fit_body(const Skeleton& skeleton, const BodyModel& neutral, const JointFrameSpec& spec) {
    FittedBody fit;
    fit.body = neutral;
    fit.beta2 = estimate_torso(skeleton, neutral);
    fit.body.set_torso_length((skeleton[Joint::Neck] - skeleton[Joint::MidHip]).norm());
    fit.body.beta2 = fit.beta2;
    fit.params = local_orientations(global_joint_poses(skeleton, spec), fit.body);
    return fit;
}

std::vector<Capsule> bounding_capsules(const Skeleton& skeleton, double radii_scale) {
    std::vector<Capsule> caps;
    caps.reserve(2 * kJointCount);
    for (Joint j : joints_topological()) {
        const double joint_r = (is_torso_joint(j) ? kTorsoBoundingRadius : kLimbBoundingRadius) * radii_scale;
        caps.push_back({skeleton[j], skeleton[j], joint_r});
        if (const auto parent = joint_parent(j)) {
            const double bone_r = (is_torso_bone(j) ? kTorsoBoundingRadius : kLimbBoundingRadius) * radii_scale;
            caps.push_back({skeleton[*parent], skeleton[j], bone_r});
        }
    }
    return caps;
}

std::vector<Capsule> body_capsules(const BodyModel& body, const PerJoint<Vec3>& keypoints) {
    std::vector<Capsule> caps;
    caps.reserve(kJointCount);
    for (Joint j : joints_topological()) {
        const auto parent = joint_parent(j);
        if (!parent || body.bone_radii[idx(j)] <= 0.0) continue;
        caps.push_back({keypoints[idx(*parent)], keypoints[idx(j)], body.bone_radii[idx(j)]});
    }
    return caps;
}

void rasterize_capsules(std::span<const Capsule> capsules, const Intrinsics& intr, const Pose& world_from_camera,
                        PeopleMask& mask, double near_z) {
    if (mask.width() != intr.width || mask.height() != intr.height)
        throw ContractViolation("rasterize_capsules: mask does not match intrinsics");
    const Pose camera_from_world = world_from_camera.inverse();
    const double f = std::max(intr.fx, intr.fy);
    for (const Capsule& cap : capsules) {
        Vec3 pa = camera_from_world * cap.a;
        Vec3 pb = camera_from_world * cap.b;
        if (pa.z() < near_z && pb.z() < near_z) continue;
        if (pa.z() < near_z) pa += (pb - pa) * ((near_z - pa.z()) / (pb.z() - pa.z()));
        if (pb.z() < near_z) pb += (pa - pb) * ((near_z - pb.z()) / (pa.z() - pb.z()));
        const Vec2 a2 = project(pa, intr);
        const Vec2 b2 = project(pb, intr);
        const double inv_za = 1.0 / pa.z();
        const double inv_zb = 1.0 / pb.z();
        const double ra = cap.radius * f * inv_za;
        const double rb = cap.radius * f * inv_zb;

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a2.x() - ra, b2.x() - rb))));
        const int x1 = std::min(intr.width - 1, static_cast<int>(std::ceil(std::max(a2.x() + ra, b2.x() + rb))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a2.y() - ra, b2.y() - rb))));
        const int y1 = std::min(intr.height - 1, static_cast<int>(std::ceil(std::max(a2.y() + ra, b2.y() + rb))));
        if (x0 > x1 || y0 > y1) continue;

        const Vec2 ab = b2 - a2;
        const double len2 = ab.squaredNorm();
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Vec2 p(x, y);
                const double s = len2 > 0.0 ? std::clamp((p - a2).dot(ab) / len2, 0.0, 1.0) : 0.0;
                const double dist2 = (p - (a2 + s * ab)).squaredNorm();
                // 1/z is affine in screen space along the projected axis.
                const double r = cap.radius * f * ((1.0 - s) * inv_za + s * inv_zb);
                if (dist2 <= r * r) mask(x, y) = 1;
            }
        }
    }
}

PeopleMask mask_bounding_volumes(std::span<const Skeleton> skeletons, const Intrinsics& intr,
                                 const Pose& world_from_camera, double radii_scale) {
    PeopleMask mask(intr.width, intr.height, 0);
    for (const Skeleton& s : skeletons) {
        const auto caps = bounding_capsules(s, radii_scale);
        rasterize_capsules(caps, intr, world_from_camera, mask);
    }
    return mask;
}

PeopleMask mask_body_silhouettes(std::span<const std::pair<BodyModel, PoseParams>> bodies, const Intrinsics& intr,
                                 const Pose& world_from_camera) {
    PeopleMask mask(intr.width, intr.height, 0);
    for (const auto& [body, params] : bodies) {
        const auto caps = body_capsules(body, forward_kinematics(body, params));
        rasterize_capsules(caps, intr, world_from_camera, mask);
    }
    return mask;
}

SkeletonSequence read_skeletons(std::istream& in) {
    // (frame, person) -> joints seen so far
    std::map<std::pair<std::uint64_t, int>, std::pair<Skeleton, std::array<bool, kJointCount>>> partial;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::uint64_t frame;
        int person, joint;
        double x, y, z;
        if (!(ls >> frame >> person >> joint >> x >> y >> z) || joint < 0 || joint >= kJointCount)
            throw DatasetError("skeletons: malformed line " + std::to_string(line_no));
        auto& [skel, seen] = partial[{frame, person}];
        skel.person_id = person;
        skel.keypoints[joint] = Vec3(x, y, z);
        seen[joint] = true;
    }
    SkeletonSequence seq;
    for (auto& [key, entry] : partial) {
        if (!std::all_of(entry.second.begin(), entry.second.end(), [](bool b) { return b; }))
            throw DatasetError("skeletons: incomplete skeleton for frame " + std::to_string(key.first) + " person " +
                               std::to_string(key.second));
        seq[key.first].push_back(entry.first);
    }
    return seq;
}

SkeletonSequence read_skeletons(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open skeletons " + path.string());
    return read_skeletons(in);
}

void write_skeletons(std::ostream& out, const SkeletonSequence& seq) {
    out << std::setprecision(17);
    for (const auto& [frame, skeletons] : seq)
        for (const Skeleton& s : skeletons)
            for (int j = 0; j < kJointCount; ++j)
                out << frame << ' ' << s.person_id << ' ' << j << ' ' << s.keypoints[j].x() << ' '
                    << s.keypoints[j].y() << ' ' << s.keypoints[j].z() << '\n';
}

void write_skeletons(const std::filesystem::path& path, const SkeletonSequence& seq) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write skeletons " + path.string());
    write_skeletons(out, seq);
}

VisibilityTable read_visibility(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open visibility " + path.string());
    VisibilityTable table;
    std::uint64_t frame;
    int person, visible;
    while (in >> frame >> person >> visible) table[{frame, person}] = visible != 0;
    return table;
}

void write_visibility(const std::filesystem::path& path, const VisibilityTable& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write visibility " + path.string());
    for (const auto& [key, visible] : table) out << key.first << ' ' << key.second << ' ' << (visible ? 1 : 0) << '\n';
}

} // namespace hmap
