#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "hybridmap/geometry.hpp"

namespace hmap {

enum class Joint : int {
    Head,
    Neck,
    RShoulder,
    RElbow,
    RWrist,
    LShoulder,
    LElbow,
    LWrist,
    MidHip,
    RHip,
    RKnee,
    RAnkle,
    LHip,
    LKnee,
    LAnkle,
};

inline constexpr int kJointCount = 15;
inline constexpr int idx(Joint j) { return static_cast<int>(j); }

std::string_view joint_name(Joint j);

/// Parents in the joint hierarchy; the root (mid-hip) has none.
std::optional<Joint> joint_parent(Joint j);

/// Every joint, parents before children.
const std::array<Joint, kJointCount>& joints_topological();

template <typename T>
using PerJoint = std::array<T, kJointCount>;

/// A complete detected skeleton: every joint has a world position.
struct Skeleton {
    PerJoint<Vec3> keypoints{};
    double confidence = 1.0;
    int person_id = -1;

    const Vec3& operator[](Joint j) const { return keypoints[idx(j)]; }
    Vec3& operator[](Joint j) { return keypoints[idx(j)]; }
};

/// Points that define the coordinate frame of one joint: the y axis points at `y_axis`, and the
/// plane through (k0, k1, k2) fixes the normal.
struct JointFrameDef {
    Joint k0, k1, k2;
    Joint y_axis;
};

/// Joints without a definition have no correspondence and are left at identity when retargeting.
using JointFrameSpec = PerJoint<std::optional<JointFrameDef>>;

/// Default table: the root and neck use planes of their own children (hips / shoulders), limb joints use
/// the bone endpoints plus the cross-body counterpart. Leaves (head, wrists, ankles) are uncorresponded.
const JointFrameSpec& default_joint_frame_spec();

/// Parametric capsule body. Offsets and rest orientations are expressed in the mid-hip frame of the rest
/// pose (x to the body's left, y up, z forward).
struct BodyModel {
    PerJoint<Vec3> rest_offsets{};      // from parent joint; zero for the root
    PerJoint<Mat3> rest_orientations{}; // rest joint frame relative to mid-hip
    PerJoint<double> bone_radii{};      // capsule parent->joint, indexed by the child joint
    double beta2 = 0.0;                 // torso-length shape coefficient

    /// Neutral body, uniformly scaled, with rest orientations calibrated against `spec`.
    static BodyModel neutral(double scale = 1.0, const JointFrameSpec& spec = default_joint_frame_spec());

    /// Rest orientations all identity.
    void set_identity_rest_orientations();
    /// Rest orientations taken from the joint frames of the rest-pose keypoints.
    void calibrate_rest_orientations(const JointFrameSpec& spec = default_joint_frame_spec());

    double torso_length() const { return rest_offsets[idx(Joint::Neck)].norm(); }
    void set_torso_length(double length);
};

struct PoseParams {
    PerJoint<Mat3> local{}; // orientation of each joint relative to its parent
    Pose root;

    static PoseParams identity();
};

/// World pose per joint; empty for joints without a frame definition.
using JointPoses = PerJoint<std::optional<Pose>>;

/// Builds a right-handed frame per defined joint from keypoint positions. Throws DegenerateSkeletonError
/// when any vector to be normalised is shorter than 1e-8.
JointPoses global_joint_poses(const Skeleton& skeleton, const JointFrameSpec& spec = default_joint_frame_spec());

/// Retargets world joint frames to local orientations of `body`:
///   theta_k = restR_parent * worldR_parent^-1 * worldR_k * restR_k^-1.
/// The root pose takes the mid-hip frame (corrected by its rest orientation). Joints without a world
/// frame get identity. Throws ContractViolation when a corresponded joint's parent has no frame.
PoseParams local_orientations(const JointPoses& global, const BodyModel& body);

inline constexpr double kTorsoStiffness = 100.0;

/// beta2 = 100 * (skeleton torso - body torso), torso = neck to mid-hip distance.
double estimate_torso(const Skeleton& skeleton, const BodyModel& body);

/// World keypoint positions of a posed body.
PerJoint<Vec3> forward_kinematics(const BodyModel& body, const PoseParams& params);

/// World rotation of every joint (parent rotation composed with the local orientation).
PerJoint<Mat3> forward_rotations(const BodyModel& body, const PoseParams& params);

Skeleton skeleton_from_keypoints(const PerJoint<Vec3>& keypoints, int person_id = -1);

struct FittedBody {
    BodyModel body;
    PoseParams params;
    double beta2 = 0.0;
};

/// Torso fit followed by frame construction and retargeting.
FittedBody fit_body(const Skeleton& skeleton, const BodyModel& neutral,
                    const JointFrameSpec& spec = default_joint_frame_spec());

// ---- people masks ----------------------------------------------------------------------------------

using PeopleMask = MaskImage;

/// Segment with hemispherical caps; a == b is a sphere.
struct Capsule {
    Vec3 a, b;
    double radius = 0.0;
};

inline constexpr double kLimbBoundingRadius = 0.12;
inline constexpr double kTorsoBoundingRadius = 0.18;

/// Conservative bounding volumes of a skeleton: one capsule per bone and one sphere per joint.
std::vector<Capsule> bounding_capsules(const Skeleton& skeleton, double radii_scale = 1.0);

/// Tight capsules of a posed body (bone radii, no inflation).
std::vector<Capsule> body_capsules(const BodyModel& body, const PerJoint<Vec3>& keypoints);

/// Marks every pixel within the projected 2D silhouette of each capsule: the distance from the pixel to
/// the projected axis is compared to radius * f / z at the nearest axis point. Segments are clipped to
/// z >= near_z in camera space.
void rasterize_capsules(std::span<const Capsule> capsules, const Intrinsics& intr, const Pose& world_from_camera,
                        PeopleMask& mask, double near_z = 0.05);

PeopleMask mask_bounding_volumes(std::span<const Skeleton> skeletons, const Intrinsics& intr,
                                 const Pose& world_from_camera, double radii_scale = 1.0);

PeopleMask mask_body_silhouettes(std::span<const std::pair<BodyModel, PoseParams>> bodies, const Intrinsics& intr,
                                 const Pose& world_from_camera);

// ---- persistence -----------------------------------------------------------------------------------

/// frame_id -> skeletons observed in that frame.
using SkeletonSequence = std::map<std::uint64_t, std::vector<Skeleton>>;

/// Lines of "frame_id person_id joint_id x y z"; joint_id is the numeric joint index. Each skeleton must
/// list all joints.
SkeletonSequence read_skeletons(std::istream& in);
SkeletonSequence read_skeletons(const std::filesystem::path& path);
void write_skeletons(std::ostream& out, const SkeletonSequence& seq);
void write_skeletons(const std::filesystem::path& path, const SkeletonSequence& seq);

/// (frame_id, person_id) -> visible. Lines of "frame_id person_id 0|1".
using VisibilityTable = std::map<std::pair<std::uint64_t, int>, bool>;
VisibilityTable read_visibility(const std::filesystem::path& path);
void write_visibility(const std::filesystem::path& path, const VisibilityTable& table);

} // namespace hmap
