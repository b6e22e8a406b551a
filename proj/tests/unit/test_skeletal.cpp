#include <gtest/gtest.h>

#include <sstream>

#include "hybridmap/skeletal.hpp"
#include "test_support.hpp"

using namespace hmap;

namespace {

/// Random local orientations with bounded angle (keeps limbs away from degenerate, collinear layouts).
PoseParams random_params(std::mt19937_64& rng, double max_angle) {
    std::uniform_real_distribution<double> ang(0.0, max_angle);
    PoseParams p = PoseParams::identity();
    for (auto& r : p.local) r = axis_angle(hmap::test::random_vec(rng, -1, 1).normalized(), ang(rng));
    p.root = hmap::test::random_pose(rng, 3.0);
    return p;
}

bool corresponded(int j) { return default_joint_frame_spec()[j].has_value(); }

const Intrinsics kCam{300.0, 300.0, 159.5, 119.5, 320, 240};

} // namespace

TEST(Hierarchy, TreeRootedAtMidHip) {
    int roots = 0;
    std::array<bool, kJointCount> seen{};
    for (Joint j : joints_topological()) {
        const auto p = joint_parent(j);
        if (!p) {
            ++roots;
            EXPECT_EQ(j, Joint::MidHip);
        } else {
            EXPECT_TRUE(seen[idx(*p)]) << joint_name(j);
        }
        seen[idx(j)] = true;
    }
    EXPECT_EQ(roots, 1);
}

TEST(JointFrames, AxisAlignedConfigurationGivesIdentity) {
    Skeleton s;
    JointFrameSpec spec{};
    spec[idx(Joint::MidHip)] = JointFrameDef{Joint::RHip, Joint::LHip, Joint::Neck, Joint::Neck};
    s[Joint::MidHip] = Vec3::Zero();
    s[Joint::Neck] = Vec3(0, 1, 0);
    s[Joint::RHip] = Vec3(-1, 0, 0);
    s[Joint::LHip] = Vec3(1, 0, 0);
    const JointPoses g = global_joint_poses(s, spec);
    ASSERT_TRUE(g[idx(Joint::MidHip)]);
    EXPECT_LT((g[idx(Joint::MidHip)]->rotation() - Mat3::Identity()).norm(), 1e-15);
    for (int j = 0; j < kJointCount; ++j)
        if (j != idx(Joint::MidHip)) EXPECT_FALSE(g[j].has_value());
}

TEST(JointFrames, EquivariantAndOrthonormal) {
    std::mt19937_64 rng(4);
    const BodyModel body = BodyModel::neutral();
    for (int trial = 0; trial < 200; ++trial) {
        const Skeleton s = skeleton_from_keypoints(forward_kinematics(body, random_params(rng, 1.2)));
        const Pose t = hmap::test::random_pose(rng, 4.0);
        Skeleton moved = s;
        for (auto& k : moved.keypoints) k = t * k;
        const JointPoses a = global_joint_poses(s);
        const JointPoses b = global_joint_poses(moved);
        for (int j = 0; j < kJointCount; ++j) {
            ASSERT_EQ(a[j].has_value(), corresponded(j));
            if (!a[j]) continue;
            const Mat3& r = a[j]->rotation();
            EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
            EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
            EXPECT_LT(((t * *a[j]).matrix() - b[j]->matrix()).cwiseAbs().maxCoeff(), 1e-9);
        }
        const PoseParams pa = local_orientations(a, body);
        const PoseParams pb = local_orientations(b, body);
        for (int j = 0; j < kJointCount; ++j) EXPECT_LT(rotation_angle(pa.local[j], pb.local[j]), 1e-6);
    }
}

TEST(JointFrames, CollinearPlaneThrows) {
    Skeleton s = skeleton_from_keypoints(forward_kinematics(BodyModel::neutral(), PoseParams::identity()));
    s[Joint::RHip] = Vec3(-0.1, 0, 0);
    s[Joint::LHip] = Vec3(0.1, 0, 0);
    s[Joint::Neck] = Vec3(0.3, 0, 0);
    s[Joint::MidHip] = Vec3(0, 0, 0);
    EXPECT_THROW(global_joint_poses(s), DegenerateSkeletonError);
    Skeleton coincident = skeleton_from_keypoints(forward_kinematics(BodyModel::neutral(), PoseParams::identity()));
    coincident[Joint::RKnee] = coincident[Joint::RHip];
    EXPECT_THROW(global_joint_poses(coincident), DegenerateSkeletonError);
}

TEST(Retarget, RestPoseCollapsesToIdentity) {
    const BodyModel body = BodyModel::neutral(1.1);
    PoseParams rest = PoseParams::identity();
    rest.root = Pose(axis_angle(Vec3::UnitZ(), 0.4), Vec3(1, 2, 3));
    const auto params =
        local_orientations(global_joint_poses(skeleton_from_keypoints(forward_kinematics(body, rest))), body);
    for (int j = 0; j < kJointCount; ++j) EXPECT_LT(rotation_angle(params.local[j], Mat3::Identity()), 1e-9);
    EXPECT_LT((params.root.matrix() - rest.root.matrix()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Retarget, IdentityRestsReduceToRelativeRotation) {
    std::mt19937_64 rng(6);
    BodyModel body = BodyModel::neutral();
    body.set_identity_rest_orientations();
    JointPoses g{};
    g[idx(Joint::MidHip)] = hmap::test::random_pose(rng);
    g[idx(Joint::RHip)] = hmap::test::random_pose(rng);
    g[idx(Joint::RKnee)] = hmap::test::random_pose(rng);
    const PoseParams p = local_orientations(g, body);
    const Mat3 rp = g[idx(Joint::RHip)]->rotation();
    const Mat3 rc = g[idx(Joint::RKnee)]->rotation();
    EXPECT_LT((p.local[idx(Joint::RKnee)] - rp.transpose() * rc).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(p.local[idx(Joint::LKnee)], Mat3::Identity());
    g[idx(Joint::RHip)].reset();
    EXPECT_THROW(local_orientations(g, body), ContractViolation);
}

TEST(Retarget, RoundTripRecoversThetaAndKeypoints) {
    std::mt19937_64 rng(77);
    const BodyModel body = BodyModel::neutral(0.95);
    for (int trial = 0; trial < 300; ++trial) {
        const PoseParams raw = random_params(rng, 1.0);
        const PerJoint<Vec3> kp = forward_kinematics(body, raw);
        const PoseParams theta = local_orientations(global_joint_poses(skeleton_from_keypoints(kp)), body);
        // Keypoints are reproduced exactly even though single-child twists are not observable.
        const PerJoint<Vec3> again = forward_kinematics(body, theta);
        for (int j = 0; j < kJointCount; ++j) EXPECT_LT((again[j] - kp[j]).norm(), 1e-6);
        // Multi-child joints fix their frame from the children, so their raw theta comes back.
        EXPECT_LT(rotation_angle(theta.local[idx(Joint::Neck)], raw.local[idx(Joint::Neck)]), 1e-6);
        EXPECT_LT(rotation_angle(theta.root.rotation() , raw.root.rotation() * raw.local[idx(Joint::MidHip)]), 1e-6);
        // Canonical theta is a fixed point of the round trip.
        const PoseParams twice = local_orientations(global_joint_poses(skeleton_from_keypoints(again)), body);
        for (int j = 0; j < kJointCount; ++j) {
            EXPECT_LT(rotation_angle(twice.local[j], theta.local[j]), 1e-6);
            if (!corresponded(j)) EXPECT_EQ(theta.local[j], Mat3::Identity());
        }
    }
}

TEST(ForwardKinematics, IdentityAndTranslation) {
    const BodyModel body = BodyModel::neutral();
    const PerJoint<Vec3> rest = forward_kinematics(body, PoseParams::identity());
    EXPECT_EQ(rest[idx(Joint::MidHip)], Vec3::Zero());
    EXPECT_NEAR((rest[idx(Joint::Neck)] - Vec3(0, 0.52, 0)).norm(), 0, 1e-15);
    EXPECT_NEAR((rest[idx(Joint::LWrist)] - Vec3(0.20, 0.52 - 0.28 - 0.26, 0)).norm(), 0, 1e-15);
    EXPECT_NEAR((rest[idx(Joint::RAnkle)] - Vec3(-0.10, -0.86, 0)).norm(), 0, 1e-15);

    PoseParams moved = PoseParams::identity();
    moved.root = Pose::from_translation({1, -2, 0.5});
    const PerJoint<Vec3> shifted = forward_kinematics(body, moved);
    for (int j = 0; j < kJointCount; ++j) EXPECT_NEAR((shifted[j] - rest[j] - Vec3(1, -2, 0.5)).norm(), 0, 1e-12);
}

TEST(ForwardKinematics, SingleJointBend) {
    BodyModel body = BodyModel::neutral();
    PoseParams p = PoseParams::identity();
    p.local[idx(Joint::RKnee)] = axis_angle(Vec3::UnitX(), M_PI / 2);
    const PerJoint<Vec3> kp = forward_kinematics(body, p);
    // Knee at (-0.1, -0.44, 0); the 0.42 m shin offset (0, -0.42, 0) rotated 90 deg about x is (0, 0, -0.42).
    EXPECT_NEAR((kp[idx(Joint::RKnee)] - Vec3(-0.1, -0.44, 0)).norm(), 0, 1e-12);
    EXPECT_NEAR((kp[idx(Joint::RAnkle)] - Vec3(-0.1, -0.44, -0.42)).norm(), 0, 1e-12);
    EXPECT_NEAR((kp[idx(Joint::LAnkle)] - Vec3(0.1, -0.86, 0)).norm(), 0, 1e-12);
}

TEST(Torso, BetaTwoIsHundredTimesDifference) {
    const BodyModel body = BodyModel::neutral();
    const double base = body.torso_length();
    for (double delta : {0.0, 0.01, -0.01, 0.05, -0.05}) {
        Skeleton s = skeleton_from_keypoints(forward_kinematics(body, PoseParams::identity()));
        s[Joint::Neck] = s[Joint::MidHip] + Vec3(0, base + delta, 0);
        EXPECT_NEAR(estimate_torso(s, body), 100.0 * delta, 1e-12) << delta;
        const FittedBody fit = fit_body(s, body);
        EXPECT_NEAR(fit.beta2, 100.0 * delta, 1e-12);
        EXPECT_NEAR(fit.body.torso_length(), base + delta, 1e-12);
    }
}

TEST(Torso, FittedBodyReproducesDetectedKeypoints) {
    std::mt19937_64 rng(15);
    const BodyModel neutral = BodyModel::neutral();
    const BodyModel actual = BodyModel::neutral(1.0);
    BodyModel taller = actual;
    taller.set_torso_length(actual.torso_length() + 0.04);
    for (int trial = 0; trial < 50; ++trial) {
        const PerJoint<Vec3> kp = forward_kinematics(taller, random_params(rng, 0.8));
        const FittedBody fit = fit_body(skeleton_from_keypoints(kp), neutral);
        const PerJoint<Vec3> back = forward_kinematics(fit.body, fit.params);
        for (int j = 0; j < kJointCount; ++j) EXPECT_LT((back[j] - kp[j]).norm(), 1e-6);
    }
}

// ---- masks ------------------------------------------------------------------------------------------

TEST(Masks, EmptyInputsGiveEmptyMasks) {
    const PeopleMask a = mask_bounding_volumes(std::span<const Skeleton>{}, kCam, Pose::identity());
    EXPECT_EQ(a, PeopleMask(320, 240, 0));
    const PeopleMask b =
        mask_body_silhouettes(std::span<const std::pair<BodyModel, PoseParams>>{}, kCam, Pose::identity());
    EXPECT_EQ(b, PeopleMask(320, 240, 0));
}

TEST(Masks, VerticalBoneMatchesAnalyticCapsuleArea) {
    const Intrinsics k{300.0, 300.0, 160.0, 120.0, 320, 240};
    PeopleMask mask(320, 240, 0);
    // Generic sizes so no silhouette edge passes exactly through a pixel centre.
    const Capsule cap{{0, -0.3, 3.1}, {0, 0.3, 3.1}, 0.1};
    rasterize_capsules(std::span<const Capsule>(&cap, 1), k, Pose::identity(), mask);
    int count = 0;
    double sx = 0, sy = 0;
    for (int y = 0; y < 240; ++y)
        for (int x = 0; x < 320; ++x)
            if (mask(x, y)) {
                ++count;
                sx += x;
                sy += y;
            }
    // Rectangle plus a disc.
    const double r = 0.1 * 300 / 3.1, len = 0.6 * 300 / 3.1;
    const double area = 2 * r * len + M_PI * r * r;
    EXPECT_NEAR(count / area, 1.0, 0.02);
    EXPECT_NEAR(sx / count, 160.0, 1e-6);
    EXPECT_NEAR(sy / count, 120.0, 1e-6);
}

TEST(Masks, BehindCameraIsEmpty) {
    Skeleton s = skeleton_from_keypoints(forward_kinematics(BodyModel::neutral(), PoseParams::identity()));
    for (auto& k : s.keypoints) k += Vec3(0, 0, -3);
    const PeopleMask m = mask_bounding_volumes(std::span<const Skeleton>(&s, 1), kCam, Pose::identity());
    EXPECT_EQ(m, PeopleMask(320, 240, 0));
}

TEST(Masks, MonotoneInRadiiScaleAndSilhouetteInsideBoundingVolume) {
    std::mt19937_64 rng(21);
    const BodyModel body = BodyModel::neutral();
    for (int trial = 0; trial < 20; ++trial) {
        PoseParams p = random_params(rng, 0.6);
        // Upright person 3 m in front of the camera (camera y is down).
        p.root = Pose(axis_angle(Vec3::UnitZ(), M_PI) * axis_angle(Vec3::UnitY(), 0.3 * trial),
                      Vec3(0.2 * (trial % 3) - 0.2, 0.1, 3.0));
        const Skeleton s = skeleton_from_keypoints(forward_kinematics(body, p));
        const PeopleMask small = mask_bounding_volumes(std::span<const Skeleton>(&s, 1), kCam, Pose::identity(), 0.8);
        const PeopleMask bv = mask_bounding_volumes(std::span<const Skeleton>(&s, 1), kCam, Pose::identity(), 1.0);
        const PeopleMask big = mask_bounding_volumes(std::span<const Skeleton>(&s, 1), kCam, Pose::identity(), 1.3);
        const FittedBody fit = fit_body(s, body);
        const std::pair<BodyModel, PoseParams> fb{fit.body, fit.params};
        const PeopleMask sil = mask_body_silhouettes(std::span(&fb, 1), kCam, Pose::identity());
        std::size_t n_bv = 0, n_sil = 0;
        for (std::size_t i = 0; i < bv.size(); ++i) {
            if (small[i]) EXPECT_TRUE(bv[i]);
            if (bv[i]) EXPECT_TRUE(big[i]);
            if (sil[i]) EXPECT_TRUE(bv[i]);
            n_bv += bv[i];
            n_sil += sil[i];
        }
        EXPECT_GT(n_sil, 0u);
        EXPECT_LT(n_sil, n_bv);
    }
}

TEST(Masks, RasterSizeMismatchThrows) {
    PeopleMask m(10, 10, 0);
    const Capsule c{{0, 0, 1}, {0, 0, 1}, 0.1};
    EXPECT_THROW(rasterize_capsules(std::span<const Capsule>(&c, 1), kCam, Pose::identity(), m), ContractViolation);
}

// ---- persistence ------------------------------------------------------------------------------------

TEST(SkeletonIo, RoundTripAndIncompleteRejected) {
    std::mt19937_64 rng(1);
    SkeletonSequence seq;
    for (std::uint64_t f = 0; f < 3; ++f)
        for (int person = 0; person < 2; ++person) {
            Skeleton s = skeleton_from_keypoints(forward_kinematics(BodyModel::neutral(), random_params(rng, 0.5)), person);
            seq[f * 5].push_back(s);
        }
    std::stringstream ss;
    write_skeletons(ss, seq);
    const SkeletonSequence back = read_skeletons(ss);
    ASSERT_EQ(back.size(), seq.size());
    for (const auto& [f, skels] : seq) {
        ASSERT_EQ(back.at(f).size(), skels.size());
        for (std::size_t i = 0; i < skels.size(); ++i) {
            EXPECT_EQ(back.at(f)[i].person_id, skels[i].person_id);
            for (int j = 0; j < kJointCount; ++j) EXPECT_EQ(back.at(f)[i].keypoints[j], skels[i].keypoints[j]);
        }
    }
    std::istringstream partial("0 1 0 1 2 3\n0 1 1 1 2 3\n");
    EXPECT_THROW(read_skeletons(partial), DatasetError);
    std::istringstream bad_joint("0 1 15 1 2 3\n");
    EXPECT_THROW(read_skeletons(bad_joint), DatasetError);
}

TEST(SkeletonIo, VisibilityRoundTrip) {
    hmap::test::TempDir dir("skel");
    VisibilityTable t{{{0, 1}, true}, {{0, 2}, false}, {{7, 1}, true}};
    write_visibility(dir / "v.txt", t);
    EXPECT_EQ(read_visibility(dir / "v.txt"), t);
}
