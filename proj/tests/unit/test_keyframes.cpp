#include <gtest/gtest.h>

#include <algorithm>

#include "hybridmap/keyframes.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace hmap;
using namespace hmap::oracle;

namespace {

struct Kf {
    Pose pose;
    std::uint64_t frame_id = 0;
};

Mat3 small_rotation(std::mt19937_64& rng, double max_angle) {
    std::uniform_real_distribution<double> a(0.0, max_angle);
    return axis_angle(hmap::test::random_vec(rng, -1, 1).normalized(), a(rng));
}

} // namespace

TEST(KeyframeScore, PaperValues) {
    EXPECT_EQ(keyframe_score(PoseDelta{0.4, 0.0}), 1.0);
    EXPECT_EQ(keyframe_score(PoseDelta{0.01, 0.0}), 0.0);
    EXPECT_NEAR(keyframe_score(PoseDelta{0.2, 10.0}), std::exp(-1.0), 1e-12);
    EXPECT_NEAR(keyframe_score(PoseDelta{0.2, 0.0}), std::exp(-1.0), 1e-12);
}

TEST(KeyframeScore, GatesAreInclusive) {
    EXPECT_GT(keyframe_score(PoseDelta{0.025, 0.0}), 0.0);
    EXPECT_EQ(keyframe_score(PoseDelta{0.0249, 0.0}), 0.0);
    EXPECT_GT(keyframe_score(PoseDelta{0.4, 20.0}), 0.0);
    EXPECT_EQ(keyframe_score(PoseDelta{0.4, 20.001}), 0.0);
}

TEST(KeyframeScore, BoundedAndRigidInvariant) {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 500; ++i) {
        const Pose a = hmap::test::random_pose(rng, 0.5);
        const Pose b(a.rotation() * axis_angle(hmap::test::random_vec(rng, -1, 1).normalized(), 0.3 * (i % 4) / 3.0),
                     a.translation() + hmap::test::random_vec(rng, -0.4, 0.4));
        const Pose g = hmap::test::random_pose(rng, 10.0);
        const double s = keyframe_score(a, b);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        EXPECT_NEAR(keyframe_score(g * a, g * b), s, 1e-9);
        EXPECT_NEAR(s, oracle_score(a, b), 1e-9);
    }
}

TEST(KeyframeStoreTest, AddRule) {
    KeyframeStore<Kf> store;
    EXPECT_TRUE(store.maybe_add({Pose::identity(), 0}));
    EXPECT_FALSE(store.maybe_add({Pose::identity(), 1}));
    EXPECT_FALSE(store.maybe_add({Pose::from_translation({0.05, 0, 0}), 2}));
    EXPECT_TRUE(store.maybe_add({Pose::from_translation({0.06, 0, 0}), 3}));
    EXPECT_FALSE(store.maybe_add({Pose(axis_angle(Vec3::UnitZ(), 4.9 * M_PI / 180), Vec3::Zero()), 4}));
    EXPECT_TRUE(store.maybe_add({Pose(axis_angle(Vec3::UnitZ(), 5.1 * M_PI / 180), Vec3::Zero()), 5}));
    EXPECT_EQ(store.size(), 3u);
}

TEST(KeyframeStoreTest, AngleIsMeasuredToTranslationClosestKeyframe) {
    KeyframeStore<Kf> store;
    const Mat3 turned = axis_angle(Vec3::UnitY(), 30.0 * M_PI / 180);
    store.maybe_add({Pose(turned, Vec3(0.0, 0, 0)), 0});
    store.maybe_add({Pose(Mat3::Identity(), Vec3(0.04, 0, 0)), 1});
    ASSERT_EQ(store.size(), 2u);
    // Closest by translation is kf 0 (0.01 m away, 30 deg): added even though kf 1 matches the orientation.
    EXPECT_TRUE(store.should_add(Pose(Mat3::Identity(), Vec3(0.01, 0, 0))));
    // Closest by translation is kf 1 (same orientation): not added.
    EXPECT_FALSE(store.should_add(Pose(Mat3::Identity(), Vec3(0.035, 0, 0))));
}

TEST(KeyframeStoreTest, StoredKeyframesAreSeparatedFromTheirNearestPredecessor) {
    std::mt19937_64 rng(8);
    KeyframeStore<Kf> store;
    Pose p = Pose::identity();
    for (std::uint64_t i = 0; i < 400; ++i) {
        p = Pose(p.rotation() * axis_angle(hmap::test::random_vec(rng, -1, 1).normalized(), 0.02),
                 p.translation() + hmap::test::random_vec(rng, -0.02, 0.02));
        store.maybe_add({p, i});
    }
    // Each keyframe differs from the translation-closest earlier keyframe by more than one threshold.
    const auto& kfs = store.keyframes();
    for (std::size_t j = 1; j < kfs.size(); ++j) {
        std::size_t closest = 0;
        for (std::size_t i = 1; i < j; ++i)
            if ((kfs[i].pose.translation() - kfs[j].pose.translation()).norm() <
                (kfs[closest].pose.translation() - kfs[j].pose.translation()).norm())
                closest = i;
        const PoseDelta d = pose_delta(kfs[closest].pose, kfs[j].pose);
        EXPECT_TRUE(d.baseline > 0.05 || d.angle_deg > 5.0) << j;
    }
    EXPECT_GT(kfs.size(), 10u);
}

TEST(KeyframeStoreTest, SelectBestSimpleCases) {
    KeyframeStore<Kf> store;
    EXPECT_FALSE(store.select_best(Pose::identity()).has_value());
    store.maybe_add({Pose::from_translation({0.01, 0, 0}), 1}); // gated out
    EXPECT_FALSE(store.select_best(Pose::identity()).has_value());
    store.maybe_add({Pose::from_translation({0.4, 0, 0}), 2}); // peak
    const auto best = store.select_best(Pose::identity());
    ASSERT_TRUE(best.has_value());
    EXPECT_EQ(best->frame_id, 2u);
}

TEST(KeyframeStoreTest, TiesGoToLowerFrameId) {
    KeyframeStore<Kf> store;
    store.maybe_add({Pose::from_translation({0.0, 0.3, 0}), 7});
    store.maybe_add({Pose::from_translation({0.0, -0.3, 0}), 3});
    store.maybe_add({Pose::from_translation({0.3, 0.0, 0}), 5});
    EXPECT_EQ(store.select_best(Pose::identity())->frame_id, 3u);
}

TEST(KeyframeStoreTest, SelectBestMatchesExhaustiveOracle) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> count(1, 30);
    for (int trial = 0; trial < 100; ++trial) {
        KeyframeStore<Kf> store(KeyframeParams{.add_trans_thresh = 0.0, .add_angle_thresh = 0.0});
        const int n = count(rng);
        std::vector<Kf> all;
        for (int i = 0; i < n; ++i) {
            const Mat3 r = i % 3 == 0 ? Mat3::Identity() : small_rotation(rng, 0.5);
            Kf kf{Pose(r, hmap::test::random_vec(rng, -0.6, 0.6)), static_cast<std::uint64_t>(i * 13 % 31)};
            all.push_back(kf);
            store.maybe_add(kf);
        }
        const Pose query(small_rotation(rng, 0.1), hmap::test::random_vec(rng, -0.1, 0.1));
        std::optional<Kf> expected;
        double best = 0.0;
        for (const Kf& kf : all) {
            const double s = oracle_score(query, kf.pose);
            if (s > best || (s == best && s > 0 && expected && kf.frame_id < expected->frame_id)) {
                best = s;
                expected = kf;
            }
        }
        const auto got = store.select_best(query);
        ASSERT_EQ(got.has_value(), expected.has_value()) << "trial " << trial;
        if (got) EXPECT_EQ(got->frame_id, expected->frame_id) << "trial " << trial;

        std::shuffle(all.begin(), all.end(), rng);
        KeyframeStore<Kf> shuffled(KeyframeParams{.add_trans_thresh = 0.0, .add_angle_thresh = 0.0});
        for (const Kf& kf : all) shuffled.maybe_add(kf);
        const auto again = shuffled.select_best(query);
        ASSERT_EQ(again.has_value(), got.has_value());
        if (got) EXPECT_EQ(again->frame_id, got->frame_id);
    }
}
