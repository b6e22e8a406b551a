#include <gtest/gtest.h>

#include <json.hpp>
#include <numeric>

#include "hybridmap/kdtree.hpp"
#include "hybridmap/metrics.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace hmap;
using namespace hmap::oracle;

namespace {

std::vector<Vec3> random_cloud(std::mt19937_64& rng, int n, double extent = 2.0) {
    std::vector<Vec3> c(n);
    for (auto& p : c) p = hmap::test::random_vec(rng, -extent, extent);
    return c;
}

Skeleton random_skeleton(std::mt19937_64& rng, const Vec3& at) {
    Skeleton s;
    for (auto& k : s.keypoints) k = at + hmap::test::random_vec(rng, -0.5, 0.5);
    s[Joint::MidHip] = at;
    return s;
}

Skeleton shifted(Skeleton s, const Vec3& d) {
    for (auto& k : s.keypoints) k += d;
    return s;
}

PeopleMask mask_from(int w, int h, const std::vector<int>& on) {
    PeopleMask m(w, h, 0);
    for (int i : on) m[i] = 1;
    return m;
}

} // namespace

// ---- cloud to cloud ---------------------------------------------------------------------------------

TEST(CloudToCloud, AsymmetryPair) {
    const std::vector<Vec3> s = {Vec3(0, 0, 0)}, t = {Vec3(1, 0, 0), Vec3(3, 0, 0)};
    EXPECT_DOUBLE_EQ(cloud_to_cloud(s, t), 1.0);
    EXPECT_DOUBLE_EQ(cloud_to_cloud(t, s), 2.0);
}

TEST(CloudToCloud, EmptyConventions) {
    const std::vector<Vec3> none, one = {Vec3(1, 2, 3)};
    EXPECT_EQ(cloud_to_cloud(none, one), 0.0);
    EXPECT_THROW(cloud_to_cloud(one, none), ContractViolation);
}

TEST(CloudToCloud, MatchesExhaustiveOracleOnThousandPoints) {
    std::mt19937_64 rng(1000);
    for (int trial = 0; trial < 5; ++trial) {
        const auto s = random_cloud(rng, 1000), t = random_cloud(rng, 1000);
        EXPECT_NEAR(cloud_to_cloud(s, t), brute_c2c(s, t), 1e-12);
        EXPECT_NEAR(cloud_to_cloud(t, s), brute_c2c(t, s), 1e-12);
        EXPECT_EQ(cloud_to_cloud(s, s), 0.0);
    }
}

TEST(CloudToCloud, ZeroExactlyWhenSourceIsContainedInTarget) {
    std::mt19937_64 rng(4);
    auto t = random_cloud(rng, 200);
    std::vector<Vec3> s(t.begin(), t.begin() + 50);
    EXPECT_EQ(cloud_to_cloud(s, t), 0.0);
    EXPECT_GT(cloud_to_cloud(t, s), 0.0);
    s.push_back(Vec3(10, 10, 10));
    EXPECT_GT(cloud_to_cloud(s, t), 0.0);
}

TEST(CloudToCloud, ClusteredAndDuplicatePoints) {
    std::mt19937_64 rng(9);
    std::vector<Vec3> t = random_cloud(rng, 300, 0.01);
    for (int i = 0; i < 100; ++i) t.push_back(t[i]);
    const auto s = random_cloud(rng, 300, 1.0);
    EXPECT_NEAR(cloud_to_cloud(s, t), brute_c2c(s, t), 1e-12);
}

TEST(KdTree, NearestIndexMatchesBruteForce) {
    std::mt19937_64 rng(77);
    const auto pts = random_cloud(rng, 500);
    const KdTree3<double> tree(pts);
    for (int q = 0; q < 500; ++q) {
        const Vec3 p = hmap::test::random_vec(rng, -3, 3);
        std::size_t best = 0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            if ((pts[i] - p).squaredNorm() < (pts[best] - p).squaredNorm()) best = i;
        const auto r = tree.nearest(p);
        EXPECT_EQ(r.squared_distance, (pts[best] - p).squaredNorm());
    }
}

TEST(Reconstruction, InaccuracyAndIncompletenessDirections) {
    SurfaceCloud recon, gt;
    recon.vertices = {Vec3(0, 0, 0)};
    gt.vertices = {Vec3(1, 0, 0), Vec3(3, 0, 0)};
    const ReconstructionScores s = evaluate_reconstruction(recon, gt);
    EXPECT_DOUBLE_EQ(s.inaccuracy, 1.0);
    EXPECT_DOUBLE_EQ(s.incompleteness, 2.0);
}

// ---- skeletons --------------------------------------------------------------------------------------

TEST(SkeletonMetrics, IdenticalSkeletons) {
    std::mt19937_64 rng(1);
    const std::vector<Skeleton> det = {random_skeleton(rng, {0, 0, 0}), random_skeleton(rng, {3, 0, 0})};
    const std::vector<GroundTruthSkeleton> gts = {{det[1], true}, {det[0], true}};
    const SkeletonScores s = skeleton_metrics(det, gts);
    EXPECT_EQ(*s.mpjpe, 0.0);
    EXPECT_EQ(*s.pck3d, 100.0);
    EXPECT_EQ(s.matched_people, 2);
    EXPECT_EQ(s.false_positives, 0);
}

TEST(SkeletonMetrics, UniformOffsetsAroundThePckThreshold) {
    std::mt19937_64 rng(2);
    const Skeleton gt = random_skeleton(rng, {1, 1, 0});
    const Vec3 dir = Vec3(1, 2, -2).normalized();
    for (const auto& [offset, pck] : {std::pair{0.10, 100.0}, std::pair{0.20, 0.0}, std::pair{0.149, 100.0}, std::pair{0.151, 0.0}}) {
        const std::vector<Skeleton> det = {shifted(gt, dir * offset)};
        const std::vector<GroundTruthSkeleton> gts = {{gt, true}};
        const SkeletonScores s = skeleton_metrics(det, gts);
        EXPECT_NEAR(*s.mpjpe, offset, 1e-12);
        EXPECT_EQ(*s.pck3d, pck) << offset;
    }
}

TEST(SkeletonMetrics, InvisibleMissedAndFalsePositives) {
    std::mt19937_64 rng(3);
    const Skeleton a = random_skeleton(rng, {0, 0, 0}), b = random_skeleton(rng, {5, 0, 0}),
                   c = random_skeleton(rng, {-5, 0, 0});
    // a is detected exactly, b is invisible (its detection becomes a false positive), c is missed.
    const std::vector<Skeleton> det = {a, b};
    const std::vector<GroundTruthSkeleton> gts = {{a, true}, {b, false}, {c, true}};
    const SkeletonScores s = skeleton_metrics(det, gts);
    EXPECT_EQ(s.matched_people, 1);
    EXPECT_EQ(s.missed_people, 1);
    EXPECT_EQ(s.false_positives, 1);
    EXPECT_EQ(*s.mpjpe, 0.0);
    EXPECT_EQ(*s.pck3d, 50.0);
    EXPECT_EQ(s.evaluated_joints, 2 * kJointCount);

    const std::vector<GroundTruthSkeleton> only_invisible = {{b, false}};
    const SkeletonScores none = skeleton_metrics(det, only_invisible);
    EXPECT_FALSE(none.mpjpe.has_value());
    EXPECT_FALSE(none.pck3d.has_value());
}

TEST(SkeletonMetrics, GateAndNearestFirstAssociation) {
    std::mt19937_64 rng(4);
    const Skeleton gt = random_skeleton(rng, {0, 0, 0});
    const std::vector<GroundTruthSkeleton> gts = {{gt, true}};
    const std::vector<Skeleton> far = {shifted(gt, {1.01, 0, 0})};
    EXPECT_EQ(skeleton_metrics(far, gts).matched_people, 0);
    const std::vector<Skeleton> edge = {shifted(gt, {1.0, 0, 0})};
    EXPECT_EQ(skeleton_metrics(edge, gts).matched_people, 1);

    // Two GTs competing for one detection: the closer one wins.
    const Skeleton g2 = random_skeleton(rng, {0.5, 0, 0});
    const std::vector<GroundTruthSkeleton> two = {{gt, true}, {g2, true}};
    const std::vector<Skeleton> one = {shifted(g2, {0.05, 0, 0})};
    const SkeletonScores s = skeleton_metrics(one, two);
    EXPECT_EQ(s.matched_people, 1);
    EXPECT_NEAR(*s.mpjpe, 0.05, 1e-12);
}

TEST(SkeletonMetrics, MpjpeScalesLinearly) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Skeleton> det;
        std::vector<GroundTruthSkeleton> gts;
        for (int p = 0; p < 3; ++p) {
            const Skeleton g = random_skeleton(rng, Vec3(4.0 * p, 0, 0));
            gts.push_back({g, true});
            Skeleton d = g;
            for (auto& k : d.keypoints) k += hmap::test::random_vec(rng, -0.1, 0.1);
            det.push_back(d);
        }
        const double s = 0.5 + 2.0 * (trial / 30.0);
        auto scale = [s](Skeleton k) {
            for (auto& v : k.keypoints) v *= s;
            return k;
        };
        std::vector<Skeleton> det_s;
        std::vector<GroundTruthSkeleton> gts_s;
        for (const auto& d : det) det_s.push_back(scale(d));
        for (const auto& g : gts) gts_s.push_back({scale(g.skeleton), true});
        const SkeletonMatchConfig wide{.gate_radius = 100.0};
        EXPECT_NEAR(*skeleton_metrics(det_s, gts_s, wide).mpjpe, s * *skeleton_metrics(det, gts, wide).mpjpe, 1e-12);
    }
}

// ---- masks ------------------------------------------------------------------------------------------

TEST(MaskMetrics, Examples) {
    const PeopleMask a = mask_from(4, 4, {0, 1, 2, 3});
    const MaskScores same = mask_metrics(a, a);
    EXPECT_EQ(*same.iou, 1.0);
    EXPECT_EQ(*same.f1, 1.0);
    EXPECT_EQ(same.cr, 1.0);

    const PeopleMask super = mask_from(4, 4, {0, 1, 2, 3, 4, 5, 6, 7});
    const MaskScores sup = mask_metrics(super, a);
    EXPECT_EQ(sup.cr, 1.0);
    EXPECT_DOUBLE_EQ(*sup.iou, 0.5);
    EXPECT_DOUBLE_EQ(*sup.f1, 2.0 / 3.0);

    const MaskScores disjoint = mask_metrics(mask_from(4, 4, {8, 9}), a);
    EXPECT_EQ(*disjoint.iou, 0.0);
    EXPECT_EQ(*disjoint.f1, 0.0);
    EXPECT_EQ(disjoint.cr, 0.0);

    const MaskScores empty_gt = mask_metrics(a, PeopleMask(4, 4, 0));
    EXPECT_EQ(empty_gt.cr, 1.0);
    EXPECT_FALSE(empty_gt.iou.has_value());
    EXPECT_FALSE(empty_gt.f1.has_value());

    EXPECT_THROW(mask_metrics(PeopleMask(4, 3), a), ContractViolation);
}

TEST(MaskMetrics, RatiosBoundedAndPermutationInvariant) {
    std::mt19937_64 rng(6);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 100; ++trial) {
        PeopleMask m(10, 7), g(10, 7);
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = coin(rng);
            g[i] = coin(rng);
        }
        g[0] = 1;
        const MaskScores s = mask_metrics(m, g);
        for (double v : {*s.iou, *s.f1, s.cr}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        std::vector<std::size_t> perm(m.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        PeopleMask mp(10, 7), gp(10, 7);
        for (std::size_t i = 0; i < m.size(); ++i) {
            mp[i] = m[perm[i]];
            gp[i] = g[perm[i]];
        }
        const MaskScores p = mask_metrics(mp, gp);
        EXPECT_EQ(*p.iou, *s.iou);
        EXPECT_EQ(*p.f1, *s.f1);
        EXPECT_EQ(p.cr, s.cr);
    }
}

// ---- trajectories and averaging ---------------------------------------------------------------------

TEST(ScaleRatio, ExamplesAndOracle) {
    std::mt19937_64 rng(7);
    std::vector<Vec3> gt;
    for (int i = 0; i < 20; ++i) gt.push_back(hmap::test::random_vec(rng, -2, 2));
    EXPECT_DOUBLE_EQ(trajectory_scale_ratio(gt, gt), 1.0);
    std::vector<Vec3> half;
    for (const Vec3& p : gt) half.push_back(0.5 * p + Vec3(1, 1, 1));
    EXPECT_NEAR(trajectory_scale_ratio(gt, half), 2.0, 1e-12);

    const auto est = random_cloud(rng, 20);
    double lg = 0, le = 0;
    for (int i = 1; i < 20; ++i) {
        lg += std::sqrt((gt[i] - gt[i - 1]).squaredNorm());
        le += std::sqrt((est[i] - est[i - 1]).squaredNorm());
    }
    EXPECT_NEAR(trajectory_scale_ratio(gt, est), lg / le, 1e-12);

    EXPECT_THROW(trajectory_scale_ratio(std::vector<Vec3>{Vec3::Zero()}, std::vector<Vec3>{Vec3::Zero()}),
                 ContractViolation);
    EXPECT_THROW(trajectory_scale_ratio(gt, std::vector<Vec3>(half.begin(), half.end() - 1)), ContractViolation);
}

TEST(ScaleRatio, DegenerateEstimateThrows) {
    const std::vector<Vec3> gt = {Vec3::Zero(), Vec3::UnitX()}, est = {Vec3::Ones(), Vec3::Ones()};
    EXPECT_THROW(trajectory_scale_ratio(gt, est), Error);
}

TEST(TwoLevelMeanTest, FramesThenSequences) {
    TwoLevelMean m;
    EXPECT_FALSE(m.mean().has_value());
    m.begin_sequence();
    m.add(1.0);
    m.add(3.0);
    m.add(std::nullopt);
    m.begin_sequence();
    m.add(10.0);
    m.begin_sequence();
    m.add(std::nullopt);
    EXPECT_DOUBLE_EQ(*m.mean(), (2.0 + 10.0) / 2.0);
}

// ---- reports ----------------------------------------------------------------------------------------

TEST(EvalReportTest, JsonHasOnlyPopulatedFields) {
    EvalReport r;
    r.mean_inaccuracy = 0.012;
    r.cr = 1.0;
    r.extra = {{"frames", 200}};
    const auto j = nlohmann::json::parse(r.to_json());
    EXPECT_EQ(j.size(), 3u);
    EXPECT_DOUBLE_EQ(j["mean_inaccuracy"].get<double>(), 0.012);
    EXPECT_DOUBLE_EQ(j["cr"].get<double>(), 1.0);
    EXPECT_EQ(j["frames"].get<double>(), 200.0);
    EXPECT_FALSE(j.contains("mpjpe"));
    EXPECT_EQ(r.to_key_values(), "mean_inaccuracy 0.012\ncr 1\nframes 200\n");
}
