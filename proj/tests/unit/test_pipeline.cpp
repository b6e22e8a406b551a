#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include <json.hpp>

#include "hybridmap/metrics.hpp"
#include "hybridmap/oracles.hpp"
#include "hybridmap/pipeline.hpp"
#include "hybridmap/transport.hpp"
#include "test_support.hpp"

using namespace hmap;

namespace {

SceneSpec small_room(bool with_person = true) {
    SceneSpec s;
    s.intrinsics = {60, 60, 31.5, 23.5, 64, 48};
    s.fps = 5;
    s.duration = 4;
    s.boxes.push_back({Vec3(-2.5, -2, 0), Vec3(2.5, 2, 2.6), true, {}});
    s.boxes.push_back({Vec3(1.2, -1.8, 0), Vec3(2.3, -0.9, 0.75), false, {}});
    s.camera = {{0, Vec3(-1.8, -1.0, 1.5), Vec3(1.0, 0.3, 0.8)}, {4, Vec3(-1.0, 0.2, 1.6), Vec3(1.5, -0.4, 0.8)}};
    if (with_person) {
        PersonSpec p;
        p.id = 1;
        p.path = {{0, Vec2(0.8, -0.5)}, {4, Vec2(0.6, 0.7)}};
        s.people.push_back(p);
    }
    return s;
}

ServerConfig small_config() {
    ServerConfig cfg;
    cfg.queue_capacity = 4;
    cfg.seed = 9;
    cfg.enable_octree = true;
    cfg.octree.resolution = 0.1;
    cfg.octree.pixel_stride = 2;
    cfg.estimators.visibility_min_pixels = 30;
    return cfg;
}

struct Rig {
    std::shared_ptr<SceneGroundTruth> gt;
    std::unique_ptr<MappingServer> server;
};

Rig make_rig(const SceneSpec& scene, ServerConfig cfg) {
    Rig r;
    r.gt = std::make_shared<SceneGroundTruth>(scene, cfg.estimators.visibility_min_pixels, 64);
    r.server = std::make_unique<MappingServer>(cfg, make_slots(cfg, r.gt));
    return r;
}

Frame frame_of(const SceneSpec& scene, std::uint64_t id) {
    const RenderedFrame r = render_frame(scene, id);
    return {id, r.timestamp, r.intrinsics, r.pose, r.rgb};
}

std::function<std::optional<Frame>()> frame_source(const SceneSpec& scene) {
    auto next = std::make_shared<std::uint64_t>(0);
    return [scene, next]() -> std::optional<Frame> {
        if (*next >= scene.frame_count()) return std::nullopt;
        return frame_of(scene, (*next)++);
    };
}

void run_all(MappingServer& server, const SceneSpec& scene, bool threaded = false) {
    run_schedule(server, frame_source(scene), default_schedule(scene.frame_count()), threaded);
}

bool same_octree(const std::optional<OccupancyOctree>& a, const std::optional<OccupancyOctree>& b) {
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    const auto la = a->leaves(), lb = b->leaves();
    if (la.size() != lb.size()) return false;
    for (std::size_t i = 0; i < la.size(); ++i)
        if (la[i].centre != lb[i].centre || la[i].probability != lb[i].probability) return false;
    return true;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class FailingDepth : public DepthEstimator {
public:
    DepthImage estimate(const Frame&, const Frame*) override { throw Error("estimator crashed"); }
    bool needs_keyframe() const override { return false; }
};

class FailingMasker : public PeopleMasker {
public:
    PeopleMask mask(const Frame&) override { throw Error("masker crashed"); }
};

/// Detects a fixed skeleton for even frames and fails on odd ones.
class FlakyDetector : public SkeletonDetector {
public:
    std::vector<Skeleton> detect(const Frame& f) override {
        if (f.frame_id % 2) throw Error("detector crashed");
        Skeleton s;
        s.person_id = static_cast<int>(f.frame_id);
        return {s};
    }
};

} // namespace

// ---- pooled queue -----------------------------------------------------------------------------------

TEST(PooledQueueTest, FifoWithoutOverflow) {
    PooledQueue<int> q(3);
    for (int i = 1; i <= 3; ++i) EXPECT_FALSE(q.push(i).has_value());
    EXPECT_EQ(*q.pop(), 1);
    EXPECT_EQ(*q.pop(), 2);
    EXPECT_EQ(*q.pop(), 3);
    EXPECT_FALSE(q.pop().has_value());
    EXPECT_THROW(PooledQueue<int>(0), ContractViolation);
}

TEST(PooledQueueTest, CapacityOneKeepsTheNewest) {
    PooledQueue<char> q(1);
    q.push('a');
    EXPECT_EQ(q.push('b'), std::optional<std::size_t>(0));
    EXPECT_EQ(q.size(), 1u);
    EXPECT_EQ(*q.pop(), 'b');
}

TEST(PooledQueueTest, MillionRandomOpsAgainstModel) {
    std::mt19937_64 rng(1);
    std::bernoulli_distribution push_op(0.6);
    PooledQueue<int> q(7, 123);
    std::deque<int> model;
    int next = 0;
    for (int op = 0; op < 1000000; ++op) {
        if (push_op(rng)) {
            const auto victim = q.push(next);
            ASSERT_EQ(victim.has_value(), model.size() == 7);
            if (victim) {
                ASSERT_LT(*victim, model.size());
                model.erase(model.begin() + static_cast<std::ptrdiff_t>(*victim));
            }
            model.push_back(next++);
        } else {
            const auto got = q.pop();
            ASSERT_EQ(got.has_value(), !model.empty());
            if (got) {
                ASSERT_EQ(*got, model.front());
                model.pop_front();
            }
        }
        ASSERT_LE(q.size(), 7u);
        ASSERT_EQ(q.size(), model.size());
    }
}

TEST(PooledQueueTest, VictimPositionsAreUniform) {
    PooledQueue<int> q(10, 2024);
    std::array<int, 10> hist{};
    for (int i = 0; i < 1000; ++i)
        if (auto v = q.push(i)) ++hist[*v];
    int total = 0;
    for (int h : hist) total += h;
    ASSERT_EQ(total, 990);
    double chi2 = 0;
    for (int h : hist) chi2 += (h - 99.0) * (h - 99.0) / 99.0;
    EXPECT_LT(chi2, 21.666); // chi-square, 9 dof, p = 0.01
}

TEST(PooledQueueTest, BlockingPopDrainsAfterClose) {
    PooledQueue<int> q(100);
    std::vector<int> got;
    std::thread consumer([&] {
        while (auto v = q.wait_pop()) got.push_back(*v);
    });
    for (int i = 0; i < 50; ++i) q.push(i);
    q.close();
    consumer.join();
    ASSERT_EQ(got.size(), 50u);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(got[i], i);
    EXPECT_THROW(q.push(1), ContractViolation);
}

TEST(LatestSlotTest, OverwritesAndReportsOnlyNewerValues) {
    LatestSlot<int> s;
    std::uint64_t seen = 0;
    EXPECT_FALSE(s.take_newer(seen).has_value());
    s.put(1);
    s.put(2);
    EXPECT_EQ(*s.take_newer(seen), 2);
    EXPECT_FALSE(s.take_newer(seen).has_value());
    s.put(3);
    EXPECT_EQ(*s.latest(), 3);
    EXPECT_EQ(*s.take_newer(seen), 3);
}

TEST(LatestSlotTest, ReadersNeverSeeTornValues) {
    LatestSlot<std::vector<int>> s;
    std::atomic<bool> done{false};
    std::thread writer([&] {
        for (int i = 0; i < 20000; ++i) s.put(std::vector<int>(64, i));
        done = true;
        s.close();
    });
    std::uint64_t seen = 0;
    int last = -1, reads = 0;
    while (auto v = s.wait_newer(seen)) {
        ++reads;
        for (int x : *v) ASSERT_EQ(x, v->front());
        ASSERT_GT(v->front(), last);
        last = v->front();
    }
    writer.join();
    EXPECT_GT(reads, 0);
    EXPECT_EQ(last, 19999);
}

// ---- server -----------------------------------------------------------------------------------------

TEST(Server, EmptyQueueAndNoFrameAreNoOps) {
    Rig r = make_rig(small_room(), small_config());
    const HybridMap before = r.server->snapshot();
    EXPECT_FALSE(r.server->static_step());
    EXPECT_FALSE(r.server->live_step());
    EXPECT_TRUE(r.server->snapshot().static_empty());
    EXPECT_TRUE(*r.server->snapshot().tsdf == *before.tsdf);
    EXPECT_EQ(r.server->diagnostics().received, 0u);
}

TEST(Server, NoiseFreeFusionIsAccurate) {
    const SceneSpec scene = small_room();
    Rig r = make_rig(scene, small_config());
    run_all(*r.server, scene);
    const HybridMap map = r.server->snapshot();
    const SurfaceCloud surface = extract_surface(*map.tsdf);
    ASSERT_GT(surface.size(), 500u);
    std::vector<RenderedFrame> frames;
    for (std::uint64_t id = 0; id < scene.frame_count(); ++id) frames.push_back(render_frame(scene, id));
    const SurfaceCloud gt = observed_static_cloud(frames, 0.01, 10.0);
    EXPECT_LT(cloud_to_cloud(surface, gt), 2 * map.tsdf->voxel_size());
    EXPECT_GT(map.octree->leaf_count(), 100u);
    const Diagnostics d = r.server->diagnostics();
    EXPECT_EQ(d.received, scene.frame_count());
    EXPECT_EQ(d.fused + d.skipped + d.replaced, d.received);
    EXPECT_EQ(d.skipped, 1u) << d.last_error; // the very first frame has no stereo partner
}

TEST(Server, FusedSurfaceExcludesThePerson) {
    const SceneSpec scene = small_room();
    Rig r = make_rig(scene, small_config());
    run_all(*r.server, scene);
    const SurfaceCloud surface = extract_surface(*r.server->snapshot().tsdf);
    std::vector<Vec3> body;
    for (std::uint64_t id = 0; id < scene.frame_count(); ++id)
        for (const auto& p : people_at(scene, scene.frame_time(id)))
            for (const auto& c : body_capsules(p.body, p.skeleton.keypoints))
                for (double s = 0; s <= 1.0; s += 0.1) body.push_back(c.a + s * (c.b - c.a));
    // No surface vertex floats where the person walked, away from the floor.
    for (const Vec3& v : surface.vertices) {
        if (v.z() < 0.15) continue;
        double nearest = std::numeric_limits<double>::infinity();
        for (const Vec3& b : body) nearest = std::min(nearest, (v - b).norm());
        EXPECT_GT(nearest, 0.05) << v.transpose();
    }
}

TEST(Server, AllTrueMasksKeepStaticMapsEmpty) {
    const SceneSpec scene = small_room();
    ServerConfig cfg = small_config();
    cfg.estimators.masker = "all_true";
    Rig r = make_rig(scene, cfg);
    run_all(*r.server, scene);
    EXPECT_TRUE(r.server->snapshot().static_empty());
    EXPECT_GT(r.server->diagnostics().fused, 0u);
}

TEST(Server, ThreadedRunEqualsDeterministicRun) {
    const SceneSpec scene = small_room();
    ServerConfig cfg = small_config();
    cfg.estimators.noise.depth_sigma_a = 0.02;
    cfg.estimators.noise.outlier_fraction = 0.05;
    cfg.estimators.noise.outlier_magnitude = 0.5;
    cfg.estimators.noise.skeleton_jitter = 0.02;
    // A schedule that lets the queue overflow so that replacement is exercised too.
    Schedule schedule;
    for (std::size_t i = 0; i < scene.frame_count(); ++i) {
        schedule.push_back(ScheduleOp::Receive);
        if (i % 3 == 2) schedule.push_back(ScheduleOp::Live);
        if (i % 2 == 1) schedule.push_back(ScheduleOp::Static);
    }
    for (int i = 0; i < 10; ++i) schedule.push_back(ScheduleOp::Static);

    Rig a = make_rig(scene, cfg), b = make_rig(scene, cfg);
    run_schedule(*a.server, frame_source(scene), schedule, false);
    run_schedule(*b.server, frame_source(scene), schedule, true);
    const HybridMap ma = a.server->snapshot(), mb = b.server->snapshot();
    EXPECT_TRUE(*ma.tsdf == *mb.tsdf);
    EXPECT_TRUE(same_octree(ma.octree, mb.octree));
    ASSERT_TRUE(ma.live && mb.live);
    EXPECT_EQ(ma.live->frame_id, mb.live->frame_id);
    ASSERT_EQ(ma.live->skeletons.size(), mb.live->skeletons.size());
    for (std::size_t i = 0; i < ma.live->skeletons.size(); ++i)
        EXPECT_EQ(ma.live->skeletons[i].keypoints, mb.live->skeletons[i].keypoints);
    const Diagnostics da = a.server->diagnostics(), db = b.server->diagnostics();
    EXPECT_GT(da.replaced, 0u);
    EXPECT_EQ(da.replaced, db.replaced);
    EXPECT_EQ(da.fused, db.fused);
    EXPECT_EQ(da.fused + da.skipped + da.replaced, da.received);
    EXPECT_FALSE(ma.tsdf->empty());
}

TEST(Server, EstimatorAndMaskFailuresSkipFrames) {
    const SceneSpec scene = small_room(false);
    ServerConfig cfg = small_config();
    cfg.queue_capacity = 100;
    EstimatorSlots slots{std::make_shared<FailingDepth>(), nullptr, nullptr};
    MappingServer failing_depth(cfg, slots);
    run_all(failing_depth, scene);
    EXPECT_EQ(failing_depth.diagnostics().skipped, scene.frame_count());
    EXPECT_NE(failing_depth.diagnostics().last_error.find("estimator crashed"), std::string::npos);
    EXPECT_TRUE(failing_depth.snapshot().static_empty());

    auto gt = std::make_shared<SceneGroundTruth>(scene, 30);
    EstimatorSlots masked{std::make_shared<OracleDepthEstimator>(gt, NoiseModel{}, 1, false),
                          std::make_shared<FailingMasker>(), nullptr};
    MappingServer failing_mask(cfg, masked);
    run_all(failing_mask, scene);
    EXPECT_EQ(failing_mask.diagnostics().skipped, scene.frame_count());
    EXPECT_TRUE(failing_mask.snapshot().static_empty());
}

TEST(Server, LivePathTracksNewestFrameAndSurvivesFailures) {
    const SceneSpec scene = small_room(false);
    ServerConfig cfg = small_config();
    EstimatorSlots slots{std::make_shared<FailingDepth>(), nullptr, std::make_shared<FlakyDetector>()};
    MappingServer server(cfg, slots);
    for (std::uint64_t id = 0; id < 5; ++id) server.receive(frame_of(scene, id));
    EXPECT_TRUE(server.live_step());
    EXPECT_FALSE(server.live_step());
    ASSERT_TRUE(server.snapshot().live.has_value());
    EXPECT_EQ(server.snapshot().live->frame_id, 4u); // newest, not oldest
    server.receive(frame_of(scene, 5));
    EXPECT_TRUE(server.live_step()); // detector fails on odd frames
    EXPECT_EQ(server.snapshot().live->frame_id, 4u);
    EXPECT_EQ(server.diagnostics().live_failures, 1u);
    EXPECT_EQ(server.diagnostics().live_updates, 1u);
}

TEST(Server, OracleDetectorWithJitterAndMisses) {
    const SceneSpec scene = small_room();
    ServerConfig cfg = small_config();
    cfg.estimators.noise.skeleton_jitter = 0.02;
    cfg.fit_bodies = true;
    Rig r = make_rig(scene, cfg);
    double err = 0;
    int joints = 0;
    for (std::uint64_t id = 0; id < scene.frame_count(); ++id) {
        r.server->receive(frame_of(scene, id));
        r.server->live_step();
        const auto live = r.server->snapshot().live;
        ASSERT_TRUE(live);
        const auto truth = r.gt->visible_skeletons(id);
        ASSERT_EQ(live->skeletons.size(), truth.size());
        ASSERT_EQ(live->bodies.size(), truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i)
            for (int j = 0; j < kJointCount; ++j, ++joints)
                err += (live->skeletons[i].keypoints[j] - truth[i].keypoints[j]).norm();
    }
    ASSERT_GT(joints, 150);
    EXPECT_NEAR(err / joints, 0.02 * std::sqrt(8 / M_PI), 0.25 * 0.02 * std::sqrt(8 / M_PI));

    cfg.estimators.noise.miss_probability = 1.0;
    Rig m = make_rig(scene, cfg);
    m.server->receive(frame_of(scene, 3));
    m.server->live_step();
    EXPECT_TRUE(m.server->snapshot().live->skeletons.empty());
}

TEST(Server, SnapshotsAreIsolatedCopies) {
    const SceneSpec scene = small_room();
    Rig r = make_rig(scene, small_config());
    for (std::uint64_t id = 0; id < 6; ++id) {
        r.server->receive(frame_of(scene, id));
        r.server->static_step();
    }
    const HybridMap snap = r.server->snapshot();
    const HybridMap again = r.server->snapshot();
    EXPECT_TRUE(*snap.tsdf == *again.tsdf);
    EXPECT_TRUE(same_octree(snap.octree, again.octree));
    const TsdfVolume frozen = *snap.tsdf;
    for (std::uint64_t id = 6; id < scene.frame_count(); ++id) {
        r.server->receive(frame_of(scene, id));
        r.server->static_step();
    }
    EXPECT_TRUE(*snap.tsdf == frozen);
    EXPECT_FALSE(*r.server->snapshot().tsdf == frozen);
}

TEST(Server, StreamServingAccountsForEveryFrame) {
    const SceneSpec scene = small_room();
    Rig r = make_rig(scene, small_config());
    Pipe pipe;
    std::thread client([&] {
        for (std::uint64_t id = 0; id < scene.frame_count(); ++id)
            write_message(pipe, FrameMessage::from_frame(frame_of(scene, id)));
        pipe.close_write();
    });
    serve_stream(*r.server, pipe);
    client.join();
    const Diagnostics d = r.server->diagnostics();
    EXPECT_EQ(d.received, scene.frame_count());
    EXPECT_EQ(d.fused + d.skipped + d.replaced, d.received);
    EXPECT_GT(d.fused, 0u);
    EXPECT_EQ(r.server->queued(), 0u);
}

// ---- export -----------------------------------------------------------------------------------------

TEST(Export, SurfaceParsesBackAndExportsAreByteIdentical) {
    const SceneSpec scene = small_room();
    hmap::test::TempDir dir("pipeline");
    for (const char* run : {"a", "b"}) {
        Rig r = make_rig(scene, small_config());
        run_all(*r.server, scene);
        export_map(r.server->snapshot(), r.server->diagnostics(), dir / run);
    }
    const SurfaceCloud back = read_ply(dir / "a" / "surface.ply");
    Rig r = make_rig(scene, small_config());
    run_all(*r.server, scene);
    EXPECT_EQ(back.size(), extract_surface(*r.server->snapshot().tsdf).size());
    for (const char* f : {"surface.ply", "octree.txt", "live_skeletons.txt", "diagnostics.json"}) {
        const std::string a = slurp(dir / "a" / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, slurp(dir / "b" / f)) << f;
    }
    const auto diag = nlohmann::json::parse(slurp(dir / "a" / "diagnostics.json"));
    EXPECT_EQ(diag["received"].get<int>(), static_cast<int>(scene.frame_count()));
}

// ---- configuration ----------------------------------------------------------------------------------

TEST(Config, ParsesNestedKeysAndRoundTrips) {
    const ServerConfig c = parse_server_config(R"({
        "queue_capacity": 5, "seed": 3,
        "maps": {"tsdf": true, "octree": true},
        "tsdf": {"voxel_size": 0.05},
        "octree": {"resolution": 0.1, "pixel_stride": 4},
        "postprocessing": {"temporal": false, "temporal_reference": "raw", "median_kernel": 3},
        "estimators": {"masker": "bounding_volume", "noise": {"depth_sigma_a": 0.05, "outlier_fraction": 0.05}},
        "listen": {"port": 6000}
    })");
    EXPECT_EQ(c.queue_capacity, 5u);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_TRUE(c.enable_octree);
    EXPECT_EQ(c.tsdf.voxel_size, 0.05);
    EXPECT_EQ(c.tsdf.truncation, ServerConfig{}.tsdf.truncation);
    EXPECT_EQ(c.octree.pixel_stride, 4);
    EXPECT_FALSE(c.postproc.enable_temporal);
    EXPECT_EQ(c.postproc.temporal_reference, TemporalReference::Raw);
    EXPECT_EQ(c.postproc.median_kernel, 3);
    EXPECT_EQ(c.estimators.masker, "bounding_volume");
    EXPECT_EQ(c.estimators.noise.outlier_fraction, 0.05);
    EXPECT_EQ(c.listen_port, 6000);

    const ServerConfig back = parse_server_config(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    for (const char* text : {
             R"({"queue_capacty": 5})",
             R"({"tsdf": {"voxel": 0.05}})",
             R"({"estimators": {"noise": {"sigma": 1}}})",
             R"({"queue_capacity": 0})",
             R"({"queue_capacity": "five"})",
             R"({"postprocessing": {"temporal_reference": "sideways"}})",
             R"({"estimators": {"noise": {"outlier_fraction": 2}}})",
             R"([1, 2])",
             R"({"seed": )",
         }) {
        EXPECT_THROW(parse_server_config(text), ConfigError) << text;
    }
}

TEST(Config, UnknownSlotNamesAreRejected) {
    ServerConfig cfg;
    auto gt = std::make_shared<SceneGroundTruth>(small_room(), 30);
    cfg.estimators.masker = "magic";
    EXPECT_THROW(make_slots(cfg, gt), ConfigError);
    cfg.estimators.masker = "external";
    EXPECT_THROW(make_slots(cfg, gt), ConfigError);
    cfg.estimators.masker = "none";
    cfg.estimators.detector = "psychic";
    EXPECT_THROW(make_slots(cfg, gt), ConfigError);
}
