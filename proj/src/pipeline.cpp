#include "hybridmap/pipeline.hpp"

#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hybridmap/transport.hpp"

namespace hmap {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration ---------------------------------------------------------------------------------

void ServerConfig::validate() const {
    if (queue_capacity == 0) throw ConfigError("queue_capacity must be positive");
    if (!(tsdf.voxel_size > 0.0) || !(tsdf.truncation > 0.0) || !(tsdf.max_weight > 0.0))
        throw ConfigError("tsdf voxel_size, truncation and max_weight must be positive");
    if (!(octree.resolution > 0.0) || octree.pixel_stride < 1)
        throw ConfigError("octree resolution must be positive and pixel_stride >= 1");
    try {
        postproc.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError(std::string("postprocessing: ") + e.what());
    }
    estimators.noise.validate();
}

namespace {

/// Reads the listed keys of an object into the targets, rejecting any other key.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }
    template <typename T>
    ObjectReader& opt(const char* key, T& target) {
        known_.push_back(key);
        if (const auto it = j_.find(key); it != j_.end()) {
            try {
                target = it->get<T>();
            } catch (const json::exception& e) {
                throw ConfigError(where_ + "." + key + ": " + e.what());
            }
        }
        return *this;
    }
    const json* child(const char* key) {
        known_.push_back(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (std::find(known_.begin(), known_.end(), k) == known_.end())
                throw ConfigError("unknown configuration key " + where_ + "." + k);
    }

private:
    const json& j_;
    std::string where_;
    std::vector<std::string> known_;
};

void read_noise(const json& j, NoiseModel& n) {
    ObjectReader r(j, "estimators.noise");
    r.opt("depth_sigma_a", n.depth_sigma_a)
        .opt("depth_sigma_b", n.depth_sigma_b)
        .opt("depth_correlation_px", n.depth_correlation_px)
        .opt("outlier_fraction", n.outlier_fraction)
        .opt("outlier_magnitude", n.outlier_magnitude)
        .opt("skeleton_jitter", n.skeleton_jitter)
        .opt("miss_probability", n.miss_probability)
        .opt("altitude_sigma", n.altitude_sigma)
        .finish();
}

} // namespace

ServerConfig parse_server_config(const std::string& text, ServerConfig cfg) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("server config is not valid JSON: ") + e.what());
    }
    ObjectReader root(j, "config");
    root.opt("queue_capacity", cfg.queue_capacity).opt("seed", cfg.seed).opt("fit_bodies", cfg.fit_bodies);
    root.opt("output_dir", cfg.output_dir);
    if (const json* m = root.child("maps")) {
        ObjectReader(*m, "maps").opt("tsdf", cfg.enable_tsdf).opt("octree", cfg.enable_octree).finish();
    }
    if (const json* t = root.child("tsdf")) {
        ObjectReader(*t, "tsdf")
            .opt("voxel_size", cfg.tsdf.voxel_size)
            .opt("truncation", cfg.tsdf.truncation)
            .opt("max_weight", cfg.tsdf.max_weight)
            .finish();
    }
    if (const json* o = root.child("octree")) {
        ObjectReader(*o, "octree")
            .opt("resolution", cfg.octree.resolution)
            .opt("max_range", cfg.octree.max_range)
            .opt("pixel_stride", cfg.octree.pixel_stride)
            .finish();
    }
    if (const json* p = root.child("postprocessing")) {
        std::string reference = "truncated";
        ObjectReader(*p, "postprocessing")
            .opt("temporal", cfg.postproc.enable_temporal)
            .opt("truncation", cfg.postproc.enable_truncation)
            .opt("small_regions", cfg.postproc.enable_small_regions)
            .opt("median", cfg.postproc.enable_median)
            .opt("temporal_dist_thresh", cfg.postproc.temporal_dist_thresh)
            .opt("max_depth", cfg.postproc.max_depth)
            .opt("edge_thresh", cfg.postproc.edge_thresh)
            .opt("min_component_size", cfg.postproc.min_component_size)
            .opt("median_kernel", cfg.postproc.median_kernel)
            .opt("temporal_reference", reference)
            .finish();
        if (reference == "raw") cfg.postproc.temporal_reference = TemporalReference::Raw;
        else if (reference == "truncated") cfg.postproc.temporal_reference = TemporalReference::Truncated;
        else if (reference == "final") cfg.postproc.temporal_reference = TemporalReference::Final;
        else throw ConfigError("postprocessing.temporal_reference must be raw, truncated or final");
    }
    if (const json* k = root.child("keyframes")) {
        ObjectReader(*k, "keyframes")
            .opt("add_trans_thresh", cfg.keyframes.add_trans_thresh)
            .opt("add_angle_thresh", cfg.keyframes.add_angle_thresh)
            .finish();
    }
    if (const json* e = root.child("estimators")) {
        ObjectReader r(*e, "estimators");
        r.opt("depth", cfg.estimators.depth)
            .opt("masker", cfg.estimators.masker)
            .opt("detector", cfg.estimators.detector)
            .opt("ground_truth", cfg.estimators.ground_truth)
            .opt("external_masks", cfg.estimators.external_masks)
            .opt("require_keyframe", cfg.estimators.require_keyframe)
            .opt("visibility_min_pixels", cfg.estimators.visibility_min_pixels);
        if (const json* n = r.child("noise")) read_noise(*n, cfg.estimators.noise);
        r.finish();
    }
    if (const json* l = root.child("listen")) {
        ObjectReader(*l, "listen").opt("host", cfg.listen_host).opt("port", cfg.listen_port).finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

ServerConfig load_server_config(const fs::path& path, ServerConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_server_config(ss.str(), std::move(base));
}

std::string to_json(const ServerConfig& c) {
    const char* refs[] = {"raw", "truncated", "final"};
    const NoiseModel& n = c.estimators.noise;
    nlohmann::ordered_json j = {
        {"queue_capacity", c.queue_capacity},
        {"seed", c.seed},
        {"maps", {{"tsdf", c.enable_tsdf}, {"octree", c.enable_octree}}},
        {"tsdf", {{"voxel_size", c.tsdf.voxel_size}, {"truncation", c.tsdf.truncation},
                  {"max_weight", c.tsdf.max_weight}}},
        {"octree", {{"resolution", c.octree.resolution}, {"max_range", c.octree.max_range},
                    {"pixel_stride", c.octree.pixel_stride}}},
        {"postprocessing",
         {{"temporal", c.postproc.enable_temporal}, {"truncation", c.postproc.enable_truncation},
          {"small_regions", c.postproc.enable_small_regions}, {"median", c.postproc.enable_median},
          {"temporal_dist_thresh", c.postproc.temporal_dist_thresh}, {"max_depth", c.postproc.max_depth},
          {"edge_thresh", c.postproc.edge_thresh}, {"min_component_size", c.postproc.min_component_size},
          {"median_kernel", c.postproc.median_kernel},
          {"temporal_reference", refs[static_cast<int>(c.postproc.temporal_reference)]}}},
        {"keyframes", {{"add_trans_thresh", c.keyframes.add_trans_thresh},
                       {"add_angle_thresh", c.keyframes.add_angle_thresh}}},
        {"fit_bodies", c.fit_bodies},
        {"estimators",
         {{"depth", c.estimators.depth}, {"masker", c.estimators.masker}, {"detector", c.estimators.detector},
          {"ground_truth", c.estimators.ground_truth}, {"external_masks", c.estimators.external_masks},
          {"require_keyframe", c.estimators.require_keyframe},
          {"visibility_min_pixels", c.estimators.visibility_min_pixels},
          {"noise",
           {{"depth_sigma_a", n.depth_sigma_a}, {"depth_sigma_b", n.depth_sigma_b},
            {"depth_correlation_px", n.depth_correlation_px},
            {"outlier_fraction", n.outlier_fraction}, {"outlier_magnitude", n.outlier_magnitude},
            {"skeleton_jitter", n.skeleton_jitter}, {"miss_probability", n.miss_probability},
            {"altitude_sigma", n.altitude_sigma}}}}},
        {"output_dir", c.output_dir},
        {"listen", {{"host", c.listen_host}, {"port", c.listen_port}}},
    };
    return j.dump(2);
}

// ---- server ----------------------------------------------------------------------------------------

bool HybridMap::static_empty() const {
    return (!tsdf || tsdf->empty()) && (!octree || octree->leaf_count() == 0);
}

MappingServer::MappingServer(ServerConfig cfg, EstimatorSlots slots)
    : cfg_(std::move(cfg)), slots_(std::move(slots)), queue_(cfg_.queue_capacity, derive_seed(cfg_.seed, 0x9e)),
      post_(cfg_.postproc), keyframes_(cfg_.keyframes) {
    cfg_.validate();
    if (!slots_.depth) throw ConfigError("mapping server needs a depth estimator");
    if (cfg_.enable_tsdf) map_.tsdf.emplace(cfg_.tsdf);
    if (cfg_.enable_octree) map_.octree.emplace(cfg_.octree);
}

void MappingServer::receive(Frame frame) {
    latest_.put(frame);
    const auto victim = queue_.push(std::move(frame));
    std::lock_guard lock(diag_mu_);
    ++diag_.received;
    if (victim) ++diag_.replaced;
}

void MappingServer::close() {
    queue_.close();
    latest_.close();
}

bool MappingServer::static_step() {
    std::optional<Frame> frame = queue_.pop();
    if (!frame) return false;
    process_static(*frame);
    return true;
}

void MappingServer::process_static(const Frame& f) {
    const Frame* frame = &f;
    const std::optional<Frame> keyframe = keyframes_.select_best(*frame);
    auto depth_job = std::async(std::launch::async, [&] {
        if (slots_.depth->needs_keyframe() && !keyframe) throw Error("no keyframe to pair with");
        return slots_.depth->estimate(*frame, keyframe ? &*keyframe : nullptr);
    });
    std::future<PeopleMask> mask_job;
    if (slots_.masker) mask_job = std::async(std::launch::async, [&] { return slots_.masker->mask(*frame); });

    std::string error;
    DepthImage depth;
    std::optional<PeopleMask> mask;
    try {
        depth = depth_job.get();
    } catch (const std::exception& e) {
        error = std::string("depth: ") + e.what();
    }
    try {
        if (mask_job.valid()) mask = mask_job.get();
    } catch (const std::exception& e) {
        if (error.empty()) error = std::string("mask: ") + e.what();
    }
    keyframes_.maybe_add(*frame);

    if (error.empty()) {
        try {
            DepthImage processed = post_.process({std::move(depth), frame->pose, frame->intrinsics,
                                                  static_cast<std::int64_t>(frame->frame_id)});
            if (mask) processed = depopulate(processed, *mask);
            std::lock_guard lock(map_mu_);
            if (map_.tsdf) map_.tsdf->integrate(processed, frame->intrinsics, frame->pose);
            if (map_.octree) map_.octree->integrate(processed, frame->intrinsics, frame->pose);
        } catch (const Error& e) {
            error = std::string("fusion: ") + e.what();
        }
    }
    std::lock_guard lock(diag_mu_);
    if (error.empty()) {
        ++diag_.fused;
    } else {
        ++diag_.skipped;
        diag_.last_error = "frame " + std::to_string(frame->frame_id) + ": " + error;
    }
}

bool MappingServer::live_step() {
    std::optional<Frame> frame = latest_.take_newer(live_seen_version_);
    if (!frame) return false;
    process_live(*frame);
    return true;
}

void MappingServer::process_live(const Frame& f) {
    const Frame* frame = &f;
    if (!slots_.detector) return;
    LiveSkeletons live;
    live.frame_id = frame->frame_id;
    live.timestamp = frame->timestamp;
    try {
        live.skeletons = slots_.detector->detect(*frame);
    } catch (const std::exception& e) {
        std::lock_guard lock(diag_mu_);
        ++diag_.live_failures;
        diag_.last_error = "live frame " + std::to_string(frame->frame_id) + ": " + e.what();
        return;
    }
    if (cfg_.fit_bodies) {
        const BodyModel neutral = BodyModel::neutral();
        for (const Skeleton& s : live.skeletons) {
            try {
                live.bodies.push_back(fit_body(s, neutral));
            } catch (const DegenerateSkeletonError&) {
                live.bodies.push_back(std::nullopt);
            }
        }
    }
    {
        std::lock_guard lock(map_mu_);
        map_.live = std::move(live);
    }
    std::lock_guard lock(diag_mu_);
    ++diag_.live_updates;
}

HybridMap MappingServer::snapshot() const {
    std::lock_guard lock(map_mu_);
    return map_;
}

Diagnostics MappingServer::diagnostics() const {
    std::lock_guard lock(diag_mu_);
    return diag_;
}

void MappingServer::run_static_worker() {
    while (std::optional<Frame> frame = queue_.wait_pop()) process_static(*frame);
}

void MappingServer::run_live_worker() {
    while (std::optional<Frame> frame = latest_.wait_newer(live_seen_version_)) process_live(*frame);
}

// ---- scheduling ------------------------------------------------------------------------------------

Schedule default_schedule(std::size_t frames) {
    Schedule s;
    s.reserve(3 * frames);
    for (std::size_t i = 0; i < frames; ++i) {
        s.push_back(ScheduleOp::Receive);
        s.push_back(ScheduleOp::Static);
        s.push_back(ScheduleOp::Live);
    }
    return s;
}

namespace {

void execute(MappingServer& server, const std::function<std::optional<Frame>()>& source, ScheduleOp op) {
    switch (op) {
    case ScheduleOp::Receive:
        if (auto f = source()) server.receive(std::move(*f));
        break;
    case ScheduleOp::Static: server.static_step(); break;
    case ScheduleOp::Live: server.live_step(); break;
    }
}

} // namespace

void run_schedule(MappingServer& server, const std::function<std::optional<Frame>()>& source,
                  const Schedule& schedule, bool threaded) {
    if (!threaded) {
        for (ScheduleOp op : schedule) execute(server, source, op);
        return;
    }
    std::mutex mu;
    std::condition_variable cv;
    std::size_t turn = 0;
    std::exception_ptr failure;
    auto role = [&](ScheduleOp mine) {
        while (true) {
            std::unique_lock lock(mu);
            cv.wait(lock, [&] { return turn >= schedule.size() || schedule[turn] == mine || failure; });
            if (turn >= schedule.size() || failure) return;
            lock.unlock();
            try {
                execute(server, source, mine);
            } catch (...) {
                lock.lock();
                failure = std::current_exception();
                cv.notify_all();
                return;
            }
            lock.lock();
            ++turn;
            cv.notify_all();
        }
    };
    std::thread receiver(role, ScheduleOp::Receive);
    std::thread statics(role, ScheduleOp::Static);
    std::thread live(role, ScheduleOp::Live);
    receiver.join();
    statics.join();
    live.join();
    if (failure) std::rethrow_exception(failure);
}

void serve_stream(MappingServer& server, ByteStream& stream) {
    std::exception_ptr failure;
    std::thread statics([&] { server.run_static_worker(); });
    std::thread live([&] { server.run_live_worker(); });
    try {
        while (std::optional<FrameMessage> msg = read_message(stream)) {
            validate(*msg);
            server.receive(msg->to_frame());
        }
    } catch (...) {
        failure = std::current_exception();
    }
    server.close();
    statics.join();
    live.join();
    if (failure) std::rethrow_exception(failure);
}

void export_map(const HybridMap& map, const Diagnostics& diag, const fs::path& dir) {
    fs::create_directories(dir);
    if (map.tsdf) write_ply(dir / "surface.ply", extract_surface(*map.tsdf));
    if (map.octree) {
        std::ofstream out(dir / "octree.txt");
        if (!out) throw IoError("cannot write " + (dir / "octree.txt").string());
        map.octree->write_leaves(out);
    }
    if (map.live) {
        SkeletonSequence seq;
        seq[map.live->frame_id] = map.live->skeletons;
        write_skeletons(dir / "live_skeletons.txt", seq);
    }
    nlohmann::ordered_json j = {{"received", diag.received},     {"replaced", diag.replaced},
                                {"fused", diag.fused},           {"skipped", diag.skipped},
                                {"live_updates", diag.live_updates}, {"live_failures", diag.live_failures},
                                {"last_error", diag.last_error}};
    std::ofstream out(dir / "diagnostics.json");
    if (!out) throw IoError("cannot write " + (dir / "diagnostics.json").string());
    out << j.dump(2) << '\n';
}

} // namespace hmap
