#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hybridmap/depthpost.hpp"
#include "hybridmap/fusion.hpp"
#include "hybridmap/keyframes.hpp"
#include "hybridmap/skeletal.hpp"
#include "hybridmap/synth.hpp"

namespace hmap {

class ByteStream;

/// Fixed-capacity FIFO that, when full, evicts a uniformly random element to make room for the new
/// one. Thread-safe.
template <typename T>
class PooledQueue {
public:
    explicit PooledQueue(std::size_t capacity = 20, std::uint64_t seed = 0) : capacity_(capacity), rng_(seed) {
        if (capacity_ == 0) throw ContractViolation("pooled queue capacity must be positive");
    }

    /// Position (0 = oldest) of the evicted element, if the queue was full.
    std::optional<std::size_t> push(T item) {
        std::optional<std::size_t> victim;
        {
            std::lock_guard lock(mu_);
            if (closed_) throw ContractViolation("push to a closed queue");
            if (items_.size() == capacity_) {
                victim = std::uniform_int_distribution<std::size_t>(0, items_.size() - 1)(rng_);
                items_.erase(items_.begin() + static_cast<std::ptrdiff_t>(*victim));
            }
            items_.push_back(std::move(item));
        }
        cv_.notify_all();
        return victim;
    }

    /// Oldest element, or nullopt when empty.
    std::optional<T> pop() {
        std::lock_guard lock(mu_);
        return pop_locked();
    }

    /// Blocks until an element arrives; nullopt once the queue is closed and drained.
    std::optional<T> wait_pop() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !items_.empty() || closed_; });
        return pop_locked();
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }
    bool empty() const { return size() == 0; }
    std::size_t capacity() const { return capacity_; }

private:
    std::optional<T> pop_locked() {
        if (items_.empty()) return std::nullopt;
        T out = std::move(items_.front());
        items_.pop_front();
        return out;
    }

    const std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<T> items_;
    std::mt19937_64 rng_;
    bool closed_ = false;
};

/// Single-value mailbox: every put overwrites; readers get a whole copy of the latest value.
template <typename T>
class LatestSlot {
public:
    void put(T value) {
        {
            std::lock_guard lock(mu_);
            value_ = std::move(value);
            ++version_;
        }
        cv_.notify_all();
    }

    std::optional<T> latest() const {
        std::lock_guard lock(mu_);
        return value_;
    }

    /// Latest value if it is newer than `seen_version`; updates `seen_version`.
    std::optional<T> take_newer(std::uint64_t& seen_version) const {
        std::lock_guard lock(mu_);
        if (version_ == seen_version || !value_) return std::nullopt;
        seen_version = version_;
        return value_;
    }

    /// Blocks until a value newer than `seen_version` exists or the slot is closed.
    std::optional<T> wait_newer(std::uint64_t& seen_version) const {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return version_ != seen_version || closed_; });
        if (version_ == seen_version || !value_) return std::nullopt;
        seen_version = version_;
        return value_;
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    std::uint64_t version() const {
        std::lock_guard lock(mu_);
        return version_;
    }

private:
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::optional<T> value_;
    std::uint64_t version_ = 0;
    bool closed_ = false;
};

// ---- estimator slots -------------------------------------------------------------------------------

/// Any exception thrown by a slot marks the frame as failed.
class DepthEstimator {
public:
    virtual ~DepthEstimator() = default;
    /// `keyframe` is the best stereo partner, when one exists.
    virtual DepthImage estimate(const Frame& frame, const Frame* keyframe) = 0;
    virtual bool needs_keyframe() const { return true; }
};

class PeopleMasker {
public:
    virtual ~PeopleMasker() = default;
    virtual PeopleMask mask(const Frame& frame) = 0;
};

class SkeletonDetector {
public:
    virtual ~SkeletonDetector() = default;
    virtual std::vector<Skeleton> detect(const Frame& frame) = 0;
};

struct EstimatorSlots {
    std::shared_ptr<DepthEstimator> depth;
    std::shared_ptr<PeopleMasker> masker;     // null: no masking
    std::shared_ptr<SkeletonDetector> detector; // null: live path disabled
};

// ---- configuration ---------------------------------------------------------------------------------

struct EstimatorConfig {
    std::string depth = "oracle";    // oracle
    std::string masker = "oracle";   // oracle | bounding_volume | silhouette | external | all_true | none
    std::string detector = "oracle"; // oracle | none
    std::string ground_truth;        // dataset directory or scene file for the oracles
    std::string external_masks;      // directory of %06d.png masks for masker = external
    bool require_keyframe = true;
    int visibility_min_pixels = 200;
    NoiseModel noise;
};

struct ServerConfig {
    std::size_t queue_capacity = 20;
    std::uint64_t seed = 0;
    bool enable_tsdf = true;
    bool enable_octree = false;
    TsdfConfig tsdf;
    OctreeConfig octree;
    PostprocConfig postproc;
    KeyframeParams keyframes;
    bool fit_bodies = false;
    EstimatorConfig estimators;
    std::string output_dir = "hybridmap_out";
    std::string listen_host = "127.0.0.1";
    std::uint16_t listen_port = 5555;

    void validate() const;
};

/// JSON configuration; see docs/server_config.md. Unknown keys are rejected with ConfigError.
ServerConfig parse_server_config(const std::string& json_text, ServerConfig base = {});
ServerConfig load_server_config(const std::filesystem::path& path, ServerConfig base = {});
std::string to_json(const ServerConfig& cfg);

// ---- map state -------------------------------------------------------------------------------------

struct LiveSkeletons {
    std::uint64_t frame_id = 0;
    double timestamp = 0.0;
    std::vector<Skeleton> skeletons;
    std::vector<std::optional<FittedBody>> bodies; // one per skeleton when fitting is enabled
};

struct HybridMap {
    std::optional<TsdfVolume> tsdf;
    std::optional<OccupancyOctree> octree;
    std::optional<LiveSkeletons> live;

    bool static_empty() const;
};

struct Diagnostics {
    std::uint64_t received = 0;
    std::uint64_t replaced = 0; // evicted from the queue before processing
    std::uint64_t fused = 0;
    std::uint64_t skipped = 0;  // estimator or masking failure
    std::uint64_t live_updates = 0;
    std::uint64_t live_failures = 0;
    std::string last_error;
};

/// The mapping server: one producer (receive), one static-mapping consumer, one live-skeleton consumer.
class MappingServer {
public:
    MappingServer(ServerConfig cfg, EstimatorSlots slots);

    const ServerConfig& config() const { return cfg_; }

    /// Producer side: queue for static mapping and publish for live detection.
    void receive(Frame frame);
    /// No more frames will arrive; blocked workers drain and exit.
    void close();

    /// Consumes the oldest queued frame. Returns false when the queue was empty.
    bool static_step();
    /// Processes the newest received frame if it has not been seen yet. Returns false otherwise.
    bool live_step();

    /// Deep copy of the current maps.
    HybridMap snapshot() const;
    Diagnostics diagnostics() const;
    std::size_t queued() const { return queue_.size(); }

    /// Blocking loops for threaded operation; both return after close() once all work is drained.
    void run_static_worker();
    void run_live_worker();

private:
    void process_static(const Frame& frame);
    void process_live(const Frame& frame);

    ServerConfig cfg_;
    EstimatorSlots slots_;
    PooledQueue<Frame> queue_;
    LatestSlot<Frame> latest_;
    std::uint64_t live_seen_version_ = 0;

    // static worker state
    StreamPostprocessor post_;
    KeyframeStore<Frame> keyframes_;

    mutable std::mutex map_mu_;
    HybridMap map_;
    mutable std::mutex diag_mu_;
    Diagnostics diag_;
};

// ---- scheduling ------------------------------------------------------------------------------------

enum class ScheduleOp { Receive, Static, Live };
using Schedule = std::vector<ScheduleOp>;

/// Receive, Static, Live per frame.
Schedule default_schedule(std::size_t frames);

/// Pulls frames from `source` (nullopt = exhausted) on Receive. Single-threaded mode executes the ops in
/// order on the calling thread; threaded mode runs receiver, static and live on their own threads, taking
/// turns in schedule order. Both produce identical maps.
void run_schedule(MappingServer& server, const std::function<std::optional<Frame>()>& source,
                  const Schedule& schedule, bool threaded);

/// Free-running threaded server over a byte stream: a receiver thread decodes frames until end of stream,
/// and the two workers run until everything is drained.
void serve_stream(MappingServer& server, ByteStream& stream);

/// surface.ply (TSDF zero crossings), octree.txt, live_skeletons.txt and diagnostics.json under `dir`.
void export_map(const HybridMap& map, const Diagnostics& diag, const std::filesystem::path& dir);

} // namespace hmap
