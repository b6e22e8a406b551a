#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hybridmap/fusion.hpp"
#include "hybridmap/geometry.hpp"
#include "hybridmap/skeletal.hpp"

namespace hmap {

// World frame of synthetic scenes is z-up, metres.

struct BoxPrimitive {
    Vec3 min = Vec3::Zero(), max = Vec3::Zero();
    bool hollow = false; // a room: seen from inside
    Rgb8 colour{180, 180, 180};
};

/// Two-sided infinite plane n . x = offset (n unit length).
struct PlanePrimitive {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;
    Rgb8 colour{150, 150, 150};
};

struct CameraWaypoint {
    double t = 0.0;
    Vec3 eye = Vec3::Zero();
    Vec3 target = Vec3::UnitX();
};

struct PathWaypoint {
    double t = 0.0;
    Vec2 position = Vec2::Zero(); // on the floor
};

struct PersonSpec {
    int id = 0;
    double scale = 1.0;
    double walk_period = 1.2; // s per full stride cycle
    double floor_z = 0.0;
    std::vector<PathWaypoint> path;
};

struct SceneSpec {
    Intrinsics intrinsics{300.0, 300.0, 159.5, 119.5, 320, 240};
    double fps = 10.0;
    double duration = 10.0; // s; frames at i / fps for i / fps < duration
    std::vector<BoxPrimitive> boxes;
    std::vector<PlanePrimitive> planes;
    std::vector<CameraWaypoint> camera;
    std::vector<PersonSpec> people;

    std::size_t frame_count() const;
    double frame_time(std::uint64_t frame_id) const { return static_cast<double>(frame_id) / fps; }

    /// Throws ConfigError on inconsistent content (no camera path, unsorted waypoints, camera inside a solid,
    /// people outside the scene bounds).
    void validate() const;
};

/// Line-based scene description; see docs/scene_format.md. Throws ConfigError with the line number.
SceneSpec parse_scene(std::istream& in);
SceneSpec load_scene(const std::filesystem::path& path);

struct NoiseModel {
    double depth_sigma_a = 0.0; // sigma(d) = a + b d^2
    double depth_sigma_b = 0.0;
    double depth_correlation_px = 0.0; // Gaussian kernel std-dev smoothing the depth noise; 0 = per-pixel
    double outlier_fraction = 0.0;
    double outlier_magnitude = 0.0;
    double skeleton_jitter = 0.0;
    double miss_probability = 0.0;
    double altitude_sigma = 0.0;

    void validate() const;
};

/// Reads "noise <key> <value>" lines (other lines are ignored), starting from `base`.
NoiseModel parse_noise(std::istream& in, NoiseModel base = {});

/// Independent stream seed for (seed, a, b), so every stochastic consumer gets its own generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// ---- rendering -------------------------------------------------------------------------------------

Pose camera_pose_at(const SceneSpec& spec, double t);

struct PersonState {
    int id = 0;
    BodyModel body;
    PoseParams params;
    Skeleton skeleton;
};

/// Walk-cycle pose of every person at time t.
std::vector<PersonState> people_at(const SceneSpec& spec, double t);

struct RenderedFrame {
    std::uint64_t frame_id = 0;
    double timestamp = 0.0;
    Pose pose; // world from camera
    Intrinsics intrinsics;
    RgbImage rgb;
    DepthImage depth; // z-depth of the nearest hit, NaN where the ray escapes
    PeopleMask mask;  // pixels whose nearest hit is a person
    Image<std::int16_t> labels; // -1 nothing, -2 static scene, else index into `people`
    std::vector<PersonState> people;
    std::vector<int> person_pixels; // mask pixels per person
};

/// Analytic ray casting of the scene at time t. Throws ContractViolation when t is outside [0, duration].
RenderedFrame render_at(const SceneSpec& spec, double t, std::uint64_t frame_id = 0);
RenderedFrame render_frame(const SceneSpec& spec, std::uint64_t frame_id);

// ---- oracle estimators -----------------------------------------------------------------------------

/// Ground truth plus depth-dependent Gaussian noise (spatially smooth when depth_correlation_px > 0, with the
/// same marginal sigma) and per-pixel sign-random outliers; non-positive results become holes. Zero noise reproduces the input bit for bit.
DepthImage oracle_depth(const DepthImage& gt, const NoiseModel& noise, std::uint64_t seed);

/// One complete jittered skeleton per visible person that is not missed.
std::vector<Skeleton> oracle_skeletons(const std::vector<Skeleton>& visible_gt, const NoiseModel& noise,
                                       std::uint64_t seed);

/// Visible people of a rendered frame.
std::vector<Skeleton> visible_skeletons(const RenderedFrame& frame, int min_pixels);

// ---- ground truth ----------------------------------------------------------------------------------

/// Static geometry seen by the frames: ground-truth depth without person pixels, back-projected and
/// reduced to one point (the first seen) per cell of size `cell`. Depths beyond max_depth are ignored.
SurfaceCloud observed_static_cloud(const std::vector<RenderedFrame>& frames, double cell, double max_depth);

/// Accumulates observed_static_cloud incrementally.
class StaticCloudBuilder {
public:
    StaticCloudBuilder(double cell, double max_depth) : cell_(cell), max_depth_(max_depth) {}
    void add(const RenderedFrame& frame);
    SurfaceCloud cloud() const;

private:
    double cell_, max_depth_;
    std::map<std::array<std::int64_t, 3>, Vec3> cells_;
};

// ---- dataset generation ----------------------------------------------------------------------------

struct DatasetOptions {
    double tracker_scale = 0.5;   // world metres per tracker unit
    int visibility_min_pixels = 200;
    double gt_cloud_cell = 0.02;
    double gt_cloud_max_depth = 4.0;
};

/// Writes rgb/, depth/ (ground truth, mm), masks/, trajectory.txt, tracker.txt, altitude.txt,
/// skeletons.txt, visibility.txt, meta.txt and gt_cloud.ply. Output is a function of the inputs only.
void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, const NoiseModel& noise,
                   std::uint64_t seed, const DatasetOptions& opts = {});

} // namespace hmap
