#pragma once

#include <cstdint>
#include <optional>

#include "hybridmap/geometry.hpp"

namespace hmap {

/// Which version of frame t-1 the temporal filter compares frame t against.
enum class TemporalReference {
    Raw,       // estimator output
    Truncated, // estimator output after truncation only
    Final,     // fully post-processed
};

struct PostprocConfig {
    double temporal_dist_thresh = 0.1; // metres
    double max_depth = 4.0;            // metres, strict >
    double edge_thresh = 0.05;         // metres, neighbour link threshold for segmentation
    int min_component_size = 5000;     // pixels at 640x480, scaled by image area
    int median_kernel = 5;
    TemporalReference temporal_reference = TemporalReference::Truncated;

    bool enable_temporal = true;
    bool enable_truncation = true;
    bool enable_small_regions = true;
    bool enable_median = true;

    void validate() const;
    /// Component size threshold for a width x height image.
    int scaled_min_component_size(int width, int height) const;

    static PostprocConfig disabled();
    static PostprocConfig spatial_only();
};

struct FrameContext {
    DepthImage depth;
    Pose pose;
    Intrinsics intrinsics;
    std::int64_t frame_id = 0;
};

/// Drops pixels of `current` whose world-space point disagrees with the point seen at its reprojection in
/// `previous`; surviving pixels keep their depth bit-for-bit.
DepthImage temporal_filter(const FrameContext& current, const FrameContext& previous, const PostprocConfig& cfg);

DepthImage truncate_depth(const DepthImage& depth, const PostprocConfig& cfg);

/// Segments valid pixels into 4-connected components whose neighbouring depths differ by at most
/// edge_thresh, and invalidates components smaller than the (area-scaled) minimum size.
DepthImage remove_small_components(const DepthImage& depth, const PostprocConfig& cfg);

/// Median of the valid depths in the kernel window (clipped at borders). Holes are not filled.
/// With an even number of valid samples the lower median is taken.
DepthImage median_filter(const DepthImage& depth, const PostprocConfig& cfg);

struct PostprocResult {
    DepthImage depth;
    /// What the next frame's temporal filter should compare against (per cfg.temporal_reference).
    DepthImage reference;
};

/// Temporal (skipped without `previous`), truncation, small-region removal and median, in that order.
/// Stages disabled in cfg pass their input through.
PostprocResult postprocess_with_reference(const FrameContext& current, const std::optional<FrameContext>& previous,
                                          const PostprocConfig& cfg);

DepthImage postprocess(const FrameContext& current, const std::optional<FrameContext>& previous,
                       const PostprocConfig& cfg);

/// Runs the chain over a stream, remembering the reference of the last processed frame.
class StreamPostprocessor {
public:
    explicit StreamPostprocessor(PostprocConfig cfg = {}) : cfg_(cfg) {}

    DepthImage process(const FrameContext& frame);
    void reset() { previous_.reset(); }
    const PostprocConfig& config() const { return cfg_; }

private:
    PostprocConfig cfg_;
    std::optional<FrameContext> previous_;
};

} // namespace hmap
