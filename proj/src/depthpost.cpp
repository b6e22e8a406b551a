#include "hybridmap/depthpost.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace hmap {

void PostprocConfig::validate() const {
    if (!(temporal_dist_thresh > 0.0) || !(max_depth > 0.0) || !(edge_thresh > 0.0) || min_component_size <= 0)
        throw ContractViolation("postproc: thresholds must be positive");
    if (median_kernel <= 0 || median_kernel % 2 == 0) throw ContractViolation("postproc: kernel must be odd");
}

int PostprocConfig::scaled_min_component_size(int width, int height) const {
    const double ratio = static_cast<double>(width) * height / (640.0 * 480.0);
    return std::max(1, static_cast<int>(std::lround(min_component_size * ratio)));
}

PostprocConfig PostprocConfig::disabled() {
    PostprocConfig cfg;
    cfg.enable_temporal = cfg.enable_truncation = cfg.enable_small_regions = cfg.enable_median = false;
    return cfg;
}

PostprocConfig PostprocConfig::spatial_only() {
    PostprocConfig cfg;
    cfg.enable_temporal = false;
    return cfg;
}

DepthImage temporal_filter(const FrameContext& current, const FrameContext& previous, const PostprocConfig& cfg) {
    if (!(current.intrinsics == previous.intrinsics))
        throw ContractViolation("temporal_filter: frames have different intrinsics");
    const Intrinsics& k = current.intrinsics;
    const PointImage world_t = transform(current.pose, back_project(current.depth, k));
    const PointImage world_prev = transform(previous.pose, back_project(previous.depth, k));
    const Pose prev_from_world = previous.pose.inverse();

    DepthImage out = current.depth;
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            if (!is_valid_depth(out(x, y))) continue;
            const Vec3& w = world_t(x, y);
            const Vec3 in_prev = prev_from_world * w;
            bool keep = in_prev.z() > 0.0;
            if (keep) {
                const Vec2 uv = project(in_prev, k);
                const double px = std::round(uv.x());
                const double py = std::round(uv.y());
                keep = px >= 0.0 && py >= 0.0 && px < k.width && py < k.height;
                if (keep) {
                    const Vec3& w_prev = world_prev(static_cast<int>(px), static_cast<int>(py));
                    keep = is_valid_point(w_prev) && (w - w_prev).norm() <= cfg.temporal_dist_thresh;
                }
            }
            if (!keep) out(x, y) = kInvalidDepth;
        }
    }
    return out;
}

DepthImage truncate_depth(const DepthImage& depth, const PostprocConfig& cfg) {
    DepthImage out = depth;
    for (double& d : out.data())
        if (is_valid_depth(d) && d > cfg.max_depth) d = kInvalidDepth;
    return out;
}

DepthImage remove_small_components(const DepthImage& depth, const PostprocConfig& cfg) {
    const int w = depth.width();
    const int h = depth.height();
    const int min_size = cfg.scaled_min_component_size(w, h);
    constexpr int kUnlabelled = -1;
    std::vector<int> label(depth.size(), kUnlabelled);
    std::vector<int> stack;
    std::vector<int> members;
    DepthImage out = depth;

    auto linked = [&](int a, int b) {
        return is_valid_depth(depth[b]) && std::abs(depth[b] - depth[a]) <= cfg.edge_thresh;
    };

    int next_label = 0;
    for (int seed = 0; seed < static_cast<int>(depth.size()); ++seed) {
        if (label[seed] != kUnlabelled || !is_valid_depth(depth[seed])) continue;
        members.clear();
        stack.assign(1, seed);
        label[seed] = next_label;
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            members.push_back(i);
            const int x = i % w;
            const int y = i / w;
            const int nbrs[4] = {x > 0 ? i - 1 : -1, x + 1 < w ? i + 1 : -1, y > 0 ? i - w : -1,
                                 y + 1 < h ? i + w : -1};
            for (int n : nbrs) {
                if (n < 0 || label[n] != kUnlabelled || !linked(i, n)) continue;
                label[n] = next_label;
                stack.push_back(n);
            }
        }
        if (static_cast<int>(members.size()) < min_size)
            for (int i : members) out[i] = kInvalidDepth;
        ++next_label;
    }
    return out;
}

DepthImage median_filter(const DepthImage& depth, const PostprocConfig& cfg) {
    const int r = cfg.median_kernel / 2;
    DepthImage out(depth.width(), depth.height(), kInvalidDepth);
    std::vector<double> window;
    window.reserve(static_cast<std::size_t>(cfg.median_kernel) * cfg.median_kernel);
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            if (!is_valid_depth(depth(x, y))) continue;
            window.clear();
            const int y0 = std::max(0, y - r), y1 = std::min(depth.height() - 1, y + r);
            const int x0 = std::max(0, x - r), x1 = std::min(depth.width() - 1, x + r);
            for (int v = y0; v <= y1; ++v)
                for (int u = x0; u <= x1; ++u)
                    if (is_valid_depth(depth(u, v))) window.push_back(depth(u, v));
            const auto mid = window.begin() + (window.size() - 1) / 2;
            std::nth_element(window.begin(), mid, window.end());
            out(x, y) = *mid;
        }
    }
    return out;
}

PostprocResult postprocess_with_reference(const FrameContext& current, const std::optional<FrameContext>& previous,
                                          const PostprocConfig& cfg) {
    cfg.validate();
    PostprocResult result;
    DepthImage d = current.depth;
    if (cfg.enable_temporal && previous) d = temporal_filter({d, current.pose, current.intrinsics, current.frame_id},
                                                             *previous, cfg);
    if (cfg.enable_truncation) d = truncate_depth(d, cfg);
    // The reference skips the temporal filter itself, so holes it cuts do not cascade down the stream.
    if (cfg.temporal_reference == TemporalReference::Truncated)
        result.reference = cfg.enable_truncation ? truncate_depth(current.depth, cfg) : current.depth;
    if (cfg.enable_small_regions) d = remove_small_components(d, cfg);
    if (cfg.enable_median) d = median_filter(d, cfg);

    if (cfg.temporal_reference == TemporalReference::Raw) result.reference = current.depth;
    if (cfg.temporal_reference == TemporalReference::Final) result.reference = d;
    result.depth = std::move(d);
    return result;
}

DepthImage postprocess(const FrameContext& current, const std::optional<FrameContext>& previous,
                       const PostprocConfig& cfg) {
    return postprocess_with_reference(current, previous, cfg).depth;
}

DepthImage StreamPostprocessor::process(const FrameContext& frame) {
    if (previous_ && frame.frame_id <= previous_->frame_id)
        throw ContractViolation("postproc stream: frame ids must be strictly increasing");
    PostprocResult r = postprocess_with_reference(frame, previous_, cfg_);
    previous_ = FrameContext{std::move(r.reference), frame.pose, frame.intrinsics, frame.frame_id};
    return std::move(r.depth);
}

} // namespace hmap
