#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "hybridmap/geometry.hpp"

namespace hmap {

struct KeyframeParams {
    double add_trans_thresh = 0.05; // m
    double add_angle_thresh = 5.0;  // deg
    double peak_baseline = 0.4;     // m, score peaks here
    double baseline_sigma = 0.2;    // m
    double min_baseline = 0.025;    // m
    double max_angle = 20.0;        // deg
};

struct PoseDelta {
    double baseline = 0.0;  // metres between camera centres
    double angle_deg = 0.0; // geodesic angle between orientations
};

inline PoseDelta pose_delta(const Pose& a, const Pose& b) {
    return {(a.translation() - b.translation()).norm(), rotation_angle_deg(a.rotation(), b.rotation())};
}

/// Stereo-pair suitability in [0, 1]: a Gaussian in baseline around the peak, gated to zero for tiny
/// baselines or large rotations.
inline double keyframe_score(const PoseDelta& d, const KeyframeParams& p = {}) {
    if (!(d.baseline >= p.min_baseline && d.angle_deg <= p.max_angle)) return 0.0;
    const double e = d.baseline - p.peak_baseline;
    return std::exp(-(e * e) / (p.baseline_sigma * p.baseline_sigma));
}

inline double keyframe_score(const Pose& frame, const Pose& keyframe, const KeyframeParams& p = {}) {
    return keyframe_score(pose_delta(frame, keyframe), p);
}

/// Keyframes for two-view depth estimation. FrameT needs `pose` (Pose) and `frame_id` (integral) members.
template <typename FrameT>
class KeyframeStore {
public:
    explicit KeyframeStore(KeyframeParams params = {}) : params_(params) {}

    const KeyframeParams& params() const { return params_; }
    const std::vector<FrameT>& keyframes() const { return keyframes_; }
    std::size_t size() const { return keyframes_.size(); }
    bool empty() const { return keyframes_.empty(); }

    /// Adds the frame if the store is empty, or if the nearest keyframe (by translation) is more than
    /// add_trans_thresh away or rotated by more than add_angle_thresh.
    bool maybe_add(const FrameT& frame) {
        if (should_add(frame.pose)) {
            keyframes_.push_back(frame);
            return true;
        }
        return false;
    }

    bool should_add(const Pose& pose) const {
        if (keyframes_.empty()) return true;
        const FrameT* closest = nullptr;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& kf : keyframes_) {
            const double dt = (kf.pose.translation() - pose.translation()).norm();
            if (dt < best) {
                best = dt;
                closest = &kf;
            }
        }
        if (best > params_.add_trans_thresh) return true;
        return rotation_angle_deg(closest->pose.rotation(), pose.rotation()) > params_.add_angle_thresh;
    }

    double score(const FrameT& frame, const FrameT& keyframe) const {
        return keyframe_score(frame.pose, keyframe.pose, params_);
    }

    /// Highest-scoring keyframe; ties go to the lower frame_id. Empty when nothing scores above zero.
    std::optional<FrameT> select_best(const Pose& pose) const {
        const FrameT* best = nullptr;
        double best_score = 0.0;
        for (const auto& kf : keyframes_) {
            const double s = keyframe_score(pose, kf.pose, params_);
            if (s <= 0.0) continue;
            if (!best || s > best_score || (s == best_score && kf.frame_id < best->frame_id)) {
                best = &kf;
                best_score = s;
            }
        }
        if (!best) return std::nullopt;
        return *best;
    }

    std::optional<FrameT> select_best(const FrameT& frame) const { return select_best(frame.pose); }

private:
    KeyframeParams params_;
    std::vector<FrameT> keyframes_;
};

} // namespace hmap
