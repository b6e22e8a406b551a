#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybridmap/fusion.hpp"
#include "hybridmap/skeletal.hpp"

namespace hmap {

/// Mean over s in S of the distance to the nearest point of T. Empty S gives 0; empty T throws
/// ContractViolation.
double cloud_to_cloud(std::span<const Vec3> source, std::span<const Vec3> target);
inline double cloud_to_cloud(const SurfaceCloud& source, const SurfaceCloud& target) {
    return cloud_to_cloud(source.vertices, target.vertices);
}

struct ReconstructionScores {
    double inaccuracy = 0.0;     // recon -> gt
    double incompleteness = 0.0; // gt -> recon
};
ReconstructionScores evaluate_reconstruction(const SurfaceCloud& recon, const SurfaceCloud& gt);

struct GroundTruthSkeleton {
    Skeleton skeleton;
    bool visible = true;
};

struct SkeletonMatchConfig {
    double gate_radius = 1.0; // m, mid-hip to mid-hip
    double pck_threshold = 0.15;
};

struct SkeletonScores {
    std::optional<double> mpjpe; // m, over matched joints; empty when nothing matched
    std::optional<double> pck3d; // percent, over all joints of visible GTs; empty with no visible GT
    int matched_people = 0;
    int missed_people = 0;   // visible GTs without a detection
    int false_positives = 0; // detections left unmatched
    int matched_joints = 0;
    int evaluated_joints = 0; // joints of all visible GTs
    double error_sum = 0.0;   // over matched joints
    int correct_joints = 0;
};

/// Greedy nearest-first association of visible GTs to detections by mid-hip distance within the gate.
/// Matched joints enter MPJPE and 3DPCK; missed GTs count all their joints as 3DPCK failures.
SkeletonScores skeleton_metrics(std::span<const Skeleton> detections, std::span<const GroundTruthSkeleton> gts,
                                const SkeletonMatchConfig& cfg = {});

struct MaskScores {
    std::optional<double> iou; // empty when the GT mask is empty
    std::optional<double> f1;
    double cr = 1.0; // 1 when the GT mask is empty
};
MaskScores mask_metrics(const PeopleMask& mask, const PeopleMask& gt);

/// Ratio of summed consecutive-position segment lengths, gt over estimate. Throws ContractViolation on
/// fewer than two poses or mismatched lengths, Error when the estimate has zero length.
double trajectory_scale_ratio(std::span<const Vec3> gt, std::span<const Vec3> estimate);
double trajectory_scale_ratio(const Trajectory& gt, const Trajectory& estimate);

/// Mean over frames within each sequence, then over sequences. Frames without a value are skipped.
class TwoLevelMean {
public:
    void begin_sequence();
    void add(std::optional<double> frame_value);
    std::optional<double> mean() const;

private:
    std::vector<std::pair<double, int>> sequences_; // (sum, count)
};

struct EvalReport {
    std::optional<double> mean_inaccuracy;
    std::optional<double> mean_incompleteness;
    std::optional<double> mpjpe;
    std::optional<double> pck3d_15cm;
    std::optional<double> iou, f1, cr;
    std::vector<std::pair<std::string, double>> extra;

    std::string to_json() const;
    /// One "key value" line per populated field.
    std::string to_key_values() const;
};

} // namespace hmap
