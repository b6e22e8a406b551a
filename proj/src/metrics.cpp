#include "hybridmap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "hybridmap/kdtree.hpp"

namespace hmap {

double cloud_to_cloud(std::span<const Vec3> source, std::span<const Vec3> target) {
    if (source.empty()) return 0.0;
    if (target.empty()) throw ContractViolation("cloud_to_cloud: target cloud is empty");
    const KdTree3<double> tree(target);
    double sum = 0.0;
    for (const Vec3& s : source) sum += std::sqrt(tree.nearest(s).squared_distance);
    return sum / static_cast<double>(source.size());
}

ReconstructionScores evaluate_reconstruction(const SurfaceCloud& recon, const SurfaceCloud& gt) {
    return {cloud_to_cloud(recon, gt), cloud_to_cloud(gt, recon)};
}

SkeletonScores skeleton_metrics(std::span<const Skeleton> detections, std::span<const GroundTruthSkeleton> gts,
                                const SkeletonMatchConfig& cfg) {
    SkeletonScores out;
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs; // (distance, gt, detection)
    int visible = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
        if (!gts[g].visible) continue;
        ++visible;
        for (std::size_t d = 0; d < detections.size(); ++d) {
            const double dist = (gts[g].skeleton[Joint::MidHip] - detections[d][Joint::MidHip]).norm();
            if (dist <= cfg.gate_radius) pairs.emplace_back(dist, g, d);
        }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> gt_used(gts.size(), false), det_used(detections.size(), false);
    for (const auto& [dist, g, d] : pairs) {
        if (gt_used[g] || det_used[d]) continue;
        gt_used[g] = det_used[d] = true;
        ++out.matched_people;
        for (int j = 0; j < kJointCount; ++j) {
            const double e = (gts[g].skeleton.keypoints[j] - detections[d].keypoints[j]).norm();
            out.error_sum += e;
            out.correct_joints += e <= cfg.pck_threshold;
            ++out.matched_joints;
        }
    }
    out.missed_people = visible - out.matched_people;
    out.false_positives = static_cast<int>(std::count(det_used.begin(), det_used.end(), false));
    out.evaluated_joints = visible * kJointCount;
    if (out.matched_joints > 0) out.mpjpe = out.error_sum / out.matched_joints;
    if (out.evaluated_joints > 0) out.pck3d = 100.0 * out.correct_joints / out.evaluated_joints;
    return out;
}

MaskScores mask_metrics(const PeopleMask& mask, const PeopleMask& gt) {
    if (!mask.same_shape(gt)) throw ContractViolation("mask_metrics: masks differ in size");
    std::size_t inter = 0, m = 0, g = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const bool a = mask[i] != 0, b = gt[i] != 0;
        inter += a && b;
        m += a;
        g += b;
    }
    MaskScores s;
    if (g == 0) return s;
    const std::size_t uni = m + g - inter;
    s.iou = static_cast<double>(inter) / static_cast<double>(uni);
    s.f1 = 2.0 * static_cast<double>(inter) / static_cast<double>(m + g);
    s.cr = static_cast<double>(inter) / static_cast<double>(g);
    return s;
}

double trajectory_scale_ratio(std::span<const Vec3> gt, std::span<const Vec3> estimate) {
    if (gt.size() != estimate.size()) throw ContractViolation("trajectory_scale_ratio: lengths differ");
    if (gt.size() < 2) throw ContractViolation("trajectory_scale_ratio: need at least two poses");
    double lg = 0.0, le = 0.0;
    for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
        lg += (gt[i + 1] - gt[i]).norm();
        le += (estimate[i + 1] - estimate[i]).norm();
    }
    if (!(le > 0.0)) throw Error("trajectory_scale_ratio: estimated trajectory has zero length");
    return lg / le;
}

double trajectory_scale_ratio(const Trajectory& gt, const Trajectory& estimate) {
    std::vector<Vec3> a, b;
    for (const auto& e : gt) a.push_back(e.pose.translation());
    for (const auto& e : estimate) b.push_back(e.pose.translation());
    return trajectory_scale_ratio(a, b);
}

void TwoLevelMean::begin_sequence() { sequences_.emplace_back(0.0, 0); }

void TwoLevelMean::add(std::optional<double> frame_value) {
    if (sequences_.empty()) begin_sequence();
    if (!frame_value) return;
    sequences_.back().first += *frame_value;
    sequences_.back().second += 1;
}

std::optional<double> TwoLevelMean::mean() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& [s, c] : sequences_) {
        if (c == 0) continue;
        sum += s / c;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

namespace {

std::vector<std::pair<std::string, std::optional<double>>> report_fields(const EvalReport& r) {
    std::vector<std::pair<std::string, std::optional<double>>> f = {
        {"mean_inaccuracy", r.mean_inaccuracy}, {"mean_incompleteness", r.mean_incompleteness},
        {"mpjpe", r.mpjpe}, {"pck3d_15cm", r.pck3d_15cm}, {"iou", r.iou}, {"f1", r.f1}, {"cr", r.cr}};
    for (const auto& [k, v] : r.extra) f.emplace_back(k, v);
    return f;
}

} // namespace

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report_fields(*this))
        if (v) j[k] = *v;
    return j.dump(2) + "\n";
}

std::string EvalReport::to_key_values() const {
    std::ostringstream os;
    os << std::setprecision(10);
    for (const auto& [k, v] : report_fields(*this))
        if (v) os << k << ' ' << *v << '\n';
    return os.str();
}

} // namespace hmap
