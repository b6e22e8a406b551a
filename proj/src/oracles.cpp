#include "hybridmap/oracles.hpp"

#include "hybridmap/image_io.hpp"

namespace hmap {

namespace fs = std::filesystem;

namespace {
// stream tags for derive_seed
constexpr std::uint64_t kDepthStream = 1;
constexpr std::uint64_t kSkeletonStream = 2;
} // namespace

SceneGroundTruth::SceneGroundTruth(SceneSpec spec, int visibility_min_pixels, std::size_t cache_size)
    : spec_(std::move(spec)), min_pixels_(visibility_min_pixels), cache_size_(std::max<std::size_t>(1, cache_size)) {}

std::shared_ptr<const RenderedFrame> SceneGroundTruth::get(std::uint64_t frame_id) {
    std::lock_guard lock(mu_);
    for (const auto& f : cache_)
        if (f->frame_id == frame_id) return f;
    if (frame_id >= spec_.frame_count())
        throw DatasetError("scene has no frame " + std::to_string(frame_id));
    auto f = std::make_shared<const RenderedFrame>(render_frame(spec_, frame_id));
    cache_.push_back(f);
    if (cache_.size() > cache_size_) cache_.pop_front();
    return f;
}

DepthImage SceneGroundTruth::depth(std::uint64_t frame_id) { return get(frame_id)->depth; }
PeopleMask SceneGroundTruth::mask(std::uint64_t frame_id) { return get(frame_id)->mask; }
std::vector<Skeleton> SceneGroundTruth::visible_skeletons(std::uint64_t frame_id) {
    return hmap::visible_skeletons(*get(frame_id), min_pixels_);
}

std::vector<Skeleton> DatasetGroundTruth::visible_skeletons(std::uint64_t frame_id) {
    std::vector<Skeleton> out;
    const auto& all = ds_->skeletons();
    const auto it = all.find(frame_id);
    if (it == all.end()) return out;
    const auto& vis = ds_->visibility();
    for (const Skeleton& s : it->second) {
        const auto v = vis.find({frame_id, s.person_id});
        if (v == vis.end() || v->second) out.push_back(s);
    }
    return out;
}

DepthImage OracleDepthEstimator::estimate(const Frame& frame, const Frame* keyframe) {
    if (require_keyframe_ && !keyframe) throw Error("no keyframe to pair with");
    DepthImage gt = gt_->depth(frame.frame_id);
    if (gt.width() != frame.intrinsics.width || gt.height() != frame.intrinsics.height)
        throw ContractViolation("ground-truth depth does not match the frame resolution");
    return oracle_depth(gt, noise_, derive_seed(seed_, kDepthStream, frame.frame_id));
}

std::vector<Skeleton> OracleSkeletonDetector::detect(const Frame& frame) {
    return oracle_skeletons(gt_->visible_skeletons(frame.frame_id), noise_,
                            derive_seed(seed_, kSkeletonStream, frame.frame_id));
}

PeopleMask BoundingVolumeMasker::mask(const Frame& frame) {
    const auto skeletons = detector_->detect(frame);
    return mask_bounding_volumes(skeletons, frame.intrinsics, frame.pose);
}

PeopleMask SilhouetteMasker::mask(const Frame& frame) {
    std::vector<std::pair<BodyModel, PoseParams>> bodies;
    for (const Skeleton& s : detector_->detect(frame)) {
        FittedBody fit = fit_body(s, neutral_);
        bodies.emplace_back(std::move(fit.body), fit.params);
    }
    return mask_body_silhouettes(bodies, frame.intrinsics, frame.pose);
}

PeopleMask ExternalMasker::mask(const Frame& frame) {
    const fs::path p = dir_ / SequenceDataset::frame_name(frame.frame_id);
    if (!fs::exists(p)) throw DatasetError("missing mask " + p.string());
    return read_mask_png(p);
}

std::shared_ptr<GroundTruthSource> open_ground_truth(const EstimatorConfig& cfg) {
    if (cfg.ground_truth.empty()) throw ConfigError("oracle estimators need a ground_truth dataset or scene");
    const fs::path p = cfg.ground_truth;
    if (fs::is_directory(p)) return std::make_shared<DatasetGroundTruth>(std::make_shared<SequenceDataset>(p));
    return std::make_shared<SceneGroundTruth>(load_scene(p), cfg.visibility_min_pixels);
}

EstimatorSlots make_slots(const ServerConfig& cfg, std::shared_ptr<GroundTruthSource> gt) {
    const EstimatorConfig& e = cfg.estimators;
    EstimatorSlots slots;
    if (e.depth != "oracle") throw ConfigError("unknown depth estimator '" + e.depth + "'");
    slots.depth = std::make_shared<OracleDepthEstimator>(gt, e.noise, cfg.seed, e.require_keyframe);

    std::shared_ptr<SkeletonDetector> detector;
    if (e.detector == "oracle") detector = std::make_shared<OracleSkeletonDetector>(gt, e.noise, cfg.seed);
    else if (e.detector != "none") throw ConfigError("unknown skeleton detector '" + e.detector + "'");
    slots.detector = detector;

    if (e.masker == "oracle") {
        slots.masker = std::make_shared<OracleMasker>(gt);
    } else if (e.masker == "bounding_volume" || e.masker == "silhouette") {
        // masks see the same detections as the live path
        auto d = detector ? detector : std::make_shared<OracleSkeletonDetector>(gt, e.noise, cfg.seed);
        if (e.masker == "bounding_volume") slots.masker = std::make_shared<BoundingVolumeMasker>(d);
        else slots.masker = std::make_shared<SilhouetteMasker>(d, BodyModel::neutral());
    } else if (e.masker == "external") {
        if (e.external_masks.empty()) throw ConfigError("masker 'external' needs external_masks");
        slots.masker = std::make_shared<ExternalMasker>(e.external_masks);
    } else if (e.masker == "all_true") {
        slots.masker = std::make_shared<AllTrueMasker>();
    } else if (e.masker != "none") {
        throw ConfigError("unknown people masker '" + e.masker + "'");
    }
    return slots;
}

} // namespace hmap
