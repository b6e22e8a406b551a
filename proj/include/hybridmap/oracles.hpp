#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>

#include "hybridmap/dataset.hpp"
#include "hybridmap/pipeline.hpp"
#include "hybridmap/synth.hpp"

namespace hmap {

/// Per-frame ground truth, looked up by frame id.
class GroundTruthSource {
public:
    virtual ~GroundTruthSource() = default;
    virtual DepthImage depth(std::uint64_t frame_id) = 0;
    virtual PeopleMask mask(std::uint64_t frame_id) = 0;
    /// Complete ground-truth skeletons of the people visible in the frame.
    virtual std::vector<Skeleton> visible_skeletons(std::uint64_t frame_id) = 0;
};

/// Renders frames of a scene on demand, keeping the most recent few.
class SceneGroundTruth : public GroundTruthSource {
public:
    SceneGroundTruth(SceneSpec spec, int visibility_min_pixels, std::size_t cache_size = 4);
    DepthImage depth(std::uint64_t frame_id) override;
    PeopleMask mask(std::uint64_t frame_id) override;
    std::vector<Skeleton> visible_skeletons(std::uint64_t frame_id) override;
    const SceneSpec& spec() const { return spec_; }

private:
    std::shared_ptr<const RenderedFrame> get(std::uint64_t frame_id);

    SceneSpec spec_;
    int min_pixels_;
    std::size_t cache_size_;
    std::mutex mu_;
    std::deque<std::shared_ptr<const RenderedFrame>> cache_;
};

class DatasetGroundTruth : public GroundTruthSource {
public:
    explicit DatasetGroundTruth(std::shared_ptr<const SequenceDataset> dataset) : ds_(std::move(dataset)) {}
    DepthImage depth(std::uint64_t frame_id) override { return ds_->depth(frame_id); }
    PeopleMask mask(std::uint64_t frame_id) override { return ds_->mask(frame_id); }
    std::vector<Skeleton> visible_skeletons(std::uint64_t frame_id) override;

private:
    std::shared_ptr<const SequenceDataset> ds_;
};

/// Ground truth plus noise; refuses to estimate without a stereo partner when so configured.
class OracleDepthEstimator : public DepthEstimator {
public:
    OracleDepthEstimator(std::shared_ptr<GroundTruthSource> gt, NoiseModel noise, std::uint64_t seed,
                         bool require_keyframe = true)
        : gt_(std::move(gt)), noise_(noise), seed_(seed), require_keyframe_(require_keyframe) {}
    DepthImage estimate(const Frame& frame, const Frame* keyframe) override;
    bool needs_keyframe() const override { return require_keyframe_; }

private:
    std::shared_ptr<GroundTruthSource> gt_;
    NoiseModel noise_;
    std::uint64_t seed_;
    bool require_keyframe_;
};

class OracleSkeletonDetector : public SkeletonDetector {
public:
    OracleSkeletonDetector(std::shared_ptr<GroundTruthSource> gt, NoiseModel noise, std::uint64_t seed)
        : gt_(std::move(gt)), noise_(noise), seed_(seed) {}
    std::vector<Skeleton> detect(const Frame& frame) override;

private:
    std::shared_ptr<GroundTruthSource> gt_;
    NoiseModel noise_;
    std::uint64_t seed_;
};

/// Exact ground-truth people masks.
class OracleMasker : public PeopleMasker {
public:
    explicit OracleMasker(std::shared_ptr<GroundTruthSource> gt) : gt_(std::move(gt)) {}
    PeopleMask mask(const Frame& frame) override { return gt_->mask(frame.frame_id); }

private:
    std::shared_ptr<GroundTruthSource> gt_;
};

/// Rasterised bounding capsules of detected skeletons.
class BoundingVolumeMasker : public PeopleMasker {
public:
    explicit BoundingVolumeMasker(std::shared_ptr<SkeletonDetector> detector) : detector_(std::move(detector)) {}
    PeopleMask mask(const Frame& frame) override;

private:
    std::shared_ptr<SkeletonDetector> detector_;
};

/// Rasterised capsule bodies fitted to detected skeletons.
class SilhouetteMasker : public PeopleMasker {
public:
    SilhouetteMasker(std::shared_ptr<SkeletonDetector> detector, BodyModel neutral)
        : detector_(std::move(detector)), neutral_(std::move(neutral)) {}
    PeopleMask mask(const Frame& frame) override;

private:
    std::shared_ptr<SkeletonDetector> detector_;
    BodyModel neutral_;
};

/// Masks read from a directory of %06d.png files.
class ExternalMasker : public PeopleMasker {
public:
    explicit ExternalMasker(std::filesystem::path dir) : dir_(std::move(dir)) {}
    PeopleMask mask(const Frame& frame) override;

private:
    std::filesystem::path dir_;
};

/// Every pixel is a person (nothing is ever fused).
class AllTrueMasker : public PeopleMasker {
public:
    PeopleMask mask(const Frame& frame) override {
        return PeopleMask(frame.intrinsics.width, frame.intrinsics.height, 1);
    }
};

/// Ground truth named by the estimator config: a directory is a dataset, a file a scene description.
std::shared_ptr<GroundTruthSource> open_ground_truth(const EstimatorConfig& cfg);

/// Builds the slots named by cfg.estimators, seeded from cfg.seed.
EstimatorSlots make_slots(const ServerConfig& cfg, std::shared_ptr<GroundTruthSource> gt);

} // namespace hmap
