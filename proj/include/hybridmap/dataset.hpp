#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "hybridmap/geometry.hpp"
#include "hybridmap/skeletal.hpp"

namespace hmap {

struct DatasetMeta {
    Intrinsics intrinsics;
    double fps = 10.0;
    double tracker_scale = 1.0; // world metres per tracker unit, when generated synthetically
};

/// "key value" lines: width height fx fy cx cy fps tracker_scale.
DatasetMeta read_meta(const std::filesystem::path& path);
void write_meta(const std::filesystem::path& path, const DatasetMeta& meta);

/// Lines of "frame_id altitude_m".
std::map<std::uint64_t, double> read_altitudes(const std::filesystem::path& path);
void write_altitudes(const std::filesystem::path& path, const std::map<std::uint64_t, double>& alt);

/// A recorded sequence on disk:
///   meta.txt, trajectory.txt, rgb/%06d.png, and optionally depth/%06d.png, masks/%06d.png, tracker.txt,
///   altitude.txt, skeletons.txt, visibility.txt, gt_cloud.ply.
class SequenceDataset {
public:
    /// Throws DatasetError when meta.txt or trajectory.txt is missing or a trajectory frame has no RGB file.
    explicit SequenceDataset(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }
    const DatasetMeta& meta() const { return meta_; }
    const Trajectory& trajectory() const { return trajectory_; }
    /// Tracker-frame trajectory; falls back to the metric trajectory when tracker.txt is absent.
    const Trajectory& tracker() const { return tracker_; }
    const std::map<std::uint64_t, double>& altitudes() const { return altitudes_; }
    std::size_t size() const { return trajectory_.size(); }

    std::optional<Pose> pose_of(std::uint64_t frame_id) const;

    static std::string frame_name(std::uint64_t frame_id); // "%06d.png"
    std::filesystem::path rgb_path(std::uint64_t frame_id) const;
    std::filesystem::path depth_path(std::uint64_t frame_id) const;
    std::filesystem::path mask_path(std::uint64_t frame_id) const;

    RgbImage rgb(std::uint64_t frame_id) const;
    /// Throws DatasetError when the file does not exist.
    DepthImage depth(std::uint64_t frame_id) const;
    PeopleMask mask(std::uint64_t frame_id) const;

    bool has_skeletons() const { return skeletons_.has_value(); }
    const SkeletonSequence& skeletons() const;
    /// Empty when visibility.txt is absent (every person then counts as visible).
    const VisibilityTable& visibility() const { return visibility_; }

private:
    std::filesystem::path dir_;
    DatasetMeta meta_;
    Trajectory trajectory_;
    Trajectory tracker_;
    std::map<std::uint64_t, double> altitudes_;
    std::map<std::uint64_t, std::size_t> index_;
    std::optional<SkeletonSequence> skeletons_;
    VisibilityTable visibility_;
};

} // namespace hmap
