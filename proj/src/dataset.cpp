#include "hybridmap/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hybridmap/image_io.hpp"

namespace hmap {

namespace fs = std::filesystem;

DatasetMeta read_meta(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open " + path.string());
    std::map<std::string, double> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        double value;
        if (!(ls >> key >> value)) throw DatasetError("meta: malformed line '" + line + "'");
        kv[key] = value;
    }
    auto get = [&](const std::string& k) {
        const auto it = kv.find(k);
        if (it == kv.end()) throw DatasetError("meta: missing key " + k);
        return it->second;
    };
    DatasetMeta m;
    m.intrinsics.width = static_cast<int>(get("width"));
    m.intrinsics.height = static_cast<int>(get("height"));
    m.intrinsics.fx = get("fx");
    m.intrinsics.fy = get("fy");
    m.intrinsics.cx = get("cx");
    m.intrinsics.cy = get("cy");
    m.fps = get("fps");
    if (kv.count("tracker_scale")) m.tracker_scale = kv["tracker_scale"];
    try {
        m.intrinsics.validate();
    } catch (const ContractViolation& e) {
        throw DatasetError(std::string("meta: ") + e.what());
    }
    if (!(m.fps > 0.0)) throw DatasetError("meta: fps must be positive");
    return m;
}

void write_meta(const fs::path& path, const DatasetMeta& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << std::setprecision(17);
    out << "width " << m.intrinsics.width << "\nheight " << m.intrinsics.height << "\nfx " << m.intrinsics.fx
        << "\nfy " << m.intrinsics.fy << "\ncx " << m.intrinsics.cx << "\ncy " << m.intrinsics.cy << "\nfps " << m.fps
        << "\ntracker_scale " << m.tracker_scale << '\n';
}

std::map<std::uint64_t, double> read_altitudes(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open " + path.string());
    std::map<std::uint64_t, double> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::uint64_t id;
        double a;
        if (!(ls >> id >> a)) throw DatasetError("altitude: malformed line '" + line + "'");
        out[id] = a;
    }
    return out;
}

void write_altitudes(const fs::path& path, const std::map<std::uint64_t, double>& alt) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << std::setprecision(17);
    for (const auto& [id, a] : alt) out << id << ' ' << a << '\n';
}

SequenceDataset::SequenceDataset(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::is_directory(dir_)) throw DatasetError("not a dataset directory: " + dir_.string());
    meta_ = read_meta(dir_ / "meta.txt");
    if (!fs::exists(dir_ / "trajectory.txt")) throw DatasetError("missing trajectory.txt in " + dir_.string());
    try {
        trajectory_ = read_trajectory(dir_ / "trajectory.txt");
        tracker_ = fs::exists(dir_ / "tracker.txt") ? read_trajectory(dir_ / "tracker.txt") : trajectory_;
    } catch (const DatasetError&) {
        throw;
    } catch (const Error& e) {
        throw DatasetError(e.what());
    }
    if (tracker_.size() != trajectory_.size()) throw DatasetError("tracker.txt and trajectory.txt differ in length");
    for (std::size_t i = 0; i < trajectory_.size(); ++i) {
        const auto id = trajectory_[i].frame_id;
        if (!index_.emplace(id, i).second) throw DatasetError("duplicate frame id " + std::to_string(id));
        if (tracker_[i].frame_id != id) throw DatasetError("tracker.txt frame ids do not match trajectory.txt");
        if (!fs::exists(rgb_path(id))) throw DatasetError("missing RGB file " + rgb_path(id).string());
    }
    if (fs::exists(dir_ / "altitude.txt")) altitudes_ = read_altitudes(dir_ / "altitude.txt");
    if (fs::exists(dir_ / "skeletons.txt")) skeletons_ = read_skeletons(dir_ / "skeletons.txt");
    if (fs::exists(dir_ / "visibility.txt")) visibility_ = read_visibility(dir_ / "visibility.txt");
}

std::optional<Pose> SequenceDataset::pose_of(std::uint64_t frame_id) const {
    const auto it = index_.find(frame_id);
    if (it == index_.end()) return std::nullopt;
    return trajectory_[it->second].pose;
}

std::string SequenceDataset::frame_name(std::uint64_t frame_id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06llu.png", static_cast<unsigned long long>(frame_id));
    return buf;
}

fs::path SequenceDataset::rgb_path(std::uint64_t id) const { return dir_ / "rgb" / frame_name(id); }
fs::path SequenceDataset::depth_path(std::uint64_t id) const { return dir_ / "depth" / frame_name(id); }
fs::path SequenceDataset::mask_path(std::uint64_t id) const { return dir_ / "masks" / frame_name(id); }

RgbImage SequenceDataset::rgb(std::uint64_t id) const { return read_rgb_png(rgb_path(id)); }

DepthImage SequenceDataset::depth(std::uint64_t id) const {
    const auto p = depth_path(id);
    if (!fs::exists(p)) throw DatasetError("missing depth file " + p.string());
    return read_depth_png(p);
}

PeopleMask SequenceDataset::mask(std::uint64_t id) const {
    const auto p = mask_path(id);
    if (!fs::exists(p)) throw DatasetError("missing mask file " + p.string());
    return read_mask_png(p);
}

const SkeletonSequence& SequenceDataset::skeletons() const {
    if (!skeletons_) throw DatasetError("dataset has no skeletons.txt");
    return *skeletons_;
}

} // namespace hmap
