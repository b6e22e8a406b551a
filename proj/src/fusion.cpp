#include "hybridmap/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_set>

namespace hmap {

DepthImage depopulate(const DepthImage& depth, const PeopleMask& mask) {
    if (!depth.same_shape(mask)) throw ContractViolation("depopulate: mask and depth sizes differ");
    DepthImage out = depth;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i]) out[i] = kInvalidDepth;
    return out;
}

// ---- PLY -------------------------------------------------------------------------------------------

void write_ply(std::ostream& out, const SurfaceCloud& cloud) {
    const bool coloured = !cloud.colours.empty();
    if (coloured && cloud.colours.size() != cloud.vertices.size())
        throw ContractViolation("write_ply: colour count differs from vertex count");
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.vertices.size() << '\n'
        << "property double x\nproperty double y\nproperty double z\n";
    if (coloured) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n" << std::setprecision(17);
    for (std::size_t i = 0; i < cloud.vertices.size(); ++i) {
        const Vec3& v = cloud.vertices[i];
        out << v.x() << ' ' << v.y() << ' ' << v.z();
        if (coloured) {
            const Rgb8& c = cloud.colours[i];
            out << ' ' << int(c.r) << ' ' << int(c.g) << ' ' << int(c.b);
        }
        out << '\n';
    }
}

void write_ply(const std::filesystem::path& path, const SurfaceCloud& cloud) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write_ply(out, cloud);
}

SurfaceCloud read_ply(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw IoError("ply: missing magic");
    std::size_t vertex_count = 0;
    std::vector<std::string> props;
    std::string element;
    bool header_done = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") throw IoError("ply: only ascii is supported");
        } else if (word == "element") {
            ls >> element;
            if (element == "vertex") ls >> vertex_count;
        } else if (word == "property" && element == "vertex") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(name);
        } else if (word == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done) throw IoError("ply: unterminated header");
    auto find = [&](const char* name) -> int {
        const auto it = std::find(props.begin(), props.end(), name);
        return it == props.end() ? -1 : static_cast<int>(it - props.begin());
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    const int ir = find("red"), ig = find("green"), ib = find("blue");
    if (ix < 0 || iy < 0 || iz < 0) throw IoError("ply: vertex element lacks x/y/z");
    const bool coloured = ir >= 0 && ig >= 0 && ib >= 0;

    SurfaceCloud cloud;
    cloud.vertices.reserve(vertex_count);
    std::vector<double> values(props.size());
    for (std::size_t i = 0; i < vertex_count; ++i) {
        if (!std::getline(in, line)) throw IoError("ply: fewer vertices than declared");
        std::istringstream ls(line);
        for (double& v : values)
            if (!(ls >> v)) throw IoError("ply: malformed vertex line");
        cloud.vertices.emplace_back(values[ix], values[iy], values[iz]);
        if (coloured)
            cloud.colours.push_back({static_cast<std::uint8_t>(values[ir]), static_cast<std::uint8_t>(values[ig]),
                                     static_cast<std::uint8_t>(values[ib])});
    }
    return cloud;
}

SurfaceCloud read_ply(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return read_ply(in);
}

SurfaceCloud transform_cloud(const SurfaceCloud& cloud, const Mat4& m) {
    SurfaceCloud out = cloud;
    for (Vec3& v : out.vertices) v = (m * v.homogeneous()).hnormalized();
    return out;
}

// ---- TSDF ------------------------------------------------------------------------------------------

TsdfVolume::TsdfVolume(TsdfConfig cfg) : cfg_(std::move(cfg)) {
    if (!(cfg_.voxel_size > 0.0) || !(cfg_.truncation > 0.0) || !(cfg_.max_weight >= 1.0))
        throw ContractViolation("tsdf: voxel size, truncation and weight cap must be positive");
}

Vec3 TsdfVolume::voxel_centre(const VoxelIndex& v) const {
    return {cfg_.origin.x() + cfg_.voxel_size * v.x, cfg_.origin.y() + cfg_.voxel_size * v.y,
            cfg_.origin.z() + cfg_.voxel_size * v.z};
}

bool TsdfVolume::in_bounds(const VoxelIndex& v) const {
    if (!cfg_.bounds) return true;
    const auto& [lo, hi] = *cfg_.bounds;
    return v.x >= lo.x && v.y >= lo.y && v.z >= lo.z && v.x <= hi.x && v.y <= hi.y && v.z <= hi.z;
}

std::optional<TsdfVoxel> TsdfVolume::voxel(const VoxelIndex& v) const {
    const BlockKey k = block_of(v);
    const auto it = blocks_.find(k);
    if (it == blocks_.end()) return std::nullopt;
    const TsdfVoxel& vox = it->second[offset_in_block(v, k)];
    if (vox.weight <= 0.0) return std::nullopt;
    return vox;
}

void TsdfVolume::set_voxel(const VoxelIndex& v, const TsdfVoxel& value) {
    const BlockKey k = block_of(v);
    blocks_[k][offset_in_block(v, k)] = value;
}

std::size_t TsdfVolume::observed_voxel_count() const {
    std::size_t n = 0;
    for (const auto& [key, block] : blocks_)
        for (const TsdfVoxel& v : block) n += v.weight > 0.0;
    return n;
}

std::vector<TsdfVolume::BlockKey> TsdfVolume::sorted_keys() const {
    std::vector<BlockKey> keys;
    keys.reserve(blocks_.size());
    for (const auto& [key, block] : blocks_) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    return keys;
}

bool operator==(const TsdfVolume& a, const TsdfVolume& b) {
    if (a.blocks_.size() != b.blocks_.size()) return false;
    for (const auto& [key, block] : a.blocks_) {
        const auto it = b.blocks_.find(key);
        if (it == b.blocks_.end() || it->second != block) return false;
    }
    return true;
}

void TsdfVolume::integrate(const DepthImage& depth, const Intrinsics& intr, const Pose& world_from_camera) {
    if (depth.width() != intr.width || depth.height() != intr.height)
        throw ContractViolation("tsdf integrate: depth does not match intrinsics");
    const double vs = cfg_.voxel_size;
    const double trunc = cfg_.truncation;
    const double f_min = std::min(intr.fx, intr.fy);

    // Blocks that may hold a voxel inside the truncation band of some pixel.
    std::unordered_set<BlockKey, BlockKeyHash> touched;
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            const double d = depth(x, y);
            if (!is_valid_depth(d)) continue;
            const Vec3 ray((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
            const double z_near = std::max(d - trunc, 1e-6);
            const double z_far = d + trunc;
            const Vec3 a = world_from_camera * Vec3(ray * z_near);
            const Vec3 b = world_from_camera * Vec3(ray * z_far);
            // Any point projecting into this pixel lies within half a pixel diagonal of the centre ray.
            const double margin = 0.75 * z_far / f_min + vs;
            const Vec3 lo = a.cwiseMin(b).array() - margin;
            const Vec3 hi = a.cwiseMax(b).array() + margin;
            VoxelIndex vlo{static_cast<int>(std::floor((lo.x() - cfg_.origin.x()) / vs)),
                           static_cast<int>(std::floor((lo.y() - cfg_.origin.y()) / vs)),
                           static_cast<int>(std::floor((lo.z() - cfg_.origin.z()) / vs))};
            VoxelIndex vhi{static_cast<int>(std::ceil((hi.x() - cfg_.origin.x()) / vs)),
                           static_cast<int>(std::ceil((hi.y() - cfg_.origin.y()) / vs)),
                           static_cast<int>(std::ceil((hi.z() - cfg_.origin.z()) / vs))};
            if (cfg_.bounds) {
                const auto& [blo, bhi] = *cfg_.bounds;
                vlo = {std::max(vlo.x, blo.x), std::max(vlo.y, blo.y), std::max(vlo.z, blo.z)};
                vhi = {std::min(vhi.x, bhi.x), std::min(vhi.y, bhi.y), std::min(vhi.z, bhi.z)};
                if (vlo.x > vhi.x || vlo.y > vhi.y || vlo.z > vhi.z) continue;
            }
            const BlockKey klo = block_of(vlo), khi = block_of(vhi);
            for (int bz = klo.z; bz <= khi.z; ++bz)
                for (int by = klo.y; by <= khi.y; ++by)
                    for (int bx = klo.x; bx <= khi.x; ++bx) touched.insert({bx, by, bz});
        }
    }

    std::vector<BlockKey> order(touched.begin(), touched.end());
    std::sort(order.begin(), order.end());
    const Pose cam = world_from_camera.inverse();
    const Mat3& r = cam.rotation();
    const Vec3& t = cam.translation();

    for (const BlockKey& key : order) {
        const bool existed = blocks_.count(key) != 0;
        Block& block = blocks_[key];
        bool updated = false;
        for (int i = 0; i < kBlockVoxels; ++i) {
            const VoxelIndex v = voxel_of(key, i);
            if (!in_bounds(v)) continue;
            const double px = cfg_.origin.x() + vs * v.x;
            const double py = cfg_.origin.y() + vs * v.y;
            const double pz = cfg_.origin.z() + vs * v.z;
            const double cz = r(2, 0) * px + r(2, 1) * py + r(2, 2) * pz + t(2);
            if (!(cz > 0.0)) continue;
            const double cx = r(0, 0) * px + r(0, 1) * py + r(0, 2) * pz + t(0);
            const double cy = r(1, 0) * px + r(1, 1) * py + r(1, 2) * pz + t(1);
            const double u = std::round(intr.fx * cx / cz + intr.cx);
            const double w = std::round(intr.fy * cy / cz + intr.cy);
            if (!(u >= 0.0 && w >= 0.0 && u < intr.width && w < intr.height)) continue;
            const double d = depth(static_cast<int>(u), static_cast<int>(w));
            if (!is_valid_depth(d)) continue;
            const double sdf = d - cz;
            if (sdf < -trunc || sdf > trunc) continue;
            const double obs = std::clamp(sdf / trunc, -1.0, 1.0);
            TsdfVoxel& vox = block[i];
            vox.tsdf = (vox.tsdf * vox.weight + obs) / (vox.weight + 1.0);
            vox.weight = std::min(vox.weight + 1.0, cfg_.max_weight);
            updated = true;
        }
        if (!existed && !updated) blocks_.erase(key);
    }
}

SurfaceCloud extract_surface(const TsdfVolume& volume) {
    SurfaceCloud cloud;
    auto observed = [&](int x, int y, int z) { return volume.voxel({x, y, z}).has_value(); };
    auto cube_complete = [&](int x, int y, int z) {
        for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    if (!observed(x + dx, y + dy, z + dz)) return false;
        return true;
    };
    const double vs = volume.voxel_size();
    volume.for_each_voxel([&](const VoxelIndex& v, const TsdfVoxel& a) {
        if (a.weight <= 0.0) return;
        for (int axis = 0; axis < 3; ++axis) {
            VoxelIndex n = v;
            (axis == 0 ? n.x : axis == 1 ? n.y : n.z) += 1;
            const auto b = volume.voxel(n);
            if (!b || (a.tsdf < 0.0) == (b->tsdf < 0.0)) continue;
            // The edge is shared by four cubes; it is meshed if any of them is fully observed.
            bool meshed = false;
            for (int s = 0; s < 4 && !meshed; ++s) {
                const int o1 = -(s & 1), o2 = -((s >> 1) & 1);
                const int cx = v.x + (axis == 0 ? 0 : o1);
                const int cy = v.y + (axis == 1 ? 0 : (axis == 0 ? o1 : o2));
                const int cz = v.z + (axis == 2 ? 0 : o2);
                meshed = cube_complete(cx, cy, cz);
            }
            if (!meshed) continue;
            const double frac = a.tsdf / (a.tsdf - b->tsdf);
            Vec3 p = volume.voxel_centre(v);
            p[axis] += frac * vs;
            cloud.vertices.push_back(p);
        }
    });
    return cloud;
}

} // namespace hmap
