#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "hybridmap/geometry.hpp"
#include "hybridmap/skeletal.hpp"

namespace hmap {

/// Invalidates every pixel the mask marks as a person.
DepthImage depopulate(const DepthImage& depth, const PeopleMask& mask);

// ---- surface clouds --------------------------------------------------------------------------------

struct SurfaceCloud {
    std::vector<Vec3> vertices;
    std::vector<Rgb8> colours; // empty or one per vertex

    std::size_t size() const { return vertices.size(); }
    bool empty() const { return vertices.empty(); }
};

/// ASCII PLY: "element vertex N" with x y z (and red green blue when coloured).
void write_ply(std::ostream& out, const SurfaceCloud& cloud);
void write_ply(const std::filesystem::path& path, const SurfaceCloud& cloud);
SurfaceCloud read_ply(std::istream& in);
SurfaceCloud read_ply(const std::filesystem::path& path);

/// Applies a 4x4 homogeneous transform to every vertex.
SurfaceCloud transform_cloud(const SurfaceCloud& cloud, const Mat4& m);

// ---- TSDF ------------------------------------------------------------------------------------------

struct VoxelIndex {
    int x = 0, y = 0, z = 0;
    friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

struct TsdfVoxel {
    double tsdf = 1.0;   // normalised, in [-1, 1]
    double weight = 0.0; // 0 = never observed
    friend bool operator==(const TsdfVoxel&, const TsdfVoxel&) = default;
};

struct TsdfConfig {
    double voxel_size = 0.04;
    double truncation = 0.1;
    double max_weight = 100.0;
    Vec3 origin = Vec3::Zero();
    /// Optional inclusive voxel-index bounds; voxels outside are never touched.
    std::optional<std::array<VoxelIndex, 2>> bounds;
};

/// Block-sparse projective TSDF. Voxel (i, j, k) sits at origin + voxel_size * (i, j, k); storage grows
/// lazily in 8^3 blocks around observed surfaces.
class TsdfVolume {
public:
    static constexpr int kBlockSide = 8;
    static constexpr int kBlockVoxels = kBlockSide * kBlockSide * kBlockSide;

    explicit TsdfVolume(TsdfConfig cfg = {});

    const TsdfConfig& config() const { return cfg_; }
    double voxel_size() const { return cfg_.voxel_size; }

    Vec3 voxel_centre(const VoxelIndex& v) const;
    /// Observed voxel or nullopt.
    std::optional<TsdfVoxel> voxel(const VoxelIndex& v) const;
    /// Overwrites one voxel (allocating its block); used to fill analytic fields.
    void set_voxel(const VoxelIndex& v, const TsdfVoxel& value);

    /// Projective update: every voxel in front of the camera whose nearest-pixel depth is valid and
    /// within +-truncation of the voxel's camera z gets sdf = depth - z, normalised by truncation and
    /// averaged in with weight 1 (total weight capped at max_weight).
    void integrate(const DepthImage& depth, const Intrinsics& intr, const Pose& world_from_camera);

    std::size_t block_count() const { return blocks_.size(); }
    std::size_t observed_voxel_count() const;
    bool empty() const { return observed_voxel_count() == 0; }

    /// Visits every allocated voxel (observed or not) in deterministic block order.
    template <typename Fn>
    void for_each_voxel(Fn&& fn) const {
        for (const BlockKey& key : sorted_keys()) {
            const Block& b = blocks_.at(key);
            for (int i = 0; i < kBlockVoxels; ++i) fn(voxel_of(key, i), b[i]);
        }
    }

    friend bool operator==(const TsdfVolume& a, const TsdfVolume& b);

private:
    struct BlockKey {
        int x, y, z;
        friend bool operator==(const BlockKey&, const BlockKey&) = default;
        friend bool operator<(const BlockKey& a, const BlockKey& b) {
            if (a.z != b.z) return a.z < b.z;
            if (a.y != b.y) return a.y < b.y;
            return a.x < b.x;
        }
    };
    struct BlockKeyHash {
        std::size_t operator()(const BlockKey& k) const {
            return (static_cast<std::size_t>(k.x) * 73856093u) ^ (static_cast<std::size_t>(k.y) * 19349663u) ^
                   (static_cast<std::size_t>(k.z) * 83492791u);
        }
    };
    using Block = std::array<TsdfVoxel, kBlockVoxels>;

    static int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
    static BlockKey block_of(const VoxelIndex& v) {
        return {floor_div(v.x, kBlockSide), floor_div(v.y, kBlockSide), floor_div(v.z, kBlockSide)};
    }
    static int offset_in_block(const VoxelIndex& v, const BlockKey& k) {
        return (v.x - k.x * kBlockSide) + kBlockSide * ((v.y - k.y * kBlockSide) + kBlockSide * (v.z - k.z * kBlockSide));
    }
    static VoxelIndex voxel_of(const BlockKey& k, int i) {
        return {k.x * kBlockSide + i % kBlockSide, k.y * kBlockSide + (i / kBlockSide) % kBlockSide,
                k.z * kBlockSide + i / (kBlockSide * kBlockSide)};
    }
    bool in_bounds(const VoxelIndex& v) const;
    std::vector<BlockKey> sorted_keys() const;

    TsdfConfig cfg_;
    std::unordered_map<BlockKey, Block, BlockKeyHash> blocks_;
};

/// Zero-level-set vertices: one per voxel edge whose two endpoints are observed and change sign, where
/// the edge belongs to at least one cube with all eight corners observed (the vertices marching cubes
/// would emit), placed by linear interpolation. Output order is deterministic.
SurfaceCloud extract_surface(const TsdfVolume& volume);

// ---- occupancy octree ------------------------------------------------------------------------------

struct OctreeConfig {
    double resolution = 0.05;
    double prob_hit = 0.85;
    double prob_miss = 0.4;
    double clamp_min = 0.12;
    double clamp_max = 0.97;
    /// Rays longer than this are shortened and their endpoint is not marked occupied (< 0 = unlimited).
    double max_range = -1.0;
    /// Integrate every n-th pixel in each direction.
    int pixel_stride = 1;
};

inline double logodds(double p) { return std::log(p / (1.0 - p)); }
inline double probability(double l) { return 1.0 / (1.0 + std::exp(-l)); }

/// Octree over a 2^16 cell cube centred on the origin, leaves at `resolution`. Each scan updates every
/// traversed cell once with a miss and every endpoint cell once with a hit (hits win).
class OccupancyOctree {
public:
    static constexpr int kDepth = 16;
    using Key = std::array<std::uint16_t, 3>;

    explicit OccupancyOctree(OctreeConfig cfg = {});
    OccupancyOctree(const OccupancyOctree& other);
    OccupancyOctree& operator=(const OccupancyOctree& other);
    OccupancyOctree(OccupancyOctree&&) noexcept = default;
    OccupancyOctree& operator=(OccupancyOctree&&) noexcept = default;

    const OctreeConfig& config() const { return cfg_; }

    std::optional<Key> key_of(const Vec3& p) const;
    Vec3 centre_of(const Key& k) const;

    /// Occupancy probability of the leaf containing p, or nullopt when unknown. Always within the clamps.
    std::optional<double> occupancy(const Vec3& p) const;
    std::optional<double> occupancy(const Key& k) const;

    void integrate(const DepthImage& depth, const Intrinsics& intr, const Pose& world_from_camera);
    /// One scan from `origin` to each endpoint.
    void insert_scan(const Vec3& origin, const std::vector<Vec3>& endpoints);

    /// Cells crossed by the segment, excluding the cell holding `end` (3D DDA).
    std::vector<Key> ray_keys(const Vec3& origin, const Vec3& end) const;

    struct Leaf {
        Vec3 centre;
        double probability;
    };
    /// Known leaves in deterministic (key) order.
    std::vector<Leaf> leaves() const;
    std::size_t leaf_count() const { return leaf_count_; }

    /// "cx cy cz occupancy_probability" per leaf.
    void write_leaves(std::ostream& out) const;

private:
    struct Node {
        double value = 0.0; // log-odds at leaves, max over children for inner nodes
        std::unique_ptr<std::array<std::unique_ptr<Node>, 8>> children;
    };
    static std::unique_ptr<Node> clone(const Node& n);
    void update_leaf(const Key& k, double delta);
    const Node* find_leaf(const Key& k) const;
    template <typename Fn>
    void visit_leaves(const Node& n, int depth, Key key, Fn& fn) const;

    OctreeConfig cfg_;
    double hit_, miss_, min_, max_;
    std::unique_ptr<Node> root_;
    std::size_t leaf_count_ = 0;
};

} // namespace hmap
