#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <unordered_set>

#include "hybridmap/fusion.hpp"

namespace hmap {
namespace {

constexpr int kCentreKey = 1 << (OccupancyOctree::kDepth - 1);

std::uint64_t pack(const OccupancyOctree::Key& k) {
    return (std::uint64_t(k[0]) << 32) | (std::uint64_t(k[1]) << 16) | std::uint64_t(k[2]);
}
OccupancyOctree::Key unpack(std::uint64_t v) {
    return {static_cast<std::uint16_t>(v >> 32), static_cast<std::uint16_t>(v >> 16), static_cast<std::uint16_t>(v)};
}

int child_index(const OccupancyOctree::Key& k, int depth) {
    const int bit = OccupancyOctree::kDepth - 1 - depth;
    return ((k[0] >> bit) & 1) | (((k[1] >> bit) & 1) << 1) | (((k[2] >> bit) & 1) << 2);
}

} // namespace

OccupancyOctree::OccupancyOctree(OctreeConfig cfg)
    : cfg_(cfg), hit_(logodds(cfg.prob_hit)), miss_(logodds(cfg.prob_miss)), min_(logodds(cfg.clamp_min)),
      max_(logodds(cfg.clamp_max)), root_(std::make_unique<Node>()) {
    if (!(cfg_.resolution > 0.0)) throw ContractViolation("octree: resolution must be positive");
    if (!(cfg_.clamp_min > 0.0 && cfg_.clamp_min < cfg_.clamp_max && cfg_.clamp_max < 1.0))
        throw ContractViolation("octree: clamping bounds must satisfy 0 < min < max < 1");
    if (cfg_.pixel_stride < 1) throw ContractViolation("octree: pixel stride must be >= 1");
}

std::unique_ptr<OccupancyOctree::Node> OccupancyOctree::clone(const Node& n) {
    auto out = std::make_unique<Node>();
    out->value = n.value;
    if (n.children) {
        out->children = std::make_unique<std::array<std::unique_ptr<Node>, 8>>();
        for (int i = 0; i < 8; ++i)
            if ((*n.children)[i]) (*out->children)[i] = clone(*(*n.children)[i]);
    }
    return out;
}

OccupancyOctree::OccupancyOctree(const OccupancyOctree& other)
    : cfg_(other.cfg_), hit_(other.hit_), miss_(other.miss_), min_(other.min_), max_(other.max_),
      root_(clone(*other.root_)), leaf_count_(other.leaf_count_) {}

OccupancyOctree& OccupancyOctree::operator=(const OccupancyOctree& other) {
    if (this != &other) {
        OccupancyOctree copy(other);
        *this = std::move(copy);
    }
    return *this;
}

std::optional<OccupancyOctree::Key> OccupancyOctree::key_of(const Vec3& p) const {
    Key k{};
    for (int i = 0; i < 3; ++i) {
        const double c = std::floor(p[i] / cfg_.resolution) + kCentreKey;
        if (!(c >= 0.0 && c < 2.0 * kCentreKey)) return std::nullopt;
        k[i] = static_cast<std::uint16_t>(c);
    }
    return k;
}

Vec3 OccupancyOctree::centre_of(const Key& k) const {
    return {(double(k[0]) - kCentreKey + 0.5) * cfg_.resolution, (double(k[1]) - kCentreKey + 0.5) * cfg_.resolution,
            (double(k[2]) - kCentreKey + 0.5) * cfg_.resolution};
}

const OccupancyOctree::Node* OccupancyOctree::find_leaf(const Key& k) const {
    const Node* n = root_.get();
    for (int depth = 0; depth < kDepth; ++depth) {
        if (!n->children) return nullptr;
        n = (*n->children)[child_index(k, depth)].get();
        if (!n) return nullptr;
    }
    return n;
}

std::optional<double> OccupancyOctree::occupancy(const Key& k) const {
    const Node* leaf = find_leaf(k);
    if (!leaf) return std::nullopt;
    return std::clamp(probability(leaf->value), cfg_.clamp_min, cfg_.clamp_max);
}

std::optional<double> OccupancyOctree::occupancy(const Vec3& p) const {
    const auto k = key_of(p);
    if (!k) return std::nullopt;
    return occupancy(*k);
}

void OccupancyOctree::update_leaf(const Key& k, double delta) {
    Node* path[kDepth + 1];
    Node* n = root_.get();
    path[0] = n;
    for (int depth = 0; depth < kDepth; ++depth) {
        if (!n->children) n->children = std::make_unique<std::array<std::unique_ptr<Node>, 8>>();
        auto& child = (*n->children)[child_index(k, depth)];
        if (!child) {
            child = std::make_unique<Node>();
            if (depth == kDepth - 1) ++leaf_count_;
        }
        n = child.get();
        path[depth + 1] = n;
    }
    n->value = std::clamp(n->value + delta, min_, max_);
    for (int depth = kDepth - 1; depth >= 0; --depth) {
        double m = -std::numeric_limits<double>::infinity();
        for (const auto& c : *path[depth]->children)
            if (c) m = std::max(m, c->value);
        path[depth]->value = m;
    }
}

std::vector<OccupancyOctree::Key> OccupancyOctree::ray_keys(const Vec3& origin, const Vec3& end) const {
    std::vector<Key> keys;
    const auto ko = key_of(origin);
    const auto ke = key_of(end);
    if (!ko || !ke) return keys;
    if (*ko == *ke) return keys;
    keys.push_back(*ko);

    Vec3 dir = end - origin;
    const double length = dir.norm();
    dir /= length;
    int step[3];
    double t_max[3], t_delta[3];
    Key cur = *ko;
    const Vec3 c = centre_of(cur);
    for (int i = 0; i < 3; ++i) {
        if (dir[i] > 0.0) step[i] = 1;
        else if (dir[i] < 0.0) step[i] = -1;
        else step[i] = 0;
        if (step[i] != 0) {
            const double border = c[i] + step[i] * 0.5 * cfg_.resolution;
            t_max[i] = (border - origin[i]) / dir[i];
            t_delta[i] = cfg_.resolution / std::abs(dir[i]);
        } else {
            t_max[i] = t_delta[i] = std::numeric_limits<double>::infinity();
        }
    }
    while (true) {
        int dim = 0;
        if (t_max[1] < t_max[dim]) dim = 1;
        if (t_max[2] < t_max[dim]) dim = 2;
        if (t_max[dim] > length) break; // reached the end cell's neighbourhood
        cur[dim] = static_cast<std::uint16_t>(cur[dim] + step[dim]);
        t_max[dim] += t_delta[dim];
        if (cur == *ke) break;
        keys.push_back(cur);
    }
    return keys;
}

void OccupancyOctree::insert_scan(const Vec3& origin, const std::vector<Vec3>& endpoints) {
    std::unordered_set<std::uint64_t> free_cells, occupied_cells;
    for (const Vec3& e : endpoints) {
        const Vec3 delta = e - origin;
        const double dist = delta.norm();
        if (cfg_.max_range > 0.0 && dist > cfg_.max_range) {
            for (const Key& k : ray_keys(origin, origin + delta * (cfg_.max_range / dist))) free_cells.insert(pack(k));
            continue;
        }
        for (const Key& k : ray_keys(origin, e)) free_cells.insert(pack(k));
        if (const auto ke = key_of(e)) occupied_cells.insert(pack(*ke));
    }
    std::vector<std::uint64_t> misses, hits(occupied_cells.begin(), occupied_cells.end());
    for (std::uint64_t k : free_cells)
        if (!occupied_cells.count(k)) misses.push_back(k);
    std::sort(misses.begin(), misses.end());
    std::sort(hits.begin(), hits.end());
    for (std::uint64_t k : misses) update_leaf(unpack(k), miss_);
    for (std::uint64_t k : hits) update_leaf(unpack(k), hit_);
}

void OccupancyOctree::integrate(const DepthImage& depth, const Intrinsics& intr, const Pose& world_from_camera) {
    if (depth.width() != intr.width || depth.height() != intr.height)
        throw ContractViolation("octree integrate: depth does not match intrinsics");
    std::vector<Vec3> endpoints;
    for (int y = 0; y < depth.height(); y += cfg_.pixel_stride) {
        for (int x = 0; x < depth.width(); x += cfg_.pixel_stride) {
            const double d = depth(x, y);
            if (!is_valid_depth(d)) continue;
            endpoints.push_back(world_from_camera * Vec3(d * (x - intr.cx) / intr.fx, d * (y - intr.cy) / intr.fy, d));
        }
    }
    if (!endpoints.empty()) insert_scan(world_from_camera.translation(), endpoints);
}

template <typename Fn>
void OccupancyOctree::visit_leaves(const Node& n, int depth, Key key, Fn& fn) const {
    if (depth == kDepth) {
        fn(key, n);
        return;
    }
    if (!n.children) return;
    const int bit = kDepth - 1 - depth;
    for (int i = 0; i < 8; ++i) {
        const auto& c = (*n.children)[i];
        if (!c) continue;
        Key k = key;
        k[0] |= static_cast<std::uint16_t>((i & 1) << bit);
        k[1] |= static_cast<std::uint16_t>(((i >> 1) & 1) << bit);
        k[2] |= static_cast<std::uint16_t>(((i >> 2) & 1) << bit);
        visit_leaves(*c, depth + 1, k, fn);
    }
}

std::vector<OccupancyOctree::Leaf> OccupancyOctree::leaves() const {
    std::vector<std::pair<std::uint64_t, Leaf>> keyed;
    keyed.reserve(leaf_count_);
    auto collect = [&](const Key& k, const Node& n) {
        keyed.push_back({pack(k), {centre_of(k), std::clamp(probability(n.value), cfg_.clamp_min, cfg_.clamp_max)}});
    };
    visit_leaves(*root_, 0, Key{0, 0, 0}, collect);
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Leaf> out;
    out.reserve(keyed.size());
    for (auto& [k, leaf] : keyed) out.push_back(leaf);
    return out;
}

void OccupancyOctree::write_leaves(std::ostream& out) const {
    out << std::setprecision(17);
    for (const Leaf& l : leaves())
        out << l.centre.x() << ' ' << l.centre.y() << ' ' << l.centre.z() << ' ' << l.probability << '\n';
}

} // namespace hmap
