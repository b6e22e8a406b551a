#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace hmap {

/// Static 3D kd-tree over a borrowed point array (the points must outlive the tree).
template <typename Scalar = double>
class KdTree3 {
public:
    using Point = Eigen::Matrix<Scalar, 3, 1>;

    explicit KdTree3(std::span<const Point> points) : points_(points), order_(points.size()) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        nodes_.reserve(points.size() / kLeafSize * 2 + 1);
        if (!points.empty()) build(0, order_.size());
    }

    bool empty() const { return points_.empty(); }

    struct Result {
        std::size_t index = 0;
        Scalar squared_distance = std::numeric_limits<Scalar>::infinity();
    };

    /// Exact nearest neighbour. Undefined on an empty tree.
    Result nearest(const Point& q) const {
        Result best;
        search(0, q, best);
        return best;
    }

private:
    static constexpr std::size_t kLeafSize = 8;

    struct Node {
        std::size_t begin, end; // range into order_
        int axis = -1;          // -1 for leaves
        Scalar split = 0;
        std::size_t left = 0, right = 0;
    };

    std::size_t build(std::size_t begin, std::size_t end) {
        const std::size_t id = nodes_.size();
        nodes_.push_back({begin, end});
        if (end - begin <= kLeafSize) return id;

        Point lo = Point::Constant(std::numeric_limits<Scalar>::infinity());
        Point hi = -lo;
        for (std::size_t i = begin; i < end; ++i) {
            lo = lo.cwiseMin(points_[order_[i]]);
            hi = hi.cwiseMax(points_[order_[i]]);
        }
        int axis = 0;
        (hi - lo).maxCoeff(&axis);
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
        const Scalar split = points_[order_[mid]][axis];
        const std::size_t left = build(begin, mid);
        const std::size_t right = build(mid, end);
        nodes_[id].axis = axis;
        nodes_[id].split = split;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void search(std::size_t id, const Point& q, Result& best) const {
        const Node& n = nodes_[id];
        if (n.axis < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) {
                const Scalar d2 = (points_[order_[i]] - q).squaredNorm();
                if (d2 < best.squared_distance || (d2 == best.squared_distance && order_[i] < best.index)) {
                    best.squared_distance = d2;
                    best.index = order_[i];
                }
            }
            return;
        }
        const Scalar diff = q[n.axis] - n.split;
        const std::size_t near = diff < 0 ? n.left : n.right;
        const std::size_t far = diff < 0 ? n.right : n.left;
        search(near, q, best);
        if (diff * diff <= best.squared_distance) search(far, q, best);
    }

    std::span<const Point> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

} // namespace hmap
