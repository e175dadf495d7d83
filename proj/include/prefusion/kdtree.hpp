#ifndef PREFUSION_KDTREE_HPP
#define PREFUSION_KDTREE_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "prefusion/errors.hpp"

namespace prefusion {

struct Point2 {
  double u = 0.0;
  double v = 0.0;
};

inline double squared_distance(const Point2& a, const Point2& b) {
  const double du = a.u - b.u, dv = a.v - b.v;
  return du * du + dv * dv;
}

/**
 * @brief Balanced 2D k-d tree over pixel coordinates.
 *
 * Neighbour order is lexicographic on (squared distance, point index), so
 * results are identical to an exhaustive search including ties. Leaves hold
 * up to kLeafSize points; every node keeps the bounding box of its points,
 * which gives exact pruning.
 */
class KdTree2 {
 public:
  static constexpr std::size_t kLeafSize = 8;

  explicit KdTree2(std::vector<Point2> points) : points_(std::move(points)) {
    if (points_.empty()) throw EmptyInput("k-d tree needs at least one point");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, order_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Point2& point(std::size_t i) const { return points_[i]; }

  /// The min(k, n) points nearest to q.
  std::vector<std::size_t> knn(const Point2& q, std::size_t k) const {
    return search(q, k, kNoExclusion);
  }

  /// The min(k, n - 1) points nearest to member i, excluding i itself.
  std::vector<std::size_t> knn_of(std::size_t member, std::size_t k) const {
    return search(points_.at(member), k, member);
  }

 private:
  static constexpr std::size_t kNoExclusion = std::numeric_limits<std::size_t>::max();

  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    double umin, vmin, umax, vmax;
    bool leaf() const { return left < 0; }
  };

  struct Candidate {
    double dist2;
    std::size_t index;
    bool operator<(const Candidate& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  std::int32_t build(std::size_t begin, std::size_t end) {
    Node node{static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)};
    node.umin = node.vmin = std::numeric_limits<double>::infinity();
    node.umax = node.vmax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = begin; i < end; ++i) {
      const Point2& p = points_[order_[i]];
      node.umin = std::min(node.umin, p.u);
      node.umax = std::max(node.umax, p.u);
      node.vmin = std::min(node.vmin, p.v);
      node.vmax = std::max(node.vmax, p.v);
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    const bool split_u = (node.umax - node.umin) >= (node.vmax - node.vmin);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = split_u ? points_[a].u : points_[a].v;
                       const double cb = split_u ? points_[b].u : points_[b].v;
                       return ca < cb || (ca == cb && a < b);
                     });
    const std::int32_t l = build(begin, mid);
    const std::int32_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  static double box_distance2(const Node& n, const Point2& q) {
    const double du = std::max({n.umin - q.u, 0.0, q.u - n.umax});
    const double dv = std::max({n.vmin - q.v, 0.0, q.v - n.vmax});
    return du * du + dv * dv;
  }

  std::vector<std::size_t> search(const Point2& q, std::size_t k, std::size_t exclude) const {
    std::vector<std::size_t> out;
    if (k == 0) return out;
    std::priority_queue<Candidate> heap;  // max-heap: worst candidate on top
    visit(0, q, k, exclude, heap);
    out.resize(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top().index;
      heap.pop();
    }
    return out;
  }

  void visit(std::int32_t id, const Point2& q, std::size_t k, std::size_t exclude,
             std::priority_queue<Candidate>& heap) const {
    const Node& n = nodes_[id];
    if (n.leaf()) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        const Candidate c{squared_distance(points_[idx], q), idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    std::int32_t first = n.left, second = n.right;
    double d_first = box_distance2(nodes_[first], q);
    double d_second = box_distance2(nodes_[second], q);
    if (d_second < d_first) std::swap(first, second), std::swap(d_first, d_second);
    // equal distance can still hide a lower-index tie, so prune only on strict >
    if (heap.size() < k || d_first <= heap.top().dist2) visit(first, q, k, exclude, heap);
    if (heap.size() < k || d_second <= heap.top().dist2) visit(second, q, k, exclude, heap);
  }

  std::vector<Point2> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace prefusion

#endif  // PREFUSION_KDTREE_HPP
