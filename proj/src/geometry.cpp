#include "gsec/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <utility>

#include "gsec/error.hpp"

namespace gsec {

KdTree::KdTree(std::vector<Vec3> points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    if (points_.empty()) {
        throw EmptyCloud("cannot build a k-d tree over zero points");
    }
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    build(0, points_.size());
}

namespace {

std::vector<Vec3> coordinates(const PointCloud& cloud) {
    std::vector<Vec3> out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        out.push_back(to_vec3(p));
    }
    return out;
}

double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

KdTree::KdTree(const PointCloud& cloud, std::size_t leaf_size) : KdTree(coordinates(cloud), leaf_size) {}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size_) {
        return id;
    }
    Vec3 lo = points_[order_[begin]];
    Vec3 hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& p = points_[order_[i]];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
        if (hi[a] - lo[a] > hi[axis] - lo[axis]) {
            axis = a;
        }
    }
    if (hi[axis] == lo[axis]) {
        return id;  // all coincident: keep as one leaf
    }
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                         return points_[a][axis] < points_[b][axis];
                     });
    const double split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    auto& node = nodes_[id];
    node.axis = axis;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
}

std::vector<std::size_t> KdTree::knn(const Vec3& query, std::size_t k) const {
    if (k < 1) {
        throw InvalidParam("knn requires k >= 1");
    }
    k = std::min(k, points_.size());
    using Entry = std::pair<double, std::size_t>;  // (squared distance, index)
    std::priority_queue<Entry> best;  // max-heap: worst candidate on top

    auto offer = [&](std::size_t idx) {
        const Entry e{squared_distance(points_[idx], query), idx};
        if (best.size() < k) {
            best.push(e);
        } else if (e < best.top()) {
            best.pop();
            best.push(e);
        }
    };

    // Left subtree holds coordinates <= split, right holds >= split.
    std::vector<std::pair<std::size_t, double>> stack;  // (node, lower bound on squared distance)
    stack.emplace_back(0, 0.0);
    while (!stack.empty()) {
        const auto [id, bound] = stack.back();
        stack.pop_back();
        if (best.size() == k && bound > best.top().first) {
            continue;
        }
        const Node& node = nodes_[id];
        if (node.axis < 0) {
            for (std::size_t i = node.begin; i < node.end; ++i) {
                offer(order_[i]);
            }
            continue;
        }
        const double diff = query[node.axis] - node.split;
        const std::size_t near = diff <= 0.0 ? node.left : node.right;
        const std::size_t far = diff <= 0.0 ? node.right : node.left;
        stack.emplace_back(far, std::max(bound, diff * diff));
        stack.emplace_back(near, bound);
    }

    std::vector<std::size_t> out(best.size());
    for (std::size_t i = out.size(); i > 0; --i) {
        out[i - 1] = best.top().second;
        best.pop();
    }
    return out;
}

std::optional<PlaneFit> try_plane_fit(std::span<const Vec3> neighbors) {
    if (neighbors.size() < 3) {
        throw TooFewPoints("plane fit needs at least 3 points");
    }
    const double n = static_cast<double>(neighbors.size());
    double mx = 0.0;
    double my = 0.0;
    double mz = 0.0;
    for (const auto& p : neighbors) {
        mx += p[0];
        my += p[1];
        mz += p[2];
    }
    mx /= n;
    my /= n;
    mz /= n;
    // After centering, the normal equations of [x y 1] decouple into a 2x2
    // block for (alpha, beta) and gamma = mean(z) - alpha*mean(x) - beta*mean(y).
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    double sxz = 0.0;
    double syz = 0.0;
    for (const auto& p : neighbors) {
        const double dx = p[0] - mx;
        const double dy = p[1] - my;
        const double dz = p[2] - mz;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    const double det = sxx * syy - sxy * sxy;
    const double trace = sxx + syy;
    const double gap = std::sqrt(std::max(0.0, 0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy));
    const double lambda_max = 0.5 * trace + gap;
    const double lambda_min = 0.5 * trace - gap;
    if (std::abs(det) < kMinPlaneDeterminant || !(lambda_min > 0.0) || lambda_max / lambda_min > kMaxPlaneCondition) {
        return std::nullopt;
    }
    PlaneFit fit;
    fit.alpha = (syy * sxz - sxy * syz) / det;
    fit.beta = (sxx * syz - sxy * sxz) / det;
    fit.gamma = mz - fit.alpha * mx - fit.beta * my;
    return fit;
}

PlaneFit plane_fit(std::span<const Vec3> neighbors) {
    auto fit = try_plane_fit(neighbors);
    if (!fit) {
        throw Degenerate("neighborhood does not determine z as a function of (x, y)");
    }
    return *fit;
}

Normal normal_from_plane(const PlaneFit& fit, bool corrected_normal_sign) {
    const double sign = corrected_normal_sign ? -1.0 : 1.0;
    const double vx = sign * fit.alpha;
    const double vy = sign * fit.beta;
    const double norm = std::sqrt(vx * vx + vy * vy + 1.0);
    return {vx / norm, vy / norm, 1.0 / norm};
}

NormalEstimate estimate_normals(const PointCloud& cloud, const NormalOptions& options) {
    if (cloud.empty()) {
        throw EmptyCloud("cannot estimate normals of an empty cloud");
    }
    if (options.k < 3) {
        throw InvalidParam("normal estimation needs k >= 3");
    }
    const KdTree tree(cloud);
    NormalEstimate out;
    out.normals.resize(cloud.size());
    std::vector<Vec3> neighborhood;
    neighborhood.reserve(options.k);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        neighborhood.clear();
        for (const auto j : tree.knn(tree.point(i), options.k)) {
            neighborhood.push_back(tree.point(j));
        }
        std::optional<PlaneFit> fit;
        if (neighborhood.size() >= 3) {
            fit = try_plane_fit(neighborhood);
        }
        if (fit) {
            out.normals[i] = normal_from_plane(*fit, options.corrected_normal_sign);
        } else {
            out.normals[i] = Normal{};
            ++out.fallbacks;
        }
    }
    return out;
}

}  // namespace gsec
