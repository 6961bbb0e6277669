#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "gsec/lidar_io.hpp"

namespace gsec {

using Vec3 = std::array<double, 3>;

inline Vec3 to_vec3(const Point& p) {
    return {static_cast<double>(p.x), static_cast<double>(p.y), static_cast<double>(p.z)};
}

// Static k-d tree over 3-D coordinates. Immutable after construction, so
// concurrent queries are safe.
class KdTree {
public:
    static constexpr std::size_t kDefaultLeafSize = 10;

    explicit KdTree(std::vector<Vec3> points, std::size_t leaf_size = kDefaultLeafSize);
    explicit KdTree(const PointCloud& cloud, std::size_t leaf_size = kDefaultLeafSize);

    std::size_t size() const { return points_.size(); }
    const Vec3& point(std::size_t i) const { return points_[i]; }

    /// Indices of the k nearest points, ordered by ascending Euclidean
    /// distance with ties broken by ascending index. Returns every point when
    /// fewer than k exist. Throws InvalidParam for k < 1.
    std::vector<std::size_t> knn(const Vec3& query, std::size_t k) const;

private:
    struct Node {
        std::size_t begin = 0;
        std::size_t end = 0;
        int axis = -1;  // -1 marks a leaf
        double split = 0.0;
        std::size_t left = 0;
        std::size_t right = 0;
    };

    std::size_t build(std::size_t begin, std::size_t end);

    std::vector<Vec3> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_;
};

/// Coefficients of z = alpha * x + beta * y + gamma, the least-squares plane.
struct PlaneFit {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
};

inline constexpr double kMaxPlaneCondition = 1e12;
inline constexpr double kMinPlaneDeterminant = 1e-12;

/// Least-squares fit of z over (x, y); std::nullopt when the neighborhood is
/// degenerate (z is not a function of x and y, or the normal equations are
/// ill-conditioned). Throws TooFewPoints below three points.
std::optional<PlaneFit> try_plane_fit(std::span<const Vec3> neighbors);

/// As try_plane_fit but throws Degenerate instead of returning nullopt.
PlaneFit plane_fit(std::span<const Vec3> neighbors);

struct Normal {
    double nx = 0.0;
    double ny = 0.0;
    double nz = 1.0;
};

struct NormalOptions {
    std::size_t k = 30;
    // false: V = (alpha, beta, 1) as the feature definition writes it;
    // true: the geometric normal (-alpha, -beta, 1). nz is the same either way.
    bool corrected_normal_sign = false;
};

struct NormalEstimate {
    std::vector<Normal> normals;
    std::size_t fallbacks = 0;  // degenerate neighborhoods given (0, 0, 1)
};

Normal normal_from_plane(const PlaneFit& fit, bool corrected_normal_sign);

NormalEstimate estimate_normals(const PointCloud& cloud, const NormalOptions& options = {});

}  // namespace gsec
