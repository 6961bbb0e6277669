#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gsec/lidar_io.hpp"

namespace gsec {

inline constexpr double kDefaultSectionInterval = 0.8;
inline constexpr double kDefaultRangeMax = 51.2;
inline constexpr std::size_t kDefaultPointBudget = 100000;

// Square rings around the sensor: section j holds the points whose
// Chebyshev distance max(|x|, |y|) lies in [j*d, (j+1)*d).
struct SectionHistogram {
    double interval = kDefaultSectionInterval;
    std::vector<std::size_t> counts;
    // Per input point; -1 for points at or beyond range_max.
    std::vector<std::int32_t> section_of;
    std::size_t excluded = 0;

    std::size_t section_count() const { return counts.size(); }
};

struct SectionWeights {
    std::vector<double> weights;
};

SectionHistogram build_sections(const PointCloud& cloud, double interval, double range_max = kDefaultRangeMax);

/// s_j = 2 * max_k(count_k) - count_j. Throws EmptyHistogram when every
/// section is empty.
SectionWeights section_weights(const SectionHistogram& hist);

/// Per-section keep probability p_j = min(1, lambda * s_j), with lambda
/// found by bisection so that sum_j p_j * count_j equals `target`.
std::vector<double> waterfill_keep_probabilities(const std::vector<std::size_t>& counts,
                                                 const std::vector<double>& weights, double target);

/// Integer keep counts summing to `target` (largest-remainder rounding of the
/// expected counts), each capped by its section count.
std::vector<std::size_t> apportion_keep_counts(const std::vector<std::size_t>& counts,
                                               const std::vector<double>& probabilities, std::size_t target);

/// Indices (ascending) of the points kept by distribution-controlled
/// undersampling. Points beyond range_max are never kept once the budget is
/// active; an under-budget cloud keeps everything.
std::vector<std::size_t> undersample_indices(const PointCloud& cloud, std::size_t budget, double interval,
                                             std::uint64_t seed, double range_max = kDefaultRangeMax);

PointCloud undersample(const PointCloud& cloud, std::size_t budget, double interval, std::uint64_t seed,
                       double range_max = kDefaultRangeMax);

/// Average random undersampling, the baseline the controlled variant is
/// compared against.
std::vector<std::size_t> undersample_uniform_indices(const PointCloud& cloud, std::size_t budget,
                                                     std::uint64_t seed);

PointCloud undersample_uniform(const PointCloud& cloud, std::size_t budget, std::uint64_t seed);

PointCloud select_points(const PointCloud& cloud, const std::vector<std::size_t>& indices);

}  // namespace gsec
