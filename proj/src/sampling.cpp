#include "gsec/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gsec/error.hpp"
#include "gsec/rng.hpp"

namespace gsec {

SectionHistogram build_sections(const PointCloud& cloud, double interval, double range_max) {
    if (!(interval > 0.0)) {
        throw InvalidParam("section interval must be > 0");
    }
    if (!(range_max > 0.0)) {
        throw InvalidParam("range_max must be > 0");
    }
    SectionHistogram hist;
    hist.interval = interval;
    // The small slack keeps 51.2 / 0.8 at 64 sections despite rounding.
    const auto m = static_cast<std::size_t>(std::ceil(range_max / interval - 1e-9));
    hist.counts.assign(std::max<std::size_t>(m, 1), 0);
    hist.section_of.assign(cloud.size(), -1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const double l = std::max(std::abs(static_cast<double>(p.x)), std::abs(static_cast<double>(p.y)));
        if (l >= range_max) {
            ++hist.excluded;
            continue;
        }
        auto j = static_cast<std::size_t>(std::floor(l / interval));
        j = std::min(j, hist.counts.size() - 1);
        hist.section_of[i] = static_cast<std::int32_t>(j);
        ++hist.counts[j];
    }
    return hist;
}

SectionWeights section_weights(const SectionHistogram& hist) {
    const auto it = std::max_element(hist.counts.begin(), hist.counts.end());
    if (it == hist.counts.end() || *it == 0) {
        throw EmptyHistogram("section histogram has no points");
    }
    const double peak = static_cast<double>(*it);
    SectionWeights out;
    out.weights.reserve(hist.counts.size());
    for (const auto c : hist.counts) {
        out.weights.push_back(peak * 2.0 - static_cast<double>(c));
    }
    return out;
}

std::vector<double> waterfill_keep_probabilities(const std::vector<std::size_t>& counts,
                                                 const std::vector<double>& weights, double target) {
    if (counts.size() != weights.size()) {
        throw InvalidParam("counts and weights differ in length");
    }
    double total = 0.0;
    double min_weight = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < counts.size(); ++j) {
        if (counts[j] == 0) {
            continue;
        }
        if (!(weights[j] > 0.0)) {
            throw InvalidParam("occupied sections need positive weights");
        }
        total += static_cast<double>(counts[j]);
        min_weight = std::min(min_weight, weights[j]);
    }
    std::vector<double> p(counts.size(), 0.0);
    if (total == 0.0) {
        return p;
    }
    if (target >= total) {
        for (std::size_t j = 0; j < counts.size(); ++j) {
            p[j] = counts[j] > 0 ? 1.0 : 0.0;
        }
        return p;
    }
    auto kept = [&](double lambda) {
        double sum = 0.0;
        for (std::size_t j = 0; j < counts.size(); ++j) {
            sum += std::min(1.0, lambda * weights[j]) * static_cast<double>(counts[j]);
        }
        return sum;
    };
    // kept(hi) == total >= target, kept(0) == 0.
    double lo = 0.0;
    double hi = 1.0 / min_weight;
    for (int iter = 0; iter < 2000; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) {
            break;
        }
        if (kept(mid) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double lambda = 0.5 * (lo + hi);
    for (std::size_t j = 0; j < counts.size(); ++j) {
        p[j] = counts[j] > 0 ? std::min(1.0, lambda * weights[j]) : 0.0;
    }
    return p;
}

std::vector<std::size_t> apportion_keep_counts(const std::vector<std::size_t>& counts,
                                               const std::vector<double>& probabilities, std::size_t target) {
    const std::size_t m = counts.size();
    std::vector<std::size_t> keep(m, 0);
    std::vector<double> remainder(m, 0.0);
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < m; ++j) {
        const double expected = probabilities[j] * static_cast<double>(counts[j]);
        keep[j] = std::min(counts[j], static_cast<std::size_t>(std::floor(expected)));
        remainder[j] = expected - static_cast<double>(keep[j]);
        assigned += keep[j];
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t idx = 0; assigned < target && idx < m; ++idx) {
        const auto j = order[idx];
        if (keep[j] < counts[j] && remainder[j] > 0.0) {
            ++keep[j];
            ++assigned;
        }
    }
    return keep;
}

std::vector<std::size_t> undersample_indices(const PointCloud& cloud, std::size_t budget, double interval,
                                             std::uint64_t seed, double range_max) {
    if (budget == 0) {
        throw InvalidParam("budget must be > 0");
    }
    if (!(interval > 0.0)) {
        throw InvalidParam("section interval must be > 0");
    }
    if (cloud.size() <= budget) {
        std::vector<std::size_t> all(cloud.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    const auto hist = build_sections(cloud, interval, range_max);
    const std::size_t in_range = cloud.size() - hist.excluded;
    std::vector<std::vector<std::size_t>> members(hist.section_count());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (hist.section_of[i] >= 0) {
            members[static_cast<std::size_t>(hist.section_of[i])].push_back(i);
        }
    }
    std::vector<std::size_t> keep;
    if (in_range <= budget) {
        keep = hist.counts;
    } else {
        const auto weights = section_weights(hist);
        const auto p = waterfill_keep_probabilities(hist.counts, weights.weights, static_cast<double>(budget));
        keep = apportion_keep_counts(hist.counts, p, budget);
    }

    Rng rng(seed);
    std::vector<std::size_t> kept;
    kept.reserve(budget);
    for (std::size_t j = 0; j < members.size(); ++j) {
        for (const auto pick : sample_without_replacement(rng, members[j].size(), keep[j])) {
            kept.push_back(members[j][pick]);
        }
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

PointCloud undersample(const PointCloud& cloud, std::size_t budget, double interval, std::uint64_t seed,
                       double range_max) {
    if (cloud.size() <= budget && budget > 0) {
        return cloud;
    }
    return select_points(cloud, undersample_indices(cloud, budget, interval, seed, range_max));
}

std::vector<std::size_t> undersample_uniform_indices(const PointCloud& cloud, std::size_t budget,
                                                     std::uint64_t seed) {
    if (budget == 0) {
        throw InvalidParam("budget must be > 0");
    }
    Rng rng(seed);
    return sample_without_replacement(rng, cloud.size(), std::min(budget, cloud.size()));
}

PointCloud undersample_uniform(const PointCloud& cloud, std::size_t budget, std::uint64_t seed) {
    if (cloud.size() <= budget && budget > 0) {
        return cloud;
    }
    return select_points(cloud, undersample_uniform_indices(cloud, budget, seed));
}

PointCloud select_points(const PointCloud& cloud, const std::vector<std::size_t>& indices) {
    PointCloud out;
    out.points.reserve(indices.size());
    for (const auto i : indices) {
        out.points.push_back(cloud.points.at(i));
    }
    if (cloud.has_labels()) {
        out.labels.reserve(indices.size());
        for (const auto i : indices) {
            out.labels.push_back(cloud.labels[i]);
        }
    }
    return out;
}

}  // namespace gsec
