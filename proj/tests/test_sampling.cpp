#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gsec/error.hpp"
#include "gsec/sampling.hpp"

using namespace gsec;

namespace {

// counts[j] points spread over section j (Chebyshev distance in
// [j*d, (j+1)*d)), alternating between the four axes.
PointCloud ring_cloud(const std::vector<std::size_t>& counts, double d, std::uint64_t seed = 1) {
    Rng rng(seed);
    PointCloud cloud;
    for (std::size_t j = 0; j < counts.size(); ++j) {
        for (std::size_t i = 0; i < counts[j]; ++i) {
            const double l = (static_cast<double>(j) + uniform(rng, 0.05, 0.95)) * d;
            const double t = uniform(rng, -l, l);
            Point p;
            switch (i % 4) {
                case 0: p = {static_cast<float>(l), static_cast<float>(t), 0, 0}; break;
                case 1: p = {static_cast<float>(-l), static_cast<float>(t), 0, 0}; break;
                case 2: p = {static_cast<float>(t), static_cast<float>(l), 0, 0}; break;
                default: p = {static_cast<float>(t), static_cast<float>(-l), 0, 0}; break;
            }
            cloud.points.push_back(p);
            cloud.labels.push_back(static_cast<SemanticClass>(j));
        }
    }
    return cloud;
}

// Exhaustive oracle for the capped allocation: try every set of saturated
// sections, solve lambda in closed form and keep the consistent solution.
std::vector<double> waterfill_oracle(const std::vector<std::size_t>& counts, const std::vector<double>& s,
                                     double target) {
    const std::size_t m = counts.size();
    for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
        double saturated = 0.0;
        double free_mass = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if ((mask >> j) & 1U) {
                saturated += static_cast<double>(counts[j]);
            } else {
                free_mass += s[j] * static_cast<double>(counts[j]);
            }
        }
        if (free_mass <= 0.0) {
            continue;
        }
        const double lambda = (target - saturated) / free_mass;
        if (lambda <= 0.0) {
            continue;
        }
        bool consistent = true;
        for (std::size_t j = 0; j < m && consistent; ++j) {
            if (counts[j] == 0) {
                continue;
            }
            const bool sat = ((mask >> j) & 1U) != 0;
            consistent = sat ? lambda * s[j] >= 1.0 : lambda * s[j] < 1.0;
        }
        if (consistent) {
            std::vector<double> p(m);
            for (std::size_t j = 0; j < m; ++j) {
                p[j] = std::min(1.0, lambda * s[j]);
            }
            return p;
        }
    }
    return {};
}

}  // namespace

TEST_CASE("build_sections: assignment examples") {
    PointCloud cloud;
    cloud.points = {{0.1F, -0.3F, 0, 0}, {10.0F, 3.0F, 0, 0}, {51.2F, 0, 0, 0}, {-0.8F, 0.0F, 0, 0}};
    const auto hist = build_sections(cloud, 0.8, 51.2);
    CHECK(hist.section_count() == 64);
    CHECK(hist.section_of[0] == 0);
    CHECK(hist.section_of[1] == 12);
    CHECK(hist.section_of[2] == -1);
    CHECK(hist.excluded == 1);
    CHECK(hist.section_of[3] == 1);  // boundary goes outward

    PointCloud three;
    three.points = {{1.0F, 0, 0, 0}, {0, -1.0F, 0, 0}, {-1.0F, 1.0F, 0, 0}};
    const auto h3 = build_sections(three, 0.8, 51.2);
    CHECK(h3.counts[0] == 0);
    CHECK(h3.counts[1] == 3);
    CHECK(std::accumulate(h3.counts.begin(), h3.counts.end(), std::size_t{0}) == 3);

    CHECK_THROWS_AS(build_sections(cloud, 0.0, 51.2), InvalidParam);
    CHECK_THROWS_AS(build_sections(cloud, -1.0, 51.2), InvalidParam);
}

TEST_CASE("section_weights: printed formula") {
    SectionHistogram h;
    h.counts = {10, 5, 1};
    CHECK(section_weights(h).weights == std::vector<double>{10, 15, 19});
    h.counts = {7};
    CHECK(section_weights(h).weights == std::vector<double>{7});
    h.counts = {4, 4, 4};
    CHECK(section_weights(h).weights == std::vector<double>{4, 4, 4});
    h.counts = {0, 0};
    CHECK_THROWS_AS(section_weights(h), EmptyHistogram);
}

TEST_CASE("section_weights: randomized hand evaluation and anti-monotonicity") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        SectionHistogram h;
        const auto m = 1 + uniform_index(rng, 40);
        for (std::uint64_t j = 0; j < m; ++j) {
            h.counts.push_back(uniform_index(rng, 5000));
        }
        h.counts[0] += 1;
        const auto w = section_weights(h).weights;
        const auto peak = *std::max_element(h.counts.begin(), h.counts.end());
        for (std::size_t j = 0; j < m; ++j) {
            CHECK(w[j] == static_cast<double>(2 * peak - h.counts[j]));
            CHECK(w[j] >= static_cast<double>(peak));
            for (std::size_t k = 0; k < m; ++k) {
                if (h.counts[j] < h.counts[k]) {
                    CHECK(w[j] > w[k]);
                }
            }
        }
    }
}

TEST_CASE("waterfill matches the exhaustive oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = 1 + uniform_index(rng, 10);
        std::vector<std::size_t> counts;
        for (std::uint64_t j = 0; j < m; ++j) {
            counts.push_back(uniform_index(rng, 30));
        }
        counts[uniform_index(rng, m)] += 1;
        const auto total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
        if (total < 2) {
            continue;
        }
        SectionHistogram h;
        h.counts = counts;
        const auto s = section_weights(h).weights;
        const double target = static_cast<double>(1 + uniform_index(rng, total - 1));
        const auto p = waterfill_keep_probabilities(counts, s, target);
        const auto oracle = waterfill_oracle(counts, s, target);
        REQUIRE(oracle.size() == m);
        double kept = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (counts[j] == 0) {
                continue;
            }
            const double e = p[j] * static_cast<double>(counts[j]);
            const double o = oracle[j] * static_cast<double>(counts[j]);
            CHECK(std::abs(e - o) <= 1e-9 * std::max(1.0, o));
            kept += e;
        }
        CHECK(kept == doctest::Approx(target).epsilon(1e-12));
    }
}

TEST_CASE("undersample: under budget passes through") {
    const auto cloud = ring_cloud({20, 20, 10}, 0.8);
    CHECK(undersample(cloud, 100, 0.8, 1) == cloud);
    CHECK(undersample_uniform(cloud, 100, 1) == cloud);
    CHECK(undersample_uniform(cloud, cloud.size(), 1) == cloud);
    CHECK_THROWS_AS(undersample(cloud, 0, 0.8, 1), InvalidParam);
    CHECK_THROWS_AS(undersample_uniform(cloud, 0, 1), InvalidParam);
}

TEST_CASE("undersample: uniform sections keep half each") {
    const std::vector<std::size_t> counts(20, 200);
    const auto cloud = ring_cloud(counts, 0.8);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto kept = undersample(cloud, 2000, 0.8, seed);
        CHECK(kept.size() == 2000);
        std::vector<std::size_t> per(20, 0);
        for (const auto l : kept.labels) {
            ++per[l];
        }
        for (const auto n : per) {
            CHECK(std::abs(static_cast<double>(n) / 200.0 - 0.5) <= 0.02);
        }
    }
}

TEST_CASE("undersample: sparse sections keep a larger fraction") {
    const auto cloud = ring_cloud({1000, 10}, 0.8);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto kept = undersample(cloud, 500, 0.8, seed);
        std::size_t dense = 0;
        std::size_t sparse = 0;
        for (const auto l : kept.labels) {
            (l == 0 ? dense : sparse) += 1;
        }
        CHECK(static_cast<double>(sparse) / 10.0 > static_cast<double>(dense) / 1000.0);
    }
}

TEST_CASE("undersample: budget window, subset, determinism") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> counts;
        for (int j = 0; j < 64; ++j) {
            counts.push_back(uniform_index(rng, 400));
        }
        const auto cloud = ring_cloud(counts, 0.8, static_cast<std::uint64_t>(trial));
        const std::size_t budget = cloud.size() / 3;
        const auto idx = undersample_indices(cloud, budget, 0.8, 17);
        CHECK(idx.size() <= budget);
        CHECK(idx.size() + 64 >= budget);
        CHECK(std::is_sorted(idx.begin(), idx.end()));
        CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
        CHECK(idx.back() < cloud.size());
        CHECK(idx == undersample_indices(cloud, budget, 0.8, 17));

        const auto sub = undersample(cloud, budget, 0.8, 17);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            CHECK(sub.points[i] == cloud.points[idx[i]]);
            CHECK(sub.labels[i] == cloud.labels[idx[i]]);
        }
    }
}

TEST_CASE("undersample_uniform: cardinality and determinism") {
    const auto cloud = ring_cloud({10}, 0.8);
    const auto idx = undersample_uniform_indices(cloud, 5, 9);
    CHECK(idx.size() == 5);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 5);
    CHECK(idx == undersample_uniform_indices(cloud, 5, 9));
    const auto sub = undersample_uniform(cloud, 5, 9);
    CHECK(sub.size() == 5);
}

TEST_CASE("apportion: totals and caps") {
    const std::vector<std::size_t> counts{10, 3, 0, 7};
    const std::vector<double> p{0.55, 1.0, 0.0, 0.45};
    const auto keep = apportion_keep_counts(counts, p, 12);
    CHECK(std::accumulate(keep.begin(), keep.end(), std::size_t{0}) == 12);
    for (std::size_t j = 0; j < counts.size(); ++j) {
        CHECK(keep[j] <= counts[j]);
    }
    CHECK(keep[2] == 0);
}
