#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gsec/error.hpp"
#include "gsec/geometry.hpp"

using namespace gsec;

namespace {

std::vector<std::size_t> brute_knn(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double dx = pts[i][0] - q[0];
        const double dy = pts[i][1] - q[1];
        const double dz = pts[i][2] - q[2];
        d.emplace_back(dx * dx + dy * dy + dz * dz, i);
    }
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, d.size()); ++i) {
        out.push_back(d[i].second);
    }
    return out;
}

std::vector<Vec3> random_points(Rng& rng, std::size_t n) {
    std::vector<Vec3> pts(n);
    for (auto& p : pts) {
        p = {uniform(rng, -20, 20), uniform(rng, -20, 20), uniform(rng, -2, 2)};
    }
    return pts;
}

PointCloud cloud_from(const std::vector<Vec3>& pts) {
    PointCloud c;
    for (const auto& p : pts) {
        c.points.push_back({static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2]), 0.0F});
    }
    return c;
}

}  // namespace

TEST_CASE("kdtree: single point and duplicates") {
    KdTree one(std::vector<Vec3>{{1, 2, 3}});
    CHECK(one.knn({100, -5, 0}, 1) == std::vector<std::size_t>{0});
    CHECK(one.knn({0, 0, 0}, 5) == std::vector<std::size_t>{0});

    KdTree dup(std::vector<Vec3>{{1, 1, 1}, {0, 0, 0}, {1, 1, 1}, {1, 1, 1}});
    CHECK(dup.knn({1, 1, 1}, 3) == std::vector<std::size_t>{0, 2, 3});

    CHECK_THROWS_AS(KdTree(std::vector<Vec3>{}), EmptyCloud);
    CHECK_THROWS_AS(one.knn({0, 0, 0}, 0), InvalidParam);
}

TEST_CASE("knn: collinear hand example") {
    KdTree tree(std::vector<Vec3>{{3, 0, 0}, {1, 0, 0}, {0, 0, 0}, {2, 0, 0}});
    CHECK(tree.knn({0, 0, 0}, 1) == std::vector<std::size_t>{2});
    CHECK(tree.knn({0, 0, 0}, 2) == std::vector<std::size_t>{2, 1});
    // query at 1.5 ties x=1 and x=2; lower index first
    CHECK(tree.knn({1.5, 0, 0}, 2) == std::vector<std::size_t>{1, 3});
}

TEST_CASE("knn equals exhaustive search on random clouds") {
    Rng rng(2024);
    for (int cloud_i = 0; cloud_i < 20; ++cloud_i) {
        const auto n = 500 + uniform_index(rng, 1501);
        auto pts = random_points(rng, n);
        // a few exact duplicates and grid-aligned values to exercise ties
        for (int d = 0; d < 10; ++d) {
            pts[uniform_index(rng, n)] = pts[uniform_index(rng, n)];
        }
        const KdTree tree(pts);
        for (int qi = 0; qi < 25; ++qi) {
            const Vec3 q = qi % 5 == 0 ? pts[uniform_index(rng, n)]
                                       : Vec3{uniform(rng, -22, 22), uniform(rng, -22, 22), uniform(rng, -3, 3)};
            for (const std::size_t k : {1, 5, 30}) {
                CHECK(tree.knn(q, k) == brute_knn(pts, q, k));
            }
        }
    }
}

TEST_CASE("knn: independent of input order up to relabeling") {
    Rng rng(5);
    const auto pts = random_points(rng, 300);
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(rng, perm);
    std::vector<Vec3> shuffled(pts.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled[i] = pts[perm[i]];
    }
    const KdTree a(pts);
    const KdTree b(shuffled);
    for (int qi = 0; qi < 50; ++qi) {
        const Vec3 q{uniform(rng, -20, 20), uniform(rng, -20, 20), 0};
        auto ia = a.knn(q, 10);
        auto ib = b.knn(q, 10);
        for (auto& i : ib) {
            i = perm[i];
        }
        std::sort(ia.begin(), ia.end());
        std::sort(ib.begin(), ib.end());
        CHECK(ia == ib);
    }
}

TEST_CASE("plane_fit: exact planes") {
    std::vector<Vec3> flat{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {2, 3, 0}};
    auto f = plane_fit(flat);
    CHECK(std::abs(f.alpha) < 1e-12);
    CHECK(std::abs(f.beta) < 1e-12);
    CHECK(std::abs(f.gamma) < 1e-12);

    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = uniform(rng, -3, 3);
        const double b = uniform(rng, -3, 3);
        const double c = uniform(rng, -10, 10);
        std::vector<Vec3> pts;
        for (int i = 0; i < 30; ++i) {
            const double x = uniform(rng, -5, 5);
            const double y = uniform(rng, -5, 5);
            pts.push_back({x, y, a * x + b * y + c});
        }
        f = plane_fit(pts);
        CHECK(std::abs(f.alpha - a) < 1e-9);
        CHECK(std::abs(f.beta - b) < 1e-9);
        CHECK(std::abs(f.gamma - c) < 1e-9);
        double residual = 0.0;
        for (const auto& p : pts) {
            residual = std::max(residual, std::abs(f.alpha * p[0] + f.beta * p[1] + f.gamma - p[2]));
        }
        CHECK(residual < 1e-9);
    }

    std::vector<Vec3> handmade;
    for (const auto& [x, y] : std::vector<std::pair<double, double>>{{0, 0}, {1, 0}, {0, 1}, {2, 5}, {-1, 3}}) {
        handmade.push_back({x, y, 2 * x + 3 * y + 1});
    }
    f = plane_fit(handmade);
    CHECK(f.alpha == doctest::Approx(2).epsilon(1e-12));
    CHECK(f.beta == doctest::Approx(3).epsilon(1e-12));
    CHECK(f.gamma == doctest::Approx(1).epsilon(1e-12));
}

TEST_CASE("plane_fit: degenerate and too few") {
    std::vector<Vec3> wall{{5, 0, 0}, {5, 1, 0}, {5, 0, 1}, {5, 2, 3}, {5, -1, 2}};
    CHECK_THROWS_AS(plane_fit(wall), Degenerate);
    CHECK_FALSE(try_plane_fit(wall).has_value());
    std::vector<Vec3> line{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
    CHECK_THROWS_AS(plane_fit(line), Degenerate);
    std::vector<Vec3> two{{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(plane_fit(two), TooFewPoints);
}

TEST_CASE("estimate_normals: flat ground and ramp") {
    PointCloud flat;
    PointCloud ramp;
    for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 20; ++j) {
            const float x = 0.3F * static_cast<float>(i);
            const float y = 0.3F * static_cast<float>(j);
            flat.points.push_back({x, y, 0.0F, 0.0F});
            ramp.points.push_back({x, y, x, 0.0F});
        }
    }
    const auto nf = estimate_normals(flat, {30, false});
    CHECK(nf.fallbacks == 0);
    for (const auto& n : nf.normals) {
        CHECK(std::abs(n.nx) < 1e-9);
        CHECK(std::abs(n.ny) < 1e-9);
        CHECK(n.nz == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (const bool corrected : {false, true}) {
        const auto nr = estimate_normals(ramp, {30, corrected});
        CHECK(nr.fallbacks == 0);
        for (const auto& n : nr.normals) {
            CHECK(std::abs(std::abs(n.nz) - 1.0 / std::sqrt(2.0)) < 1e-6);
            CHECK(std::abs(n.nx * n.nx + n.ny * n.ny + n.nz * n.nz - 1.0) < 1e-9);
            CHECK(n.nz > 0.0);
            CHECK((corrected ? n.nx < 0.0 : n.nx > 0.0));
        }
    }
}

TEST_CASE("estimate_normals: vertical pole falls back to up") {
    PointCloud pole;
    for (int i = 0; i < 40; ++i) {
        pole.points.push_back({3.0F, 3.0F + 0.001F * static_cast<float>(i % 2), 0.05F * static_cast<float>(i), 0});
    }
    const auto est = estimate_normals(pole, {10, false});
    CHECK(est.fallbacks == pole.size());
    for (const auto& n : est.normals) {
        CHECK(n.nx == 0.0);
        CHECK(n.ny == 0.0);
        CHECK(n.nz == 1.0);
    }
}

TEST_CASE("estimate_normals: exact plane gives 1/sqrt(1+a^2+b^2)") {
    Rng rng(77);
    const double a = 0.4;
    const double b = -0.7;
    std::vector<Vec3> pts;
    for (int i = 0; i < 600; ++i) {
        const double x = uniform(rng, -10, 10);
        const double y = uniform(rng, -10, 10);
        pts.push_back({x, y, a * x + b * y + 2.0});
    }
    // float storage perturbs the plane slightly; the tolerance absorbs it
    const auto est = estimate_normals(cloud_from(pts), {30, false});
    const double expected = 1.0 / std::sqrt(1.0 + a * a + b * b);
    for (const auto& n : est.normals) {
        CHECK(std::abs(n.nz - expected) < 1e-5);
        CHECK(std::abs(std::hypot(n.nx, n.ny, n.nz) - 1.0) < 1e-9);
    }
}
