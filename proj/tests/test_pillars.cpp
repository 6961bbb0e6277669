#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gsec/error.hpp"
#include "gsec/pillars.hpp"
#include "test_util.hpp"

using namespace gsec;

namespace {

std::vector<Normal> up_normals(std::size_t n) {
    return std::vector<Normal>(n, Normal{0.0, 0.0, 1.0});
}

PointCloud random_cloud(Rng& rng, std::size_t n, bool clustered) {
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i) {
        double x;
        double y;
        if (clustered && i % 2 == 0) {
            // pile points into a few cells to exercise the cap
            x = 0.8 * static_cast<double>(uniform_index(rng, 3)) + uniform(rng, 0.0, 0.79);
            y = 0.8 * static_cast<double>(uniform_index(rng, 3)) + uniform(rng, 0.0, 0.79);
        } else {
            x = uniform(rng, -60, 60);
            y = uniform(rng, -60, 60);
        }
        c.points.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(uniform(rng, -5, 5)),
                            static_cast<float>(uniform01(rng))});
        c.labels.push_back(uniform01(rng) < 0.5 ? 40 : 10);
    }
    return c;
}

// Bin index by the documented rule, computed independently.
std::optional<std::pair<int, int>> oracle_cell(const Point& p) {
    const float lo = -51.2F;
    const float hi = 51.2F;
    if (p.x < lo || p.x >= hi || p.y < lo || p.y >= hi || p.z < -4.0F || p.z >= 4.0F) {
        return std::nullopt;
    }
    const double x = p.x;
    const double y = p.y;
    auto bin = [](double v) { return std::clamp(static_cast<int>(std::floor((v + 51.2) / 0.8)), 0, 127); };
    return std::make_pair(bin(y), bin(x));
}

}  // namespace

TEST_CASE("cell_of: origin, corners and half-open bounds") {
    const GridConfig cfg;
    CHECK(cell_of({0, 0, 0, 0}, cfg) == 64 * 128 + 64);
    CHECK(cell_of({-51.2F, -51.2F, 0, 0}, cfg) == 0);
    CHECK_FALSE(cell_of({51.2F, 0, 0, 0}, cfg).has_value());
    CHECK_FALSE(cell_of({0, 51.2F, 0, 0}, cfg).has_value());
    CHECK_FALSE(cell_of({0, 0, 4.0F, 0}, cfg).has_value());
    CHECK(cell_of({0, 0, -4.0F, 0}, cfg).has_value());
    CHECK(cell_of({51.1F, 51.1F, 0, 0}, cfg) == 128 * 128 - 1);
    // row from y, column from x
    CHECK(cell_of({-51.2F, -50.0F, 0, 0}, cfg) == 1 * 128 + 0);
}

TEST_CASE("grid config validation") {
    GridConfig cfg;
    cfg.rows = 100;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
    cfg = GridConfig{};
    cfg.max_points = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
}

TEST_CASE("pillarize: single point at pillar center") {
    PointCloud c;
    c.points = {{-50.8F, -50.8F, 1.0F, 0.25F}};
    const auto grid = pillarize(c, up_normals(1), GridConfig{}, 0);
    REQUIRE(grid.pillars.size() == 1);
    const auto& p = grid.pillars[0];
    CHECK(p.row == 0);
    CHECK(p.col == 0);
    const auto& f = p.points[0];
    CHECK(std::abs(f[kXp]) < 1e-6);
    CHECK(std::abs(f[kYp]) < 1e-6);
    CHECK(f[kXc] == 0.0);
    CHECK(f[kYc] == 0.0);
    CHECK(f[kZc] == 0.0);
    CHECK(f[kIntensity] == 0.25);
    CHECK(f[kZn] == 1.0);
}

TEST_CASE("pillarize: boundary points and missing normals") {
    PointCloud c;
    c.points = {{0, 0, 0, 0}, {51.2F, 0, 0, 0}, {-51.2F, -51.2F, 0, 0}, {0, 0, 4.0F, 0}};
    const auto grid = pillarize(c, up_normals(4), GridConfig{}, 0);
    CHECK(grid.out_of_range == std::vector<std::uint32_t>{1, 3});
    CHECK(grid.cell_to_pillar[64 * 128 + 64] == grid.point_to_pillar[0]);
    CHECK(grid.cell_to_pillar[0] == grid.point_to_pillar[2]);
    CHECK(grid.point_to_pillar[1] == -1);
    CHECK_THROWS_AS(pillarize(c, up_normals(3), GridConfig{}, 0), MissingNormals);
}

TEST_CASE("pillarize: partition, cap and centering invariants on random clouds") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const auto cloud = random_cloud(rng, 200 + uniform_index(rng, 3000), trial % 2 == 0);
        const auto grid = pillarize(cloud, up_normals(cloud.size()), GridConfig{}, static_cast<std::uint64_t>(trial));

        std::size_t in_range = 0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const auto cell = oracle_cell(cloud.points[i]);
            if (!cell) {
                CHECK(grid.point_to_pillar[i] == -1);
                continue;
            }
            ++in_range;
            const auto id = grid.point_to_pillar[i];
            REQUIRE(id >= 0);
            CHECK(grid.pillars[static_cast<std::size_t>(id)].row == cell->first);
            CHECK(grid.pillars[static_cast<std::size_t>(id)].col == cell->second);
        }
        CHECK(in_range + grid.out_of_range.size() == cloud.size());

        std::size_t precap = 0;
        int last_cell = -1;
        for (std::size_t id = 0; id < grid.pillars.size(); ++id) {
            const auto& p = grid.pillars[id];
            const int cell = p.row * 128 + p.col;
            CHECK(cell > last_cell);
            last_cell = cell;
            CHECK(grid.cell_to_pillar[static_cast<std::size_t>(cell)] == static_cast<std::int32_t>(id));
            precap += p.precap_count;
            CHECK(p.points.size() == std::min<std::size_t>(p.precap_count, 64));
            std::set<std::uint32_t> unique(p.source.begin(), p.source.end());
            CHECK(unique.size() == p.source.size());

            double sx = 0;
            double sy = 0;
            double sz = 0;
            for (std::size_t k = 0; k < p.points.size(); ++k) {
                const auto& f = p.points[k];
                CHECK(grid.point_to_pillar[p.source[k]] == static_cast<std::int32_t>(id));
                CHECK(f[kX] == cloud.points[p.source[k]].x);
                sx += f[kXc];
                sy += f[kYc];
                sz += f[kZc];
                CHECK(std::abs(f[kXp]) <= 0.4 + 1e-6);
                CHECK(std::abs(f[kYp]) <= 0.4 + 1e-6);
            }
            const double n = static_cast<double>(p.points.size());
            CHECK(std::abs(sx / n) < 1e-9);
            CHECK(std::abs(sy / n) < 1e-9);
            CHECK(std::abs(sz / n) < 1e-9);
        }
        CHECK(precap == in_range);

        const auto again = pillarize(cloud, up_normals(cloud.size()), GridConfig{}, static_cast<std::uint64_t>(trial));
        for (std::size_t id = 0; id < grid.pillars.size(); ++id) {
            CHECK(again.pillars[id].source == grid.pillars[id].source);
        }
    }
}

TEST_CASE("pillarize: cap keeps 64 and offsets use retained points") {
    PointCloud c;
    for (int i = 0; i < 100; ++i) {
        c.points.push_back({0.01F * static_cast<float>(i % 70), 0.1F, static_cast<float>(i) * 0.01F, 0});
    }
    const auto grid = pillarize(c, up_normals(c.size()), GridConfig{}, 5);
    REQUIRE(grid.pillars.size() == 1);
    const auto& p = grid.pillars[0];
    CHECK(p.precap_count == 100);
    CHECK(p.points.size() == 64);
    double mz = 0;
    for (const auto s : p.source) {
        mz += c.points[s].z;
    }
    mz /= 64.0;
    for (std::size_t k = 0; k < 64; ++k) {
        CHECK(p.points[k][kZc] == doctest::Approx(c.points[p.source[k]].z - mz).epsilon(1e-12));
    }
    // every input point still maps to the pillar
    CHECK(std::count(grid.point_to_pillar.begin(), grid.point_to_pillar.end(), 0) == 100);
}

TEST_CASE("label_pillars: majority rule and vacancy") {
    PointCloud c;
    std::vector<SemanticClass> labels;
    auto add = [&](float x, float y, SemanticClass l, int n) {
        for (int i = 0; i < n; ++i) {
            c.points.push_back({x, y, 0, 0});
            labels.push_back(l);
        }
    };
    add(0.1F, 0.1F, 40, 10);  // cell (64, 64): 10 road
    add(1.0F, 0.1F, 40, 3);   // cell (64, 65): 3 road + 5 car
    add(1.0F, 0.1F, 10, 5);
    add(2.0F, 0.1F, 48, 2);   // cell (64, 66): 2 sidewalk + 2 car, exactly half
    add(2.0F, 0.1F, 10, 2);
    const auto grid = pillarize(c, up_normals(c.size()), GridConfig{}, 0);
    const auto out = label_pillars(grid, labels);
    CHECK(out.ground.at(64, 64) == 1);
    CHECK(out.ground.at(64, 65) == 0);
    CHECK(out.ground_fraction[64 * 128 + 65] == doctest::Approx(3.0 / 8.0));
    CHECK(out.ground.at(64, 66) == 1);
    CHECK(out.ground.at(0, 0) == 0);
    CHECK(std::count(out.ground.cells.begin(), out.ground.cells.end(), 1) == 2);

    CHECK_THROWS_AS(label_pillars(grid, std::vector<SemanticClass>{}), NoLabels);
    const auto strict = label_pillars(grid, labels, kDefaultGroundClasses, 0.6);
    CHECK(strict.ground.at(64, 66) == 0);
}

TEST_CASE("propagate_to_points: all ground, checkerboard, unscored") {
    Rng rng(8);
    auto cloud = random_cloud(rng, 2000, false);
    const auto grid = pillarize(cloud, up_normals(cloud.size()), GridConfig{}, 0);

    const BinaryMap all(128, 128, 1);
    const auto labels = propagate_to_points(all, grid);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(labels[i] == (grid.point_to_pillar[i] >= 0 ? 1 : kUnscored));
    }

    BinaryMap checker(128, 128);
    for (int r = 0; r < 128; ++r) {
        for (int col = 0; col < 128; ++col) {
            checker.cells[static_cast<std::size_t>(r * 128 + col)] = static_cast<std::uint8_t>((r + col) % 2);
        }
    }
    const auto parity = propagate_to_points(checker, grid);
    const auto by_coords = propagate_by_coordinates(checker, cloud, GridConfig{});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto cell = oracle_cell(cloud.points[i]);
        const std::int8_t expected = cell ? static_cast<std::int8_t>((cell->first + cell->second) % 2) : kUnscored;
        CHECK(parity[i] == expected);
        CHECK(by_coords[i] == expected);
    }
    CHECK_THROWS_AS(propagate_to_points(BinaryMap(64, 64), grid), ShapeMismatch);
}

TEST_CASE("flat synthetic scene: label then propagate recovers point labels") {
    SceneSpec spec;
    spec.noise_sigma = 0.0;
    spec.obstacles.push_back({10.0, 0.0, 4.0, 4.0, 2.0, 40.0});  // pillar-aligned footprint [8,12] x [-2,2]
    const auto cloud = generate_scene(spec, 4);
    const auto grid = pillarize(cloud, up_normals(cloud.size()), GridConfig{}, 0);
    const auto pl = label_pillars(grid, cloud.labels);
    const auto points = propagate_to_points(pl.ground, grid);
    const auto truth = ground_mask(cloud.labels);
    std::map<std::int32_t, std::set<std::uint8_t>> classes;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (grid.point_to_pillar[i] >= 0) {
            classes[grid.point_to_pillar[i]].insert(truth[i]);
        }
    }
    std::size_t mismatch = 0;
    std::size_t mixed = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (points[i] == kUnscored) {
            continue;
        }
        mixed += classes[grid.point_to_pillar[i]].size() > 1 ? 1 : 0;
        if (points[i] != static_cast<std::int8_t>(truth[i])) {
            ++mismatch;
        }
    }
    // only points sharing a pillar with the other class can be wrong
    CHECK(mismatch <= mixed);
}

TEST_CASE("pillar tensor and frame blob round trip") {
    Rng rng(12);
    const auto cloud = random_cloud(rng, 1500, true);
    const auto grid = pillarize(cloud, up_normals(cloud.size()), GridConfig{}, 3);
    PillarFrame frame;
    frame.tensor = to_pillar_tensor(grid);
    frame.labels = label_pillars(grid, cloud.labels).ground;
    frame.point_count = cloud.size();
    frame.out_of_range = grid.out_of_range.size();

    const auto& t = frame.tensor;
    REQUIRE(t.pillar_count() == grid.pillars.size());
    CHECK(t.features.size() == t.pillar_count() * 64 * kFeatureCount);
    for (std::size_t p = 0; p < t.pillar_count(); ++p) {
        CHECK(t.counts[p] == static_cast<std::int32_t>(grid.pillars[p].points.size()));
        for (std::size_t s = static_cast<std::size_t>(t.counts[p]); s < 64; ++s) {
            for (int f = 0; f < kFeatureCount; ++f) {
                CHECK(t.features[(p * 64 + s) * kFeatureCount + static_cast<std::size_t>(f)] == 0.0F);
            }
        }
    }

    TempDir dir;
    pillar_frame_to_blob(frame, 3, 0xabcdefULL).save(dir / "f.pillars");
    const auto blob = Blob::load(dir / "f.pillars");
    CHECK(blob.config_hash == 0xabcdefULL);
    CHECK(blob.seed == 3);
    const auto back = pillar_frame_from_blob(blob);
    CHECK(back.tensor.features == t.features);
    CHECK(back.tensor.counts == t.counts);
    CHECK(back.tensor.coords == t.coords);
    CHECK(back.labels == frame.labels);
    CHECK(back.point_count == frame.point_count);
    CHECK(back.out_of_range == frame.out_of_range);

    Blob bad;
    bad.kind = "checkpoint";
    CHECK_THROWS_AS(pillar_frame_from_blob(bad), FormatError);
}
