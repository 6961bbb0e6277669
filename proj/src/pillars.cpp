#include "gsec/pillars.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gsec/error.hpp"
#include "gsec/rng.hpp"

namespace gsec {

void GridConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw InvalidParam(std::string("GridConfig: ") + what);
        }
    };
    require(pillar_size > 0.0, "pillar size must be > 0");
    require(x_max > x_min && y_max > y_min && z_max > z_min, "ranges must be non-empty");
    require(rows > 0 && cols > 0, "grid dims must be positive");
    require(max_points >= 1, "max points per pillar must be >= 1");
    require(std::abs((x_max - x_min) / pillar_size - cols) < 1e-9, "x extent / pillar size must equal cols");
    require(std::abs((y_max - y_min) / pillar_size - rows) < 1e-9, "y extent / pillar size must equal rows");
}

std::optional<int> cell_of(const Point& p, const GridConfig& cfg) {
    // Bounds are rounded to float like the coordinates, so -51.2F is inside
    // and 51.2F outside.
    auto outside = [](float v, double lo, double hi) {
        return v < static_cast<float>(lo) || v >= static_cast<float>(hi);
    };
    if (outside(p.x, cfg.x_min, cfg.x_max) || outside(p.y, cfg.y_min, cfg.y_max) ||
        outside(p.z, cfg.z_min, cfg.z_max)) {
        return std::nullopt;
    }
    const double x = p.x;
    const double y = p.y;
    const int col = std::clamp(static_cast<int>(std::floor((x - cfg.x_min) / cfg.pillar_size)), 0, cfg.cols - 1);
    const int row = std::clamp(static_cast<int>(std::floor((y - cfg.y_min) / cfg.pillar_size)), 0, cfg.rows - 1);
    return row * cfg.cols + col;
}

PillarGrid pillarize(const PointCloud& cloud, std::span<const Normal> normals, const GridConfig& cfg,
                     std::uint64_t seed) {
    cfg.validate();
    if (normals.size() != cloud.size()) {
        throw MissingNormals("pillarize needs one normal per point (" + std::to_string(normals.size()) + " for " +
                             std::to_string(cloud.size()) + " points)");
    }
    PillarGrid grid;
    grid.cfg = cfg;
    grid.cell_to_pillar.assign(static_cast<std::size_t>(cfg.cell_count()), -1);
    grid.point_to_pillar.assign(cloud.size(), -1);

    std::vector<std::vector<std::uint32_t>> members(static_cast<std::size_t>(cfg.cell_count()));
    std::vector<int> cell_of_point(cloud.size(), -1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto cell = cell_of(cloud.points[i], cfg);
        if (!cell) {
            grid.out_of_range.push_back(static_cast<std::uint32_t>(i));
            continue;
        }
        cell_of_point[i] = *cell;
        members[static_cast<std::size_t>(*cell)].push_back(static_cast<std::uint32_t>(i));
    }

    Rng rng(seed);
    for (int cell = 0; cell < cfg.cell_count(); ++cell) {
        auto& in_cell = members[static_cast<std::size_t>(cell)];
        if (in_cell.empty()) {
            continue;
        }
        Pillar pillar;
        pillar.row = cell / cfg.cols;
        pillar.col = cell % cfg.cols;
        pillar.precap_count = in_cell.size();
        if (in_cell.size() > static_cast<std::size_t>(cfg.max_points)) {
            for (const auto pick :
                 sample_without_replacement(rng, in_cell.size(), static_cast<std::size_t>(cfg.max_points))) {
                pillar.source.push_back(in_cell[pick]);
            }
        } else {
            pillar.source = in_cell;
        }

        double mx = 0.0;
        double my = 0.0;
        double mz = 0.0;
        for (const auto i : pillar.source) {
            mx += cloud.points[i].x;
            my += cloud.points[i].y;
            mz += cloud.points[i].z;
        }
        const double n = static_cast<double>(pillar.source.size());
        mx /= n;
        my /= n;
        mz /= n;
        const double cx = cfg.x_min + (pillar.col + 0.5) * cfg.pillar_size;
        const double cy = cfg.y_min + (pillar.row + 0.5) * cfg.pillar_size;

        pillar.points.reserve(pillar.source.size());
        for (const auto i : pillar.source) {
            const auto& p = cloud.points[i];
            const auto& nrm = normals[i];
            AugmentedPoint f{};
            f[kX] = p.x;
            f[kY] = p.y;
            f[kZ] = p.z;
            f[kIntensity] = p.intensity;
            f[kXc] = f[kX] - mx;
            f[kYc] = f[kY] - my;
            f[kZc] = f[kZ] - mz;
            f[kXp] = f[kX] - cx;
            f[kYp] = f[kY] - cy;
            f[kXn] = nrm.nx;
            f[kYn] = nrm.ny;
            f[kZn] = nrm.nz;
            pillar.points.push_back(f);
        }
        const auto id = static_cast<std::int32_t>(grid.pillars.size());
        grid.cell_to_pillar[static_cast<std::size_t>(cell)] = id;
        for (const auto i : in_cell) {
            grid.point_to_pillar[i] = id;
        }
        grid.pillars.push_back(std::move(pillar));
    }
    return grid;
}

PillarLabels label_pillars(const PillarGrid& grid, std::span<const SemanticClass> labels,
                           const std::set<SemanticClass>& ground_classes, double threshold) {
    if (labels.empty()) {
        throw NoLabels("cloud carries no semantic labels");
    }
    if (labels.size() != grid.point_to_pillar.size()) {
        throw LengthMismatch("label count differs from the pillarized point count");
    }
    PillarLabels out;
    out.ground = BinaryMap(grid.cfg.rows, grid.cfg.cols);
    out.ground_fraction.assign(static_cast<std::size_t>(grid.cfg.cell_count()), 0.0);
    for (const auto& pillar : grid.pillars) {
        std::size_t ground = 0;
        for (const auto i : pillar.source) {
            ground += ground_classes.contains(labels[i]) ? 1 : 0;
        }
        const double fraction = static_cast<double>(ground) / static_cast<double>(pillar.source.size());
        const auto cell = static_cast<std::size_t>(pillar.row * grid.cfg.cols + pillar.col);
        out.ground_fraction[cell] = fraction;
        out.ground.cells[cell] = fraction >= threshold ? 1 : 0;
    }
    return out;
}

std::vector<std::int8_t> propagate_to_points(const BinaryMap& prediction, const PillarGrid& grid) {
    if (prediction.rows != grid.cfg.rows || prediction.cols != grid.cfg.cols ||
        prediction.cells.size() != static_cast<std::size_t>(grid.cfg.cell_count())) {
        throw ShapeMismatch("prediction map shape differs from the pillar grid");
    }
    std::vector<std::int8_t> out(grid.point_to_pillar.size(), kUnscored);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto id = grid.point_to_pillar[i];
        if (id < 0) {
            continue;
        }
        const auto& pillar = grid.pillars[static_cast<std::size_t>(id)];
        out[i] = static_cast<std::int8_t>(prediction.at(pillar.row, pillar.col));
    }
    return out;
}

std::vector<std::int8_t> propagate_by_coordinates(const BinaryMap& prediction, const PointCloud& cloud,
                                                  const GridConfig& cfg) {
    if (prediction.rows != cfg.rows || prediction.cols != cfg.cols) {
        throw ShapeMismatch("prediction map shape differs from the grid config");
    }
    std::vector<std::int8_t> out(cloud.size(), kUnscored);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (const auto cell = cell_of(cloud.points[i], cfg)) {
            out[i] = static_cast<std::int8_t>(prediction.cells[static_cast<std::size_t>(*cell)]);
        }
    }
    return out;
}

std::vector<std::uint8_t> ground_mask(std::span<const SemanticClass> labels,
                                      const std::set<SemanticClass>& ground_classes) {
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out[i] = ground_classes.contains(labels[i]) ? 1 : 0;
    }
    return out;
}

PillarTensor to_pillar_tensor(const PillarGrid& grid) {
    PillarTensor t;
    t.rows = grid.cfg.rows;
    t.cols = grid.cfg.cols;
    t.max_points = grid.cfg.max_points;
    const std::size_t p = grid.pillars.size();
    const std::size_t stride = static_cast<std::size_t>(t.max_points) * kFeatureCount;
    t.features.assign(p * stride, 0.0F);
    t.counts.resize(p);
    t.coords.resize(p);
    for (std::size_t k = 0; k < p; ++k) {
        const auto& pillar = grid.pillars[k];
        t.counts[k] = static_cast<std::int32_t>(pillar.points.size());
        t.coords[k] = {pillar.row, pillar.col};
        for (std::size_t j = 0; j < pillar.points.size(); ++j) {
            for (int f = 0; f < kFeatureCount; ++f) {
                t.features[k * stride + j * kFeatureCount + static_cast<std::size_t>(f)] =
                    static_cast<float>(pillar.points[j][static_cast<std::size_t>(f)]);
            }
        }
    }
    return t;
}

Blob pillar_frame_to_blob(const PillarFrame& frame, std::uint64_t seed, std::uint64_t config_hash) {
    const auto& t = frame.tensor;
    Blob blob;
    blob.kind = "pillars";
    blob.seed = seed;
    blob.config_hash = config_hash;
    const std::uint64_t p = t.pillar_count();
    blob.put<float>("features", {p, static_cast<std::uint64_t>(t.max_points), kFeatureCount}, t.features);
    blob.put<std::int32_t>("counts", {p}, t.counts);
    std::vector<std::int32_t> coords;
    coords.reserve(2 * p);
    for (const auto& rc : t.coords) {
        coords.push_back(rc[0]);
        coords.push_back(rc[1]);
    }
    blob.put<std::int32_t>("coords", {p, 2}, coords);
    const std::vector<std::uint64_t> info{static_cast<std::uint64_t>(t.rows), static_cast<std::uint64_t>(t.cols),
                                          frame.point_count, frame.out_of_range};
    blob.put<std::uint64_t>("info", {4}, info);
    if (frame.labels) {
        blob.put<std::uint8_t>("labels",
                               {static_cast<std::uint64_t>(frame.labels->rows),
                                static_cast<std::uint64_t>(frame.labels->cols)},
                               frame.labels->cells);
    }
    return blob;
}

PillarFrame pillar_frame_from_blob(const Blob& blob) {
    if (blob.kind != "pillars") {
        throw FormatError("expected a pillars blob, got '" + blob.kind + "'");
    }
    PillarFrame frame;
    auto& t = frame.tensor;
    const auto& feat = blob.array("features");
    if (feat.dims.size() != 3 || feat.dims[2] != kFeatureCount) {
        throw FormatError("pillar features must be P x M x 12");
    }
    t.max_points = static_cast<int>(feat.dims[1]);
    t.features = blob.get<float>("features");
    t.counts = blob.get<std::int32_t>("counts");
    const auto coords = blob.get<std::int32_t>("coords");
    const auto info = blob.get<std::uint64_t>("info");
    if (info.size() != 4 || t.counts.size() != feat.dims[0] || coords.size() != 2 * t.counts.size()) {
        throw FormatError("pillar blob arrays disagree in size");
    }
    t.rows = static_cast<int>(info[0]);
    t.cols = static_cast<int>(info[1]);
    frame.point_count = info[2];
    frame.out_of_range = info[3];
    t.coords.resize(t.counts.size());
    for (std::size_t k = 0; k < t.counts.size(); ++k) {
        t.coords[k] = {coords[2 * k], coords[2 * k + 1]};
        if (t.coords[k][0] < 0 || t.coords[k][0] >= t.rows || t.coords[k][1] < 0 || t.coords[k][1] >= t.cols ||
            t.counts[k] < 0 || t.counts[k] > t.max_points) {
            throw FormatError("pillar blob has out-of-grid coordinates or counts");
        }
    }
    if (blob.has("labels")) {
        const auto& a = blob.array("labels");
        BinaryMap map(static_cast<int>(a.dims.at(0)), static_cast<int>(a.dims.at(1)));
        map.cells = blob.get<std::uint8_t>("labels");
        frame.labels = std::move(map);
    }
    return frame;
}

}  // namespace gsec
