#include "gsec/lidar_io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "gsec/error.hpp"
#include "gsec/file_util.hpp"

namespace gsec {

namespace {

constexpr std::size_t kScanRecordBytes = 16;
constexpr std::size_t kLabelRecordBytes = 4;

bool finite(const Point& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z) && std::isfinite(p.intensity);
}

}  // namespace

ScanReadResult read_scan(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() % kScanRecordBytes != 0) {
        throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                          " is not a multiple of 16 bytes");
    }
    ScanReadResult result;
    const std::size_t n = bytes.size() / kScanRecordBytes;
    result.record_count = n;
    result.cloud.points.reserve(n);
    result.source_index.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::array<float, 4> v{};
        std::memcpy(v.data(), bytes.data() + i * kScanRecordBytes, kScanRecordBytes);
        const Point p{v[0], v[1], v[2], v[3]};
        if (finite(p)) {
            result.cloud.points.push_back(p);
            result.source_index.push_back(static_cast<std::uint32_t>(i));
        } else {
            ++result.dropped_non_finite;
        }
    }
    return result;
}

void write_scan(const std::filesystem::path& path, const PointCloud& cloud) {
    std::vector<std::byte> bytes(cloud.size() * kScanRecordBytes);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const std::array<float, 4> v{p.x, p.y, p.z, p.intensity};
        std::memcpy(bytes.data() + i * kScanRecordBytes, v.data(), kScanRecordBytes);
    }
    write_file_atomic(path, bytes);
}

std::vector<std::uint32_t> read_label_records(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() % kLabelRecordBytes != 0) {
        throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                          " is not a multiple of 4 bytes");
    }
    std::vector<std::uint32_t> records(bytes.size() / kLabelRecordBytes);
    std::memcpy(records.data(), bytes.data(), bytes.size());
    return records;
}

PointCloud read_labels(const std::filesystem::path& path, PointCloud cloud) {
    const auto records = read_label_records(path);
    if (records.size() != cloud.size()) {
        throw LengthMismatch(path.string() + ": " + std::to_string(records.size()) + " labels for " +
                             std::to_string(cloud.size()) + " points");
    }
    cloud.labels.resize(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        cloud.labels[i] = semantic_class_of(records[i]);
    }
    return cloud;
}

PointCloud read_labels(const std::filesystem::path& path, const ScanReadResult& scan) {
    const auto records = read_label_records(path);
    if (records.size() != scan.record_count) {
        throw LengthMismatch(path.string() + ": " + std::to_string(records.size()) + " labels for " +
                             std::to_string(scan.record_count) + " scan records");
    }
    PointCloud cloud = scan.cloud;
    cloud.labels.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        cloud.labels[i] = semantic_class_of(records[scan.source_index[i]]);
    }
    return cloud;
}

void write_labels(const std::filesystem::path& path, const PointCloud& cloud) {
    if (!cloud.has_labels()) {
        throw NoLabels("cloud has no labels to write");
    }
    std::vector<std::uint32_t> records(cloud.labels.begin(), cloud.labels.end());
    write_file_atomic(path, std::as_bytes(std::span(records)));
}

void SceneSpec::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw InvalidParam(std::string("SceneSpec: ") + what);
        }
    };
    require(std::isfinite(ground_elevation), "ground elevation must be finite");
    require(std::abs(tilt_x) < M_PI / 4 && std::abs(tilt_y) < M_PI / 4, "tilt must be below 45 degrees");
    require(noise_sigma >= 0.0, "noise sigma must be >= 0");
    require(rings.beams >= 1, "beam count must be >= 1");
    require(rings.azimuth_resolution_deg > 0.0, "azimuth resolution must be > 0");
    require(rings.elevation_min_deg <= rings.elevation_max_deg, "elevation range inverted");
    require(rings.max_range > 0.0, "max range must be > 0");
    require(half_extent > 0.0, "half extent must be > 0");
    for (const auto& box : obstacles) {
        require(box.density > 0.0, "obstacle density must be > 0");
        require(box.extent_x > 0.0 && box.extent_y > 0.0 && box.extent_z > 0.0, "obstacle extent must be > 0");
    }
}

double SceneSpec::ground_height(double x, double y) const {
    return ground_elevation + std::tan(tilt_x) * x + std::tan(tilt_y) * y;
}

namespace {

struct Aabb {
    std::array<double, 3> lo;
    std::array<double, 3> hi;
};

Aabb box_bounds(const SceneSpec& spec, const BoxObstacle& box) {
    const double base = spec.ground_height(box.center_x, box.center_y);
    return {{box.center_x - box.extent_x / 2, box.center_y - box.extent_y / 2, base},
            {box.center_x + box.extent_x / 2, box.center_y + box.extent_y / 2, base + box.extent_z}};
}

// Slab test for a ray from the origin; returns the entry distance or +inf.
double ray_box(const std::array<double, 3>& dir, const Aabb& box) {
    double t_near = 0.0;
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-15) {
            if (0.0 < box.lo[a] || 0.0 > box.hi[a]) {
                return std::numeric_limits<double>::infinity();
            }
            continue;
        }
        double t0 = box.lo[a] / dir[a];
        double t1 = box.hi[a] / dir[a];
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
        if (t_near > t_far) {
            return std::numeric_limits<double>::infinity();
        }
    }
    return t_near > 0.0 ? t_near : std::numeric_limits<double>::infinity();
}

bool inside_footprint(const Aabb& box, double x, double y) {
    return x >= box.lo[0] && x <= box.hi[0] && y >= box.lo[1] && y <= box.hi[1];
}

}  // namespace

PointCloud generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    PointCloud cloud;

    std::vector<Aabb> boxes;
    boxes.reserve(spec.obstacles.size());
    for (const auto& box : spec.obstacles) {
        boxes.push_back(box_bounds(spec, box));
    }

    const double slope_x = std::tan(spec.tilt_x);
    const double slope_y = std::tan(spec.tilt_y);
    const double h = spec.half_extent;
    auto in_square = [h](double x, double y) { return x >= -h && x < h && y >= -h && y < h; };
    auto emit = [&](double x, double y, double z, double intensity, SemanticClass label) {
        if (spec.noise_sigma > 0.0) {
            x += spec.noise_sigma * standard_normal(rng);
            y += spec.noise_sigma * standard_normal(rng);
            z += spec.noise_sigma * standard_normal(rng);
        }
        if (!in_square(x, y)) {
            return;
        }
        cloud.points.push_back(
            {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z), static_cast<float>(intensity)});
        cloud.labels.push_back(label);
    };

    // Rotating sensor: every beam sweeps the full azimuth circle.
    const auto& rp = spec.rings;
    const int azimuth_steps = static_cast<int>(std::lround(360.0 / rp.azimuth_resolution_deg));
    for (int b = 0; b < rp.beams; ++b) {
        const double frac = rp.beams == 1 ? 0.0 : static_cast<double>(b) / (rp.beams - 1);
        const double elevation = (rp.elevation_min_deg + frac * (rp.elevation_max_deg - rp.elevation_min_deg)) *
                                 M_PI / 180.0;
        for (int a = 0; a < azimuth_steps; ++a) {
            const double azimuth = a * rp.azimuth_resolution_deg * M_PI / 180.0;
            const std::array<double, 3> dir{std::cos(elevation) * std::cos(azimuth),
                                            std::cos(elevation) * std::sin(azimuth), std::sin(elevation)};
            double t_ground = std::numeric_limits<double>::infinity();
            const double denom = dir[2] - slope_x * dir[0] - slope_y * dir[1];
            if (std::abs(denom) > 1e-12) {
                const double t = spec.ground_elevation / denom;
                if (t > 0.0) {
                    t_ground = t;
                }
            }
            double t_box = std::numeric_limits<double>::infinity();
            for (const auto& box : boxes) {
                t_box = std::min(t_box, ray_box(dir, box));
            }
            const double t_hit = std::min(t_ground, t_box);
            if (!std::isfinite(t_hit) || t_hit > rp.max_range) {
                continue;
            }
            const double x = t_hit * dir[0];
            const double y = t_hit * dir[1];
            if (t_box < t_ground) {
                emit(x, y, t_hit * dir[2], uniform(rng, 0.2, 0.9), spec.obstacle_class);
            } else {
                bool covered = false;
                for (const auto& box : boxes) {
                    covered = covered || inside_footprint(box, x, y);
                }
                if (!covered) {
                    // Evaluate z on the plane so flat ground is exact.
                    emit(x, y, spec.ground_height(x, y), uniform(rng, 0.1, 0.5), spec.ground_class);
                }
            }
        }
    }

    // Surface samples on the four sides and the top of each box.
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& box = boxes[i];
        const double dx = box.hi[0] - box.lo[0];
        const double dy = box.hi[1] - box.lo[1];
        const double dz = box.hi[2] - box.lo[2];
        const std::array<double, 5> areas{dx * dz, dx * dz, dy * dz, dy * dz, dx * dy};
        for (int face = 0; face < 5; ++face) {
            const auto count = static_cast<std::size_t>(std::lround(areas[face] * spec.obstacles[i].density));
            for (std::size_t k = 0; k < count; ++k) {
                const double u = uniform01(rng);
                const double v = uniform01(rng);
                double x = 0.0;
                double y = 0.0;
                double z = 0.0;
                switch (face) {
                    case 0: x = box.lo[0] + u * dx; y = box.lo[1]; z = box.lo[2] + v * dz; break;
                    case 1: x = box.lo[0] + u * dx; y = box.hi[1]; z = box.lo[2] + v * dz; break;
                    case 2: x = box.lo[0]; y = box.lo[1] + u * dy; z = box.lo[2] + v * dz; break;
                    case 3: x = box.hi[0]; y = box.lo[1] + u * dy; z = box.lo[2] + v * dz; break;
                    default: x = box.lo[0] + u * dx; y = box.lo[1] + v * dy; z = box.hi[2]; break;
                }
                emit(x, y, z, uniform(rng, 0.2, 0.9), spec.obstacle_class);
            }
        }
    }
    return cloud;
}

SceneSpec random_scene_spec(Rng& rng, const RandomSceneOptions& options) {
    SceneSpec spec;
    spec.rings = options.rings;
    spec.noise_sigma = options.noise_sigma;
    if (options.allow_tilt && uniform01(rng) < 0.5) {
        const double max_tilt = 3.0 * M_PI / 180.0;
        spec.tilt_x = uniform(rng, -max_tilt, max_tilt);
        spec.tilt_y = uniform(rng, -max_tilt, max_tilt);
    }
    const auto span = static_cast<std::uint64_t>(options.max_obstacles - options.min_obstacles + 1);
    const int count = options.min_obstacles + static_cast<int>(uniform_index(rng, span));
    for (int i = 0; i < count; ++i) {
        BoxObstacle box;
        const double radius = uniform(rng, 6.0, 35.0);
        const double angle = uniform(rng, 0.0, 2.0 * M_PI);
        box.center_x = radius * std::cos(angle);
        box.center_y = radius * std::sin(angle);
        box.extent_x = uniform(rng, 1.5, 5.0);
        box.extent_y = uniform(rng, 1.5, 3.0);
        box.extent_z = uniform(rng, 1.2, 3.0);
        box.density = uniform(rng, 20.0, 40.0);
        spec.obstacles.push_back(box);
    }
    return spec;
}

}  // namespace gsec
