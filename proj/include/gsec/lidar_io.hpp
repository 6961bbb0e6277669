#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "gsec/rng.hpp"

namespace gsec {

// One LiDAR return. Stored as float32 so the in-memory cloud is exactly what
// the KITTI .bin layout holds.
struct Point {
    float x = 0.0F;
    float y = 0.0F;
    float z = 0.0F;
    float intensity = 0.0F;

    friend bool operator==(const Point&, const Point&) = default;
};

using SemanticClass = std::uint16_t;

struct PointCloud {
    std::vector<Point> points;
    // Empty when the cloud carries no annotation; otherwise one per point.
    std::vector<SemanticClass> labels;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_labels() const { return !labels.empty() && labels.size() == points.size(); }

    friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

struct ScanReadResult {
    PointCloud cloud;
    std::size_t dropped_non_finite = 0;
    std::size_t record_count = 0;
    std::vector<std::uint32_t> source_index;  // file record of each kept point
};

/// Reads a KITTI velodyne scan: consecutive little-endian float32 records
/// (x, y, z, intensity). Records with any non-finite field are dropped and
/// counted.
ScanReadResult read_scan(const std::filesystem::path& path);

/// Writes points in the same 16-byte record layout read_scan accepts.
void write_scan(const std::filesystem::path& path, const PointCloud& cloud);

/// Attaches SemanticKITTI labels: one little-endian uint32 per point, the
/// semantic class in the low 16 bits, the instance id in the high 16 bits.
PointCloud read_labels(const std::filesystem::path& path, PointCloud cloud);

/// Label file for a scan whose non-finite records were dropped: the file must
/// match the scan's record count and labels follow the kept points.
PointCloud read_labels(const std::filesystem::path& path, const ScanReadResult& scan);

/// Raw label records as stored on disk, for callers that need instance ids.
std::vector<std::uint32_t> read_label_records(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, const PointCloud& cloud);

constexpr SemanticClass semantic_class_of(std::uint32_t record) {
    return static_cast<SemanticClass>(record & 0xFFFFU);
}

// SemanticKITTI raw ids used by the synthetic generator.
inline constexpr SemanticClass kRoadClass = 40;
inline constexpr SemanticClass kCarClass = 10;

struct BoxObstacle {
    double center_x = 0.0;
    double center_y = 0.0;
    double extent_x = 1.0;
    double extent_y = 1.0;
    double extent_z = 1.0;
    double density = 20.0;  // points per square meter of box surface
};

struct RingPattern {
    int beams = 32;
    double elevation_min_deg = -24.8;
    double elevation_max_deg = 2.0;
    double azimuth_resolution_deg = 0.4;
    double max_range = 80.0;
};

// Parameters of a synthetic labeled scene. The sensor sits at the origin and
// ground is the plane
// z = ground_elevation + tan(tilt_x) * x + tan(tilt_y) * y; boxes rest on it.
class SceneSpec {
public:
    double ground_elevation = -1.73;
    double tilt_x = 0.0;
    double tilt_y = 0.0;
    std::vector<BoxObstacle> obstacles;
    double noise_sigma = 0.0;
    RingPattern rings;
    double half_extent = 51.2;
    SemanticClass ground_class = kRoadClass;
    SemanticClass obstacle_class = kCarClass;

    /// Throws InvalidParam when a field is outside its domain.
    void validate() const;

    double ground_height(double x, double y) const;
};

/// Deterministic in (spec, seed). Ground returns come from ring-pattern ray
/// casting; obstacle returns are sampled on box surfaces at their density.
PointCloud generate_scene(const SceneSpec& spec, std::uint64_t seed);

struct RandomSceneOptions {
    int min_obstacles = 3;
    int max_obstacles = 10;
    bool allow_tilt = true;
    double noise_sigma = 0.01;
    RingPattern rings;
};

/// Draws a SceneSpec: flat or tilted ground with a random set of boxes.
SceneSpec random_scene_spec(Rng& rng, const RandomSceneOptions& options = {});

}  // namespace gsec
