#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "gsec/blob.hpp"
#include "gsec/geometry.hpp"
#include "gsec/lidar_io.hpp"

namespace gsec {

// Pillar grid geometry. All ranges are half-open: [min, max).
struct GridConfig {
    double x_min = -51.2;
    double x_max = 51.2;
    double y_min = -51.2;
    double y_max = 51.2;
    double z_min = -4.0;
    double z_max = 4.0;
    double pillar_size = 0.8;
    int rows = 128;
    int cols = 128;
    int max_points = 64;

    void validate() const;
    int cell_count() const { return rows * cols; }
};

/// Row-major cell index (row from y, column from x), or nullopt when the
/// point falls outside the x/y/z ranges.
std::optional<int> cell_of(const Point& p, const GridConfig& cfg);

enum Feature : int { kX, kY, kZ, kIntensity, kXc, kYc, kZc, kXp, kYp, kXn, kYn, kZn, kFeatureCount };

using AugmentedPoint = std::array<double, kFeatureCount>;

struct Pillar {
    int row = 0;
    int col = 0;
    std::size_t precap_count = 0;
    std::vector<std::uint32_t> source;  // input index of each retained point
    std::vector<AugmentedPoint> points;
};

struct PillarGrid {
    GridConfig cfg;
    std::vector<Pillar> pillars;  // occupied pillars, ascending cell index
    std::vector<std::int32_t> cell_to_pillar;   // rows*cols, -1 when vacant
    std::vector<std::int32_t> point_to_pillar;  // per input point, -1 when out of range
    std::vector<std::uint32_t> out_of_range;
};

/// Bins points into pillars, caps each pillar at cfg.max_points by seeded
/// uniform sampling and builds the 12 features of every retained point.
/// Centroid offsets are taken over the retained points. Throws MissingNormals
/// when `normals` does not cover the cloud.
PillarGrid pillarize(const PointCloud& cloud, std::span<const Normal> normals, const GridConfig& cfg,
                     std::uint64_t seed);

struct BinaryMap {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> cells;

    BinaryMap() = default;
    BinaryMap(int r, int c, std::uint8_t fill = 0)
        : rows(r), cols(c), cells(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

    std::uint8_t at(int r, int c) const { return cells[static_cast<std::size_t>(r * cols + c)]; }
    friend bool operator==(const BinaryMap&, const BinaryMap&) = default;
};

struct PillarLabels {
    BinaryMap ground;                   // 1 = ground pillar
    std::vector<double> ground_fraction;  // per cell; 0 for vacant cells
};

// SemanticKITTI raw ids of road, parking, sidewalk and other-ground.
inline const std::set<SemanticClass> kDefaultGroundClasses{40, 44, 48, 49};

/// A pillar is ground when at least `threshold` of its retained points carry
/// a ground class. Vacant pillars are non-ground.
PillarLabels label_pillars(const PillarGrid& grid, std::span<const SemanticClass> labels,
                           const std::set<SemanticClass>& ground_classes = kDefaultGroundClasses,
                           double threshold = 0.5);

inline constexpr std::int8_t kUnscored = -1;

/// Every in-range point takes its pillar's predicted label; points outside
/// the grid ranges are kUnscored.
std::vector<std::int8_t> propagate_to_points(const BinaryMap& prediction, const PillarGrid& grid);

/// Same rule, binning directly from coordinates; covers points that were
/// dropped before pillarization (undersampling, capping).
std::vector<std::int8_t> propagate_by_coordinates(const BinaryMap& prediction, const PointCloud& cloud,
                                                  const GridConfig& cfg);

std::vector<std::uint8_t> ground_mask(std::span<const SemanticClass> labels,
                                      const std::set<SemanticClass>& ground_classes = kDefaultGroundClasses);

// Dense per-frame layout consumed by the pillar encoder: P x max_points x 12
// with zeroed padding slots.
struct PillarTensor {
    int rows = 0;
    int cols = 0;
    int max_points = 0;
    std::vector<float> features;
    std::vector<std::int32_t> counts;
    std::vector<std::array<std::int32_t, 2>> coords;  // (row, col)

    std::size_t pillar_count() const { return counts.size(); }
};

PillarTensor to_pillar_tensor(const PillarGrid& grid);

/// A preprocessed frame as stored on disk.
struct PillarFrame {
    PillarTensor tensor;
    std::optional<BinaryMap> labels;
    std::size_t point_count = 0;
    std::size_t out_of_range = 0;
};

Blob pillar_frame_to_blob(const PillarFrame& frame, std::uint64_t seed, std::uint64_t config_hash);
PillarFrame pillar_frame_from_blob(const Blob& blob);

}  // namespace gsec
