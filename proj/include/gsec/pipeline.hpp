#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gsec/config.hpp"
#include "gsec/metrics.hpp"
#include "gsec/model.hpp"
#include "gsec/pillars.hpp"

namespace gsec {

// One scan taken through undersampling, normal estimation and
// pillarization.
struct PreparedFrame {
    PointCloud cloud;  // after undersampling
    std::size_t normal_fallbacks = 0;
    PillarGrid grid;
    std::optional<PillarLabels> labels;  // when the cloud is labeled
    StageTimes times;                    // undersample, normals, pillarize
};

/// Scene `index` of a synthetic dataset seeded with `seed`. Independent of
/// how many scenes are generated alongside it.
PointCloud synthetic_frame(const SynthConfig& cfg, std::uint64_t seed, std::size_t index,
                           SceneSpec* spec = nullptr);

PointCloud apply_sampling(const PointCloud& raw, const SamplingConfig& cfg, std::uint64_t seed);

PreparedFrame prepare_frame(const PointCloud& raw, const RunConfig& cfg, std::uint64_t frame_seed);

PillarFrame to_pillar_frame(const PreparedFrame& prep, std::size_t raw_point_count);

struct Prediction {
    BinaryMap pillar_map;
    std::vector<double> cell_probability;
    std::vector<std::int8_t> labels;  // per input point; kUnscored outside the grid
    std::vector<float> probability;   // per input point; -1 when unscored
    StageTimes times;                 // prepare stages + encode, forward, propagate
};

/// Ground iff sigmoid(logit) > threshold.
BinaryMap threshold_logits(const nn::Tensor<float>& logits, int frame, double threshold,
                           std::vector<double>* probabilities = nullptr);

/// Full inference on one scan: every input point receives the label of the
/// cell it falls in, including points removed by undersampling or capping.
Prediction predict(GsecNet<float>& net, const PointCloud& raw, const RunConfig& cfg, double threshold,
                   std::uint64_t frame_seed);

// Text predictions: a "# config_hash=... preprocess_hash=..." header, then
// one "index label probability" line per scan record.
struct PredictionFile {
    std::string config_hash;
    std::string preprocess_hash;
    std::vector<std::int8_t> labels;
    std::vector<float> probability;
};

std::string format_predictions(const PredictionFile& file);
void write_predictions(const std::filesystem::path& path, const PredictionFile& file);
PredictionFile read_predictions(const std::filesystem::path& path);

}  // namespace gsec
