#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gsec/lidar_io.hpp"
#include "gsec/model.hpp"
#include "gsec/pillars.hpp"

namespace gsec {

struct SamplingConfig {
    std::string mode = "controlled";  // controlled | uniform | none
    std::size_t budget = 100000;
    double interval = 0.8;
    double range_max = 51.2;
};

struct NormalConfig {
    std::size_t k = 30;
    bool corrected_sign = false;
};

struct LabelConfig {
    std::vector<SemanticClass> ground_classes{40, 44, 48, 49};
    double pillar_threshold = 0.5;
};

struct NetworkConfig {
    int encoder_channels = 64;
    std::array<int, 4> ladder{64, 64, 128, 256};
    bool attention = true;
    bool use_normals = true;
    int cbam_reduction = 16;
};

struct TrainConfig {
    int batch_size = 16;
    int epochs = 20;     // ignored when max_steps > 0
    int max_steps = 0;
    int eval_every = 0;  // 0: evaluate at the end of every epoch
    double lr = 0.003;
    double weight_decay = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double plateau_factor = 0.35;
    int plateau_patience = 3;
    double plateau_threshold = 1e-4;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

struct InferConfig {
    double threshold = 0.5;
};

struct BenchConfig {
    int warmup = 2;
    int repetitions = 5;
};

struct SynthConfig {
    int min_obstacles = 3;
    int max_obstacles = 10;
    bool allow_tilt = true;
    double noise_sigma = 0.01;
};

// Every tunable of the pipeline. Defaults are the published settings where
// one exists. File paths are command arguments, not configuration, so moving data
// around never changes a hash.
struct RunConfig {
    std::uint64_t seed = 0;
    GridConfig grid;
    SamplingConfig sampling;
    NormalConfig normals;
    LabelConfig labels;
    NetworkConfig network;
    TrainConfig train;
    InferConfig infer;
    BenchConfig bench;
    SynthConfig synth;

    void validate() const;

    ModelConfig model_config() const;
    std::set<SemanticClass> ground_class_set() const;

    /// Canonical JSON (sorted keys).
    std::string to_json() const;
    /// Fields absent from `text` keep their defaults; unknown keys are
    /// rejected with InvalidParam.
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    /// FNV-1a of the canonical JSON; the string forms are 16 hex digits.
    std::uint64_t hash_value() const;
    std::string hash() const;
    /// Hash of the fields that shape preprocessed data: seed, grid,
    /// sampling, normals and labels.
    std::uint64_t preprocess_hash_value() const;
    std::string preprocess_hash() const;
};

}  // namespace gsec
