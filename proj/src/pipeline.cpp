#include "gsec/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gsec/error.hpp"
#include "gsec/file_util.hpp"
#include "gsec/geometry.hpp"
#include "gsec/rng.hpp"
#include "gsec/sampling.hpp"

namespace gsec {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

PointCloud synthetic_frame(const SynthConfig& cfg, std::uint64_t seed, std::size_t index, SceneSpec* spec) {
    RandomSceneOptions options;
    options.min_obstacles = cfg.min_obstacles;
    options.max_obstacles = cfg.max_obstacles;
    options.allow_tilt = cfg.allow_tilt;
    options.noise_sigma = cfg.noise_sigma;
    const auto frame_seed = derive_seed(seed, index);
    Rng rng(frame_seed);
    const auto drawn = random_scene_spec(rng, options);
    if (spec != nullptr) {
        *spec = drawn;
    }
    return generate_scene(drawn, derive_seed(frame_seed, 1));
}

PointCloud apply_sampling(const PointCloud& raw, const SamplingConfig& cfg, std::uint64_t seed) {
    if (cfg.mode == "controlled") {
        return undersample(raw, cfg.budget, cfg.interval, seed, cfg.range_max);
    }
    if (cfg.mode == "uniform") {
        return undersample_uniform(raw, cfg.budget, seed);
    }
    if (cfg.mode == "none") {
        return raw;
    }
    throw InvalidParam("unknown sampling mode '" + cfg.mode + "'");
}

PreparedFrame prepare_frame(const PointCloud& raw, const RunConfig& cfg, std::uint64_t frame_seed) {
    PreparedFrame prep;
    auto t0 = Clock::now();
    prep.cloud = apply_sampling(raw, cfg.sampling, derive_seed(frame_seed, 0));
    prep.times.emplace_back("undersample", seconds_since(t0));

    t0 = Clock::now();
    NormalEstimate normals;
    if (!prep.cloud.empty()) {
        NormalOptions options;
        options.k = cfg.normals.k;
        options.corrected_normal_sign = cfg.normals.corrected_sign;
        normals = estimate_normals(prep.cloud, options);
    }
    prep.normal_fallbacks = normals.fallbacks;
    prep.times.emplace_back("normals", seconds_since(t0));

    t0 = Clock::now();
    prep.grid = pillarize(prep.cloud, normals.normals, cfg.grid, derive_seed(frame_seed, 1));
    if (prep.cloud.has_labels()) {
        prep.labels = label_pillars(prep.grid, prep.cloud.labels, cfg.ground_class_set(), cfg.labels.pillar_threshold);
    }
    prep.times.emplace_back("pillarize", seconds_since(t0));
    return prep;
}

PillarFrame to_pillar_frame(const PreparedFrame& prep, std::size_t raw_point_count) {
    PillarFrame frame;
    frame.tensor = to_pillar_tensor(prep.grid);
    if (prep.labels) {
        frame.labels = prep.labels->ground;
    }
    frame.point_count = raw_point_count;
    frame.out_of_range = prep.grid.out_of_range.size();
    return frame;
}

BinaryMap threshold_logits(const nn::Tensor<float>& logits, int frame, double threshold,
                           std::vector<double>* probabilities) {
    logits.require_rank(4, "threshold_logits");
    BinaryMap map(logits.h(), logits.w());
    const float* src = logits.channel(frame, 0);
    if (probabilities != nullptr) {
        probabilities->assign(map.cells.size(), 0.0);
    }
    for (std::size_t i = 0; i < map.cells.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(src[i])));
        map.cells[i] = p > threshold ? 1 : 0;
        if (probabilities != nullptr) {
            (*probabilities)[i] = p;
        }
    }
    return map;
}

Prediction predict(GsecNet<float>& net, const PointCloud& raw, const RunConfig& cfg, double threshold,
                   std::uint64_t frame_seed) {
    if (!(net.config() == cfg.model_config())) {
        throw CheckpointMismatch("network config differs from the run config");
    }
    const bool was_training = net.training();
    net.set_training(false);
    Prediction out;
    auto prep = prepare_frame(raw, cfg, frame_seed);
    out.times = prep.times;

    auto t0 = Clock::now();
    const auto tensor = to_pillar_tensor(prep.grid);
    const auto map = net.encode(make_batch(tensor));
    out.times.emplace_back("encode", seconds_since(t0));

    t0 = Clock::now();
    const auto logits = net.forward_unet(map);
    out.pillar_map = threshold_logits(logits, 0, threshold, &out.cell_probability);
    out.times.emplace_back("forward", seconds_since(t0));

    t0 = Clock::now();
    out.labels = propagate_by_coordinates(out.pillar_map, raw, cfg.grid);
    out.probability.assign(raw.size(), -1.0F);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (const auto cell = cell_of(raw.points[i], cfg.grid)) {
            out.probability[i] = static_cast<float>(out.cell_probability[static_cast<std::size_t>(*cell)]);
        }
    }
    out.times.emplace_back("propagate", seconds_since(t0));
    net.set_training(was_training);
    return out;
}

std::string format_predictions(const PredictionFile& file) {
    if (file.labels.size() != file.probability.size()) {
        throw LengthMismatch("predictions: label and probability counts differ");
    }
    std::string out = "# config_hash=" + file.config_hash + " preprocess_hash=" + file.preprocess_hash + "\n";
    out.reserve(out.size() + file.labels.size() * 20);
    char line[64];
    for (std::size_t i = 0; i < file.labels.size(); ++i) {
        const int n = std::snprintf(line, sizeof line, "%zu %d %.6f\n", i, static_cast<int>(file.labels[i]),
                                    static_cast<double>(file.probability[i]));
        out.append(line, static_cast<std::size_t>(n));
    }
    return out;
}

void write_predictions(const std::filesystem::path& path, const PredictionFile& file) {
    write_file_atomic(path, format_predictions(file));
}

PredictionFile read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open predictions file " + path.string());
    }
    PredictionFile file;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            std::istringstream header(line.substr(1));
            std::string token;
            while (header >> token) {
                if (token.rfind("config_hash=", 0) == 0) {
                    file.config_hash = token.substr(12);
                } else if (token.rfind("preprocess_hash=", 0) == 0) {
                    file.preprocess_hash = token.substr(16);
                }
            }
            continue;
        }
        std::istringstream row(line);
        std::size_t index = 0;
        int label = 0;
        float probability = 0.0F;
        if (!(row >> index >> label >> probability) || index != file.labels.size() || label < -1 || label > 1) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed prediction line");
        }
        file.labels.push_back(static_cast<std::int8_t>(label));
        file.probability.push_back(probability);
    }
    return file;
}

}  // namespace gsec
