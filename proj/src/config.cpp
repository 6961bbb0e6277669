#include "gsec/config.hpp"

#include <nlohmann/json.hpp>

#include "gsec/error.hpp"
#include "gsec/file_util.hpp"

namespace gsec {

using nlohmann::json;

namespace {

json grid_json(const GridConfig& g) {
    return {{"x_min", g.x_min}, {"x_max", g.x_max},         {"y_min", g.y_min}, {"y_max", g.y_max},
            {"z_min", g.z_min}, {"z_max", g.z_max},         {"pillar_size", g.pillar_size},
            {"rows", g.rows},   {"cols", g.cols},           {"max_points", g.max_points}};
}

json sections_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["grid"] = grid_json(c.grid);
    j["sampling"] = {{"mode", c.sampling.mode},
                     {"budget", c.sampling.budget},
                     {"interval", c.sampling.interval},
                     {"range_max", c.sampling.range_max}};
    j["normals"] = {{"k", c.normals.k}, {"corrected_sign", c.normals.corrected_sign}};
    j["labels"] = {{"ground_classes", c.labels.ground_classes}, {"pillar_threshold", c.labels.pillar_threshold}};
    j["network"] = {{"encoder_channels", c.network.encoder_channels},
                    {"ladder", c.network.ladder},
                    {"attention", c.network.attention},
                    {"use_normals", c.network.use_normals},
                    {"cbam_reduction", c.network.cbam_reduction}};
    const auto& t = c.train;
    j["train"] = {{"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"max_steps", t.max_steps},
                  {"eval_every", t.eval_every},
                  {"lr", t.lr},
                  {"weight_decay", t.weight_decay},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"eps", t.eps},
                  {"plateau_factor", t.plateau_factor},
                  {"plateau_patience", t.plateau_patience},
                  {"plateau_threshold", t.plateau_threshold},
                  {"focal_alpha", t.focal_alpha},
                  {"focal_gamma", t.focal_gamma}};
    j["infer"] = {{"threshold", c.infer.threshold}};
    j["bench"] = {{"warmup", c.bench.warmup}, {"repetitions", c.bench.repetitions}};
    j["synth"] = {{"min_obstacles", c.synth.min_obstacles},
                  {"max_obstacles", c.synth.max_obstacles},
                  {"allow_tilt", c.synth.allow_tilt},
                  {"noise_sigma", c.synth.noise_sigma}};
    return j;
}

// Copies j[key] into `out` when present.
template <typename V>
void take(const json& j, const char* key, V& out) {
    if (const auto it = j.find(key); it != j.end()) {
        out = it->get<V>();
    }
}

void reject_unknown(const json& j, const json& reference, const std::string& where) {
    if (!j.is_object()) {
        throw InvalidParam("config: '" + where + "' must be an object");
    }
    for (const auto& item : j.items()) {
        if (!reference.contains(item.key())) {
            throw InvalidParam("config: unknown key '" + where + item.key() + "'");
        }
        if (reference[item.key()].is_object()) {
            reject_unknown(item.value(), reference[item.key()], where + item.key() + ".");
        }
    }
}

}  // namespace

void RunConfig::validate() const {
    grid.validate();
    model_config().validate();
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw InvalidParam("config: " + what);
        }
    };
    require(sampling.mode == "controlled" || sampling.mode == "uniform" || sampling.mode == "none",
            "sampling.mode must be controlled, uniform or none");
    require(sampling.budget > 0, "sampling.budget must be > 0");
    require(sampling.interval > 0.0, "sampling.interval must be > 0");
    require(sampling.range_max > 0.0, "sampling.range_max must be > 0");
    require(normals.k >= 3, "normals.k must be >= 3");
    require(!labels.ground_classes.empty(), "labels.ground_classes must not be empty");
    require(labels.pillar_threshold > 0.0 && labels.pillar_threshold <= 1.0,
            "labels.pillar_threshold must be in (0, 1]");
    require(train.batch_size >= 1, "train.batch_size must be >= 1");
    require(train.epochs >= 1, "train.epochs must be >= 1");
    require(train.max_steps >= 0 && train.eval_every >= 0, "train.max_steps and train.eval_every must be >= 0");
    require(train.lr > 0.0 && train.weight_decay >= 0.0, "train.lr must be > 0 and weight decay >= 0");
    require(train.plateau_factor > 0.0 && train.plateau_factor < 1.0, "train.plateau_factor must be in (0, 1)");
    require(train.plateau_patience >= 1, "train.plateau_patience must be >= 1");
    require(train.focal_alpha >= 0.0 && train.focal_alpha <= 1.0, "train.focal_alpha must be in [0, 1]");
    require(train.focal_gamma >= 0.0, "train.focal_gamma must be >= 0");
    require(infer.threshold >= 0.0 && infer.threshold <= 1.0, "infer.threshold must be in [0, 1]");
    require(bench.warmup >= 0 && bench.repetitions >= 1, "bench.repetitions must be >= 1");
    require(synth.min_obstacles >= 0 && synth.max_obstacles >= synth.min_obstacles,
            "synth obstacle range is empty");
    require(synth.noise_sigma >= 0.0, "synth.noise_sigma must be >= 0");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.encoder_channels = network.encoder_channels;
    m.rows = grid.rows;
    m.cols = grid.cols;
    m.max_points = grid.max_points;
    m.ladder = network.ladder;
    m.attention = network.attention;
    m.use_normals = network.use_normals;
    m.cbam_reduction = network.cbam_reduction;
    return m;
}

std::set<SemanticClass> RunConfig::ground_class_set() const {
    return {labels.ground_classes.begin(), labels.ground_classes.end()};
}

std::string RunConfig::to_json() const {
    return sections_json(*this).dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    RunConfig c;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidParam(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j, sections_json(c), "");
    try {
        take(j, "seed", c.seed);
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            take(g, "x_min", c.grid.x_min);
            take(g, "x_max", c.grid.x_max);
            take(g, "y_min", c.grid.y_min);
            take(g, "y_max", c.grid.y_max);
            take(g, "z_min", c.grid.z_min);
            take(g, "z_max", c.grid.z_max);
            take(g, "pillar_size", c.grid.pillar_size);
            take(g, "rows", c.grid.rows);
            take(g, "cols", c.grid.cols);
            take(g, "max_points", c.grid.max_points);
        }
        if (j.contains("sampling")) {
            const auto& s = j["sampling"];
            take(s, "mode", c.sampling.mode);
            take(s, "budget", c.sampling.budget);
            take(s, "interval", c.sampling.interval);
            take(s, "range_max", c.sampling.range_max);
        }
        if (j.contains("normals")) {
            take(j["normals"], "k", c.normals.k);
            take(j["normals"], "corrected_sign", c.normals.corrected_sign);
        }
        if (j.contains("labels")) {
            take(j["labels"], "ground_classes", c.labels.ground_classes);
            take(j["labels"], "pillar_threshold", c.labels.pillar_threshold);
        }
        if (j.contains("network")) {
            const auto& n = j["network"];
            take(n, "encoder_channels", c.network.encoder_channels);
            take(n, "ladder", c.network.ladder);
            take(n, "attention", c.network.attention);
            take(n, "use_normals", c.network.use_normals);
            take(n, "cbam_reduction", c.network.cbam_reduction);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            take(t, "batch_size", c.train.batch_size);
            take(t, "epochs", c.train.epochs);
            take(t, "max_steps", c.train.max_steps);
            take(t, "eval_every", c.train.eval_every);
            take(t, "lr", c.train.lr);
            take(t, "weight_decay", c.train.weight_decay);
            take(t, "beta1", c.train.beta1);
            take(t, "beta2", c.train.beta2);
            take(t, "eps", c.train.eps);
            take(t, "plateau_factor", c.train.plateau_factor);
            take(t, "plateau_patience", c.train.plateau_patience);
            take(t, "plateau_threshold", c.train.plateau_threshold);
            take(t, "focal_alpha", c.train.focal_alpha);
            take(t, "focal_gamma", c.train.focal_gamma);
        }
        if (j.contains("infer")) {
            take(j["infer"], "threshold", c.infer.threshold);
        }
        if (j.contains("bench")) {
            take(j["bench"], "warmup", c.bench.warmup);
            take(j["bench"], "repetitions", c.bench.repetitions);
        }
        if (j.contains("synth")) {
            const auto& s = j["synth"];
            take(s, "min_obstacles", c.synth.min_obstacles);
            take(s, "max_obstacles", c.synth.max_obstacles);
            take(s, "allow_tilt", c.synth.allow_tilt);
            take(s, "noise_sigma", c.synth.noise_sigma);
        }
    } catch (const json::exception& e) {
        throw InvalidParam(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return from_json(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::uint64_t RunConfig::hash_value() const {
    return fnv1a(sections_json(*this).dump());
}

std::string RunConfig::hash() const {
    return hex64(hash_value());
}

std::uint64_t RunConfig::preprocess_hash_value() const {
    const auto all = sections_json(*this);
    json j;
    for (const char* key : {"seed", "grid", "sampling", "normals", "labels"}) {
        j[key] = all[key];
    }
    return fnv1a(j.dump());
}

std::string RunConfig::preprocess_hash() const {
    return hex64(preprocess_hash_value());
}

}  // namespace gsec
