#include "gsec/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "gsec/config.hpp"
#include "gsec/error.hpp"
#include "gsec/file_util.hpp"
#include "gsec/lidar_io.hpp"
#include "gsec/metrics.hpp"
#include "gsec/model.hpp"
#include "gsec/nn/complexity.hpp"
#include "gsec/pipeline.hpp"
#include "gsec/rng.hpp"
#include "gsec/train.hpp"

namespace gsec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Published reference totals, printed next to the computed ones.
constexpr double kReferenceParams = 0.27e6;
constexpr double kReferenceMacs = 1.47e9;

struct Context {
    RunConfig cfg;
    std::ostream& out;
    std::ostream& err;
    bool force = false;
    int jobs = 1;
};

std::string frame_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", index);
    return buf;
}

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Runs fn(i) for i in [0, n) on `jobs` threads. The first exception is
// rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

std::vector<fs::path> list_files(const fs::path& path, const std::string& extension) {
    if (!fs::exists(path)) {
        throw IoError("no such file or directory: " + path.string());
    }
    if (!fs::is_directory(path)) {
        return {path};
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.is_regular_file() && entry.path().extension() == extension) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw IoError("no " + extension + " files in " + path.string());
    }
    return files;
}

void require_hash(const Context& ctx, const std::string& what, const std::string& found,
                  const std::string& expected) {
    if (found == expected) {
        return;
    }
    const std::string msg = what + " was produced with preprocessing config " + found + ", current config is " +
                            expected;
    if (!ctx.force) {
        throw ConfigConflict(msg + " (pass --force to override)");
    }
    ctx.err << "warning: " << msg << '\n';
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    fs::path out;
    std::size_t scenes = 8;
};

int cmd_synth(Context& ctx, const SynthArgs& args) {
    const auto& cfg = ctx.cfg;
    std::vector<json> entries(args.scenes);
    parallel_for(args.scenes, ctx.jobs, [&](std::size_t i) {
        SceneSpec spec;
        const auto cloud = synthetic_frame(cfg.synth, cfg.seed, i, &spec);
        const auto name = frame_name(i);
        write_scan(args.out / "velodyne" / (name + ".bin"), cloud);
        write_labels(args.out / "labels" / (name + ".label"), cloud);
        std::size_t ground = 0;
        for (const auto l : cloud.labels) {
            ground += l == spec.ground_class ? 1 : 0;
        }
        entries[i] = {{"name", name},
                      {"points", cloud.size()},
                      {"ground_points", ground},
                      {"obstacles", spec.obstacles.size()},
                      {"tilt_x", spec.tilt_x},
                      {"tilt_y", spec.tilt_y}};
    });
    json manifest;
    manifest["kind"] = "synth";
    manifest["config_hash"] = cfg.hash();
    manifest["seed"] = cfg.seed;
    manifest["scenes"] = entries;
    write_file_atomic(args.out / "manifest.json", manifest.dump(2) + "\n");
    ctx.out << "wrote " << args.scenes << " scenes to " << args.out.string() << " (config " << cfg.hash() << ")\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
    fs::path scans;
    fs::path labels;
    fs::path out;
};

// A synth output directory holds velodyne/ and labels/ side by side.
void resolve_dataset_dirs(fs::path& scans, fs::path& labels) {
    if (fs::is_directory(scans / "velodyne")) {
        if (labels.empty() && fs::is_directory(scans / "labels")) {
            labels = scans / "labels";
        }
        scans = scans / "velodyne";
    }
}

int cmd_preprocess(Context& ctx, PreprocessArgs args) {
    resolve_dataset_dirs(args.scans, args.labels);
    const auto scans = list_files(args.scans, ".bin");
    const auto& cfg = ctx.cfg;
    std::vector<std::string> summary(scans.size());
    parallel_for(scans.size(), ctx.jobs, [&](std::size_t i) {
        const auto scan = read_scan(scans[i]);
        PointCloud cloud = scan.cloud;
        if (!args.labels.empty()) {
            const auto label_path =
                fs::is_directory(args.labels) ? args.labels / (scans[i].stem().string() + ".label") : args.labels;
            cloud = read_labels(label_path, scan);
        }
        const auto prep = prepare_frame(cloud, cfg, derive_seed(cfg.seed, i));
        const auto frame = to_pillar_frame(prep, scan.record_count);
        pillar_frame_to_blob(frame, derive_seed(cfg.seed, i), cfg.preprocess_hash_value())
            .save(args.out / (scans[i].stem().string() + ".pillars"));
        std::ostringstream line;
        line << scans[i].stem().string() << ": " << scan.record_count << " records, " << scan.dropped_non_finite
             << " non-finite, " << prep.cloud.size() << " after sampling, " << frame.tensor.pillar_count()
             << " pillars, " << frame.out_of_range << " out of range, " << prep.normal_fallbacks
             << " normal fallbacks";
        summary[i] = line.str();
    });
    for (const auto& s : summary) {
        ctx.out << s << '\n';
    }
    json manifest;
    manifest["kind"] = "preprocess";
    manifest["config_hash"] = cfg.hash();
    manifest["preprocess_hash"] = cfg.preprocess_hash();
    manifest["frames"] = scans.size();
    write_file_atomic(args.out / "manifest.json", manifest.dump(2) + "\n");
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    fs::path data;
    fs::path out;
    fs::path log;
};

int cmd_train(Context& ctx, const TrainArgs& args) {
    const auto& cfg = ctx.cfg;
    const auto files = list_files(args.data, ".pillars");
    std::vector<TrainSample> data;
    for (const auto& f : files) {
        const auto blob = Blob::load(f);
        require_hash(ctx, f.filename().string(), hex64(blob.config_hash), cfg.preprocess_hash());
        auto frame = pillar_frame_from_blob(blob);
        if (!frame.labels) {
            throw NoLabels(f.string() + " carries no pillar labels");
        }
        data.push_back({std::move(frame.tensor), std::move(*frame.labels)});
    }

    const auto model_cfg = cfg.model_config();
    GsecNet<float> net(model_cfg);
    net.init(derive_seed(cfg.seed, 0x6e6574));

    TrainOptions options;
    options.batch_size = cfg.train.batch_size;
    options.epochs = cfg.train.epochs;
    options.max_steps = cfg.train.max_steps;
    options.eval_every = cfg.train.eval_every;
    options.adam = {cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.eps, cfg.train.weight_decay};
    options.plateau = {cfg.train.plateau_factor, cfg.train.plateau_patience, cfg.train.plateau_threshold};
    options.focal = {cfg.train.focal_alpha, cfg.train.focal_gamma};
    options.threshold = cfg.infer.threshold;
    options.seed = derive_seed(cfg.seed, 0x747261696e);

    std::string log = json{{"kind", "config"},
                           {"config_hash", cfg.hash()},
                           {"preprocess_hash", cfg.preprocess_hash()},
                           {"variant", model_cfg.variant()},
                           {"samples", data.size()}}
                          .dump() +
                      "\n";
    options.on_record = [&](const TrainRecord& r) {
        log += record_to_json(r) + "\n";
        if (r.kind == "eval") {
            ctx.out << "step " << r.step << "  loss " << fixed(r.loss) << "  lr " << fixed(r.lr, 6) << "  pillar-mIoU "
                    << format_score(r.miou) << '\n';
        }
    };
    const auto result = train(net, data, options);
    restore_state(net, result.best_state);

    CheckpointMeta meta;
    meta.config_hash = cfg.hash_value();
    meta.preprocess_hash = cfg.preprocess_hash();
    meta.seed = cfg.seed;
    meta.best_miou = result.best_miou;
    save_checkpoint(args.out, net, meta);
    const auto log_path = args.log.empty() ? fs::path(args.out.string() + ".log.jsonl") : args.log;
    write_file_atomic(log_path, log);
    ctx.out << "variant " << model_cfg.variant() << ": " << result.steps << " steps, " << result.epochs
            << " epochs, best pillar-mIoU " << fixed(result.best_miou) << " at step " << result.best_step << '\n';
    ctx.out << "checkpoint " << args.out.string() << ", log " << log_path.string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
    fs::path scan;
    fs::path checkpoint;
    fs::path out;
};

// The checkpoint decides the network; the run config decides preprocessing.
RunConfig config_for_checkpoint(const Context& ctx, const fs::path& checkpoint) {
    RunConfig cfg = ctx.cfg;
    const auto model = checkpoint_model_config(checkpoint);
    if (model.rows != cfg.grid.rows || model.cols != cfg.grid.cols || model.max_points != cfg.grid.max_points) {
        throw CheckpointMismatch("checkpoint grid " + std::to_string(model.rows) + "x" + std::to_string(model.cols) +
                                 " differs from the configured grid");
    }
    cfg.network.encoder_channels = model.encoder_channels;
    cfg.network.ladder = model.ladder;
    cfg.network.attention = model.attention;
    cfg.network.use_normals = model.use_normals;
    cfg.network.cbam_reduction = model.cbam_reduction;
    return cfg;
}

int cmd_infer(Context& ctx, const InferArgs& args) {
    const auto cfg = config_for_checkpoint(ctx, args.checkpoint);
    GsecNet<float> net(cfg.model_config());
    const auto meta = load_checkpoint(args.checkpoint, net);
    require_hash(ctx, "checkpoint", meta.preprocess_hash, cfg.preprocess_hash());

    const auto scan = read_scan(args.scan);
    const auto prediction = predict(net, scan.cloud, cfg, cfg.infer.threshold, derive_seed(cfg.seed, 0));

    PredictionFile file;
    file.config_hash = cfg.hash();
    file.preprocess_hash = cfg.preprocess_hash();
    file.labels.assign(scan.record_count, kUnscored);
    file.probability.assign(scan.record_count, -1.0F);
    std::size_t ground = 0;
    std::size_t unscored = scan.record_count - scan.cloud.size();
    for (std::size_t i = 0; i < scan.cloud.size(); ++i) {
        const auto r = scan.source_index[i];
        file.labels[r] = prediction.labels[i];
        file.probability[r] = prediction.probability[i];
        ground += prediction.labels[i] == 1 ? 1 : 0;
        unscored += prediction.labels[i] == kUnscored ? 1 : 0;
    }
    write_predictions(args.out, file);
    ctx.out << args.scan.filename().string() << ": " << scan.record_count << " points, " << ground << " ground, "
            << unscored << " unscored (" << scan.dropped_non_finite << " non-finite)\n";
    double total = 0.0;
    for (const auto& [stage, seconds] : prediction.times) {
        ctx.out << "  " << stage << " " << fixed(seconds * 1e3, 3) << " ms\n";
        total += seconds;
    }
    ctx.out << "  total " << fixed(total * 1e3, 3) << " ms\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    fs::path pred;
    fs::path labels;
    fs::path scan;
    fs::path json_out;
};

// Predicted labels per scan record: a text predictions file, or a label file
// whose ground classes count as ground predictions.
std::vector<std::int8_t> load_predicted(Context& ctx, const fs::path& path) {
    if (path.extension() == ".label") {
        const auto classes = ctx.cfg.ground_class_set();
        std::vector<std::int8_t> out;
        for (const auto r : read_label_records(path)) {
            out.push_back(classes.contains(semantic_class_of(r)) ? 1 : 0);
        }
        return out;
    }
    auto file = read_predictions(path);
    require_hash(ctx, path.filename().string(), file.preprocess_hash, ctx.cfg.preprocess_hash());
    return file.labels;
}

// Cells whose in-range points are at least `threshold` positive; cells
// without points stay negative.
BinaryMap majority_map(const PointCloud& cloud, std::span<const std::int8_t> positive, const GridConfig& grid,
                       double threshold) {
    std::vector<std::size_t> total(static_cast<std::size_t>(grid.cell_count()), 0);
    std::vector<std::size_t> hits(total.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (positive[i] < 0) {
            continue;
        }
        if (const auto cell = cell_of(cloud.points[i], grid)) {
            ++total[static_cast<std::size_t>(*cell)];
            hits[static_cast<std::size_t>(*cell)] += positive[i] == 1 ? 1 : 0;
        }
    }
    BinaryMap map(grid.rows, grid.cols);
    for (std::size_t c = 0; c < total.size(); ++c) {
        map.cells[c] = total[c] > 0 && static_cast<double>(hits[c]) >= threshold * static_cast<double>(total[c]);
    }
    return map;
}

json scores_json(const ConfusionCounts& c) {
    const auto s = scores(c);
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}, {"accuracy", s.accuracy},
            {"miou", opt(s.iou)}, {"f1", opt(s.f1)}};
}

void print_scores(std::ostream& os, const std::string& level, const ConfusionCounts& c) {
    const auto s = scores(c);
    char line[200];
    std::snprintf(line, sizeof line, "%-8s %10llu %10llu %10llu %10llu %10s %12s %10s\n", level.c_str(),
                  static_cast<unsigned long long>(c.tp), static_cast<unsigned long long>(c.tn),
                  static_cast<unsigned long long>(c.fp), static_cast<unsigned long long>(c.fn),
                  fixed(s.accuracy).c_str(), format_score(s.iou).c_str(), format_score(s.f1).c_str());
    os << line;
}

int cmd_eval(Context& ctx, const EvalArgs& args) {
    const auto predicted = load_predicted(ctx, args.pred);
    const auto records = read_label_records(args.labels);
    if (records.size() != predicted.size()) {
        throw LengthMismatch("predictions cover " + std::to_string(predicted.size()) + " points, labels " +
                             std::to_string(records.size()));
    }
    const auto classes = ctx.cfg.ground_class_set();
    std::vector<std::int8_t> truth(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        truth[i] = classes.contains(semantic_class_of(records[i])) ? 1 : 0;
    }

    json report;
    report["config_hash"] = ctx.cfg.hash();
    std::size_t excluded = 0;
    std::optional<ConfusionCounts> pillar_counts;
    if (!args.scan.empty()) {
        const auto scan = read_scan(args.scan);
        if (scan.record_count != records.size()) {
            throw LengthMismatch("scan has " + std::to_string(scan.record_count) + " records, labels " +
                                 std::to_string(records.size()));
        }
        // Score only points inside the grid; everything else is excluded.
        std::vector<std::int8_t> in_range_truth(records.size(), kUnscored);
        std::vector<std::int8_t> pred_kept(scan.cloud.size());
        std::vector<std::int8_t> truth_kept(scan.cloud.size());
        for (std::size_t i = 0; i < scan.cloud.size(); ++i) {
            const auto r = scan.source_index[i];
            pred_kept[i] = predicted[r];
            truth_kept[i] = truth[r];
            if (cell_of(scan.cloud.points[i], ctx.cfg.grid)) {
                in_range_truth[r] = truth[r];
            }
        }
        truth = std::move(in_range_truth);
        const double th = ctx.cfg.labels.pillar_threshold;
        const auto truth_map = majority_map(scan.cloud, truth_kept, ctx.cfg.grid, th);
        const auto pred_map = majority_map(scan.cloud, pred_kept, ctx.cfg.grid, th);
        pillar_counts = gsec::accumulate(std::span<const std::uint8_t>(pred_map.cells), std::span<const std::uint8_t>(truth_map.cells));
    }
    const auto point_counts = gsec::accumulate(std::span<const std::int8_t>(predicted), std::span<const std::int8_t>(truth), &excluded);
    report["point"] = scores_json(point_counts);
    report["excluded_points"] = excluded;
    if (pillar_counts) {
        report["pillar"] = scores_json(*pillar_counts);
    }

    char header[200];
    std::snprintf(header, sizeof header, "%-8s %10s %10s %10s %10s %10s %12s %10s\n", "level", "TP", "TN", "FP", "FN",
                  "accuracy", "mIoU(gnd)", "F1");
    ctx.out << header;
    print_scores(ctx.out, "point", point_counts);
    if (pillar_counts) {
        print_scores(ctx.out, "pillar", *pillar_counts);
    }
    ctx.out << "excluded points (unscored or out of range): " << excluded << '\n';
    ctx.out << "json " << report.dump() << '\n';
    if (!args.json_out.empty()) {
        write_file_atomic(args.json_out, report.dump(2) + "\n");
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    fs::path checkpoint;
    fs::path scans;
    std::size_t synthetic = 4;
};

int cmd_bench(Context& ctx, const BenchArgs& args) {
    RunConfig cfg = args.checkpoint.empty() ? ctx.cfg : config_for_checkpoint(ctx, args.checkpoint);
    GsecNet<float> net(cfg.model_config());
    if (args.checkpoint.empty()) {
        net.init(derive_seed(cfg.seed, 0x6e6574));
    } else {
        load_checkpoint(args.checkpoint, net);
    }
    net.set_training(false);

    std::vector<PointCloud> clouds;
    if (!args.scans.empty()) {
        fs::path scans = args.scans;
        fs::path labels;
        resolve_dataset_dirs(scans, labels);
        for (const auto& f : list_files(scans, ".bin")) {
            clouds.push_back(read_scan(f).cloud);
        }
    } else {
        for (std::size_t i = 0; i < args.synthetic; ++i) {
            clouds.push_back(synthetic_frame(cfg.synth, cfg.seed, i));
        }
    }
    auto report = bench(
        [&](std::size_t f) {
            return predict(net, clouds[f], cfg, cfg.infer.threshold, derive_seed(cfg.seed, f)).times;
        },
        clouds.size(), static_cast<std::size_t>(cfg.bench.warmup), static_cast<std::size_t>(cfg.bench.repetitions));
    report.config_hash = cfg.hash();
    ctx.out << "variant      " << cfg.model_config().variant() << '\n';
    ctx.out << format_bench(report);
    return kOk;
}

// ---------------------------------------------------------------------------

struct ComplexityArgs {
    fs::path json_out;
};

int cmd_complexity(Context& ctx, const ComplexityArgs& args) {
    const auto model_cfg = ctx.cfg.model_config();
    GsecNet<float> net(model_cfg);
    const auto report = nn::count_complexity(net.layer_specs());
    ctx.out << "variant " << model_cfg.variant() << ", grid " << model_cfg.rows << "x" << model_cfg.cols << "x"
            << model_cfg.max_points << "\n\n";
    ctx.out << nn::format_report(report);
    ctx.out << "\nreference   params " << fixed(kReferenceParams / 1e6, 2) << " M   MACs " << fixed(kReferenceMacs / 1e9, 2)
            << " G\n";
    ctx.out << "ratio       params " << fixed(static_cast<double>(report.params) / kReferenceParams, 4) << "     MACs "
            << fixed(static_cast<double>(report.macs) / kReferenceMacs, 4) << '\n';
    if (!args.json_out.empty()) {
        json j;
        j["variant"] = model_cfg.variant();
        j["config_hash"] = ctx.cfg.hash();
        j["params"] = report.params;
        j["macs"] = report.macs;
        for (const auto& g : report.groups) {
            j["groups"][g.group] = {{"params", g.params}, {"macs", g.macs}};
        }
        for (const auto& c : report.layers) {
            j["layers"].push_back({{"name", c.spec.name},
                                   {"group", c.spec.group},
                                   {"kind", nn::layer_kind_name(c.spec.kind)},
                                   {"params", c.params},
                                   {"macs", c.macs}});
        }
        write_file_atomic(args.json_out, j.dump(2) + "\n");
    }
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"GSECnet ground segmentation pipeline", "gsecnet"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    fs::path config_path;
    bool force = false;
    int jobs = 1;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON run config; flags override it")->check(CLI::ExistingFile);
    app.add_flag("--force", force, "proceed despite config-hash conflicts");
    app.add_option("--jobs", jobs, "worker threads for per-frame work")->check(CLI::PositiveNumber);
    auto* seed_opt = app.add_option("--seed", seed, "run seed");

    // Flags bound to config fields, applied after the config file is read.
    std::vector<std::function<void(RunConfig&)>> overrides;
    auto bind = [&overrides](CLI::App* sub, const std::string& flag, auto field, const std::string& help) {
        using V = std::remove_reference_t<decltype(field(std::declval<RunConfig&>()))>;
        auto value = std::make_shared<V>();
        auto* opt = sub->add_option(flag, *value, help);
        overrides.push_back([opt, value, field](RunConfig& c) {
            if (opt->count() > 0) {
                field(c) = *value;
            }
        });
    };
    auto bind_flag = [&overrides](CLI::App* sub, const std::string& flag, auto field, bool when_set,
                                  const std::string& help) {
        auto* opt = sub->add_flag(flag, help);
        overrides.push_back([opt, field, when_set](RunConfig& c) {
            if (opt->count() > 0) {
                field(c) = when_set;
            }
        });
    };
    auto model_flags = [&](CLI::App* sub) {
        bind_flag(sub, "--no-normals", [](RunConfig& c) -> bool& { return c.network.use_normals; }, false,
                  "9-feature encoder without (x_n, y_n, z_n)");
        bind_flag(sub, "--no-attention", [](RunConfig& c) -> bool& { return c.network.attention; }, false,
                  "drop every attention block");
    };
    auto sampling_flags = [&](CLI::App* sub) {
        bind(sub, "--undersample", [](RunConfig& c) -> std::string& { return c.sampling.mode; },
             "controlled | uniform | none");
        bind(sub, "--budget", [](RunConfig& c) -> std::size_t& { return c.sampling.budget; }, "point budget");
        bind(sub, "--k", [](RunConfig& c) -> std::size_t& { return c.normals.k; }, "normal-estimation neighbors");
    };

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate labeled synthetic scans");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--scenes", synth.scenes, "scene count")->check(CLI::PositiveNumber);
    bind_flag(synth_cmd, "--no-tilt", [](RunConfig& c) -> bool& { return c.synth.allow_tilt; }, false,
              "flat ground only");
    bind(synth_cmd, "--min-obstacles", [](RunConfig& c) -> int& { return c.synth.min_obstacles; }, "");
    bind(synth_cmd, "--max-obstacles", [](RunConfig& c) -> int& { return c.synth.max_obstacles; }, "");
    bind(synth_cmd, "--noise", [](RunConfig& c) -> double& { return c.synth.noise_sigma; }, "sensor noise sigma");

    PreprocessArgs pre;
    auto* pre_cmd = app.add_subcommand("preprocess", "scans (+ labels) to pillar tensors");
    pre_cmd->add_option("--scans", pre.scans, "scan file, directory of .bin files or a synth directory")
        ->required();
    pre_cmd->add_option("--labels", pre.labels, "label file or directory");
    pre_cmd->add_option("--out", pre.out, "output directory")->required();
    sampling_flags(pre_cmd);

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train on preprocessed pillar tensors");
    train_cmd->add_option("--data", tr.data, "directory of .pillars files")->required();
    train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
    train_cmd->add_option("--log", tr.log, "JSONL training log (default: <out>.log.jsonl)");
    bind(train_cmd, "--steps", [](RunConfig& c) -> int& { return c.train.max_steps; }, "stop after N steps");
    bind(train_cmd, "--epochs", [](RunConfig& c) -> int& { return c.train.epochs; }, "");
    bind(train_cmd, "--batch", [](RunConfig& c) -> int& { return c.train.batch_size; }, "");
    bind(train_cmd, "--eval-every", [](RunConfig& c) -> int& { return c.train.eval_every; },
         "evaluate every N steps (0: per epoch)");
    bind(train_cmd, "--lr", [](RunConfig& c) -> double& { return c.train.lr; }, "initial learning rate");
    sampling_flags(train_cmd);
    model_flags(train_cmd);

    InferArgs inf;
    auto* infer_cmd = app.add_subcommand("infer", "label the points of one scan");
    infer_cmd->add_option("--scan", inf.scan, "scan file")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--checkpoint", inf.checkpoint, "checkpoint")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--out", inf.out, "predictions file")->required();
    bind(infer_cmd, "--threshold", [](RunConfig& c) -> double& { return c.infer.threshold; },
         "ground probability threshold");
    sampling_flags(infer_cmd);

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against labels");
    eval_cmd->add_option("--pred", ev.pred, "predictions (.txt) or label file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--labels", ev.labels, "ground-truth label file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--scan", ev.scan, "scan file; enables range filtering and pillar metrics")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--json", ev.json_out, "write the report as JSON");

    BenchArgs be;
    auto* bench_cmd = app.add_subcommand("bench", "time the inference stages");
    bench_cmd->add_option("--checkpoint", be.checkpoint, "checkpoint (default: random weights)")
        ->check(CLI::ExistingFile);
    bench_cmd->add_option("--scans", be.scans, "scan directory (default: synthetic scenes)");
    bench_cmd->add_option("--synthetic", be.synthetic, "synthetic scene count")->check(CLI::PositiveNumber);
    bind(bench_cmd, "--warmup", [](RunConfig& c) -> int& { return c.bench.warmup; }, "");
    bind(bench_cmd, "--reps", [](RunConfig& c) -> int& { return c.bench.repetitions; }, "");
    sampling_flags(bench_cmd);
    model_flags(bench_cmd);

    ComplexityArgs cx;
    auto* cx_cmd = app.add_subcommand("complexity", "per-layer parameter and MAC table");
    cx_cmd->add_option("--json", cx.json_out, "write the table as JSON");
    model_flags(cx_cmd);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        err << app.help();
        return kUsage;
    }

    try {
        Context ctx{config_path.empty() ? RunConfig{} : RunConfig::load(config_path), out, err, force, jobs};
        if (seed_opt->count() > 0) {
            ctx.cfg.seed = seed;
        }
        for (const auto& apply : overrides) {
            apply(ctx.cfg);
        }
        ctx.cfg.validate();
        if (*synth_cmd) {
            return cmd_synth(ctx, synth);
        }
        if (*pre_cmd) {
            return cmd_preprocess(ctx, pre);
        }
        if (*train_cmd) {
            return cmd_train(ctx, tr);
        }
        if (*infer_cmd) {
            return cmd_infer(ctx, inf);
        }
        if (*eval_cmd) {
            return cmd_eval(ctx, ev);
        }
        if (*bench_cmd) {
            return cmd_bench(ctx, be);
        }
        return cmd_complexity(ctx, cx);
    } catch (const InvalidParam& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigConflict& e) {
        err << "config conflict: " << e.what() << '\n';
        return kConfigConflict;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run(args, std::cout, std::cerr);
}

}  // namespace gsec::cli
