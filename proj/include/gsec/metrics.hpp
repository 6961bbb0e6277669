#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gsec {

// Ground is the positive class.
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Elementwise tally of 0/1 labels. A negative entry on either side marks an
/// unscored element and is skipped; the number skipped is added to `skipped`.
ConfusionCounts accumulate(std::span<const std::int8_t> pred, std::span<const std::int8_t> truth,
                           std::size_t* skipped = nullptr);
ConfusionCounts accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

struct Scores {
    double accuracy = 0.0;
    // Ground IoU, TP / (TP + FP + FN), reported as "mIoU". nullopt when the
    // denominator is zero.
    std::optional<double> iou;
    std::optional<double> f1;
};

/// Throws EmptyCounts when nothing was scored.
Scores scores(const ConfusionCounts& c);

std::string format_score(const std::optional<double>& value);

// ---------------------------------------------------------------------------
// Benchmarking

struct StageStats {
    std::string name;
    std::size_t samples = 0;
    double mean = 0.0;  // seconds
    double p50 = 0.0;
    double p99 = 0.0;
};

struct BenchReport {
    std::vector<StageStats> stages;  // in first-reported order
    StageStats end_to_end;
    double hz = 0.0;
    std::string machine;
    std::string config_hash;
};

/// Stage name and elapsed seconds, as measured by the pipeline itself.
using StageTimes = std::vector<std::pair<std::string, double>>;

/// Runs one frame and reports its per-stage times.
using BenchPipeline = std::function<StageTimes(std::size_t frame)>;

/// `warmup` untimed frame runs, then `repetitions` timed passes over all
/// frames. End-to-end time is measured around each call with a monotonic
/// clock. Throws InvalidParam when frames or repetitions is zero.
BenchReport bench(const BenchPipeline& pipeline, std::size_t frames, std::size_t warmup, std::size_t repetitions);

StageStats summarize(std::string name, std::vector<double> samples);

/// CPU model, hardware threads, compiler and build flags.
std::string machine_descriptor();

std::string format_bench(const BenchReport& report);

}  // namespace gsec
