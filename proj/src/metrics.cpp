#include "gsec/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "gsec/error.hpp"

namespace gsec {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
}

namespace {

void tally(ConfusionCounts& c, bool pred, bool truth) {
    if (pred) {
        ++(truth ? c.tp : c.fp);
    } else {
        ++(truth ? c.fn : c.tn);
    }
}

}  // namespace

ConfusionCounts accumulate(std::span<const std::int8_t> pred, std::span<const std::int8_t> truth,
                           std::size_t* skipped) {
    if (pred.size() != truth.size()) {
        throw LengthMismatch("accumulate: " + std::to_string(pred.size()) + " predictions for " +
                             std::to_string(truth.size()) + " labels");
    }
    ConfusionCounts c;
    std::size_t skip = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || truth[i] < 0) {
            ++skip;
            continue;
        }
        tally(c, pred[i] != 0, truth[i] != 0);
    }
    if (skipped != nullptr) {
        *skipped += skip;
    }
    return c;
}

ConfusionCounts accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
    if (pred.size() != truth.size()) {
        throw LengthMismatch("accumulate: " + std::to_string(pred.size()) + " predictions for " +
                             std::to_string(truth.size()) + " labels");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        tally(c, pred[i] != 0, truth[i] != 0);
    }
    return c;
}

Scores scores(const ConfusionCounts& c) {
    if (c.total() == 0) {
        throw EmptyCounts("no scored elements");
    }
    Scores s;
    const auto tp = static_cast<double>(c.tp);
    const auto fp = static_cast<double>(c.fp);
    const auto fn = static_cast<double>(c.fn);
    s.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fp + c.fn > 0) {
        s.iou = tp / (tp + fp + fn);
        s.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
    }
    return s;
}

std::string format_score(const std::optional<double>& value) {
    if (!value) {
        return "undefined";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *value);
    return buf;
}

StageStats summarize(std::string name, std::vector<double> samples) {
    StageStats s;
    s.name = std::move(name);
    s.samples = samples.size();
    if (samples.empty()) {
        return s;
    }
    std::sort(samples.begin(), samples.end());
    double sum = 0.0;
    for (const double v : samples) {
        sum += v;
    }
    s.mean = sum / static_cast<double>(samples.size());
    // Nearest-rank percentiles.
    auto rank = [&samples](double q) {
        const auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
        return samples[std::clamp<std::size_t>(r, 1, samples.size()) - 1];
    };
    s.p50 = rank(0.50);
    s.p99 = rank(0.99);
    return s;
}

BenchReport bench(const BenchPipeline& pipeline, std::size_t frames, std::size_t warmup, std::size_t repetitions) {
    if (frames == 0 || repetitions == 0) {
        throw InvalidParam("bench needs at least one frame and one repetition");
    }
    using Clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < warmup; ++i) {
        pipeline(i % frames);
    }
    std::vector<std::string> order;
    std::vector<std::vector<double>> stage_samples;
    std::vector<double> total;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        for (std::size_t f = 0; f < frames; ++f) {
            const auto t0 = Clock::now();
            const auto times = pipeline(f);
            const auto t1 = Clock::now();
            total.push_back(std::chrono::duration<double>(t1 - t0).count());
            for (const auto& [name, seconds] : times) {
                auto it = std::find(order.begin(), order.end(), name);
                if (it == order.end()) {
                    order.push_back(name);
                    stage_samples.emplace_back();
                    it = order.end() - 1;
                }
                stage_samples[static_cast<std::size_t>(it - order.begin())].push_back(seconds);
            }
        }
    }
    BenchReport report;
    for (std::size_t i = 0; i < order.size(); ++i) {
        report.stages.push_back(summarize(order[i], std::move(stage_samples[i])));
    }
    report.end_to_end = summarize("end_to_end", std::move(total));
    report.hz = report.end_to_end.mean > 0.0 ? 1.0 / report.end_to_end.mean : 0.0;
    report.machine = machine_descriptor();
    return report;
}

std::string machine_descriptor() {
    std::string cpu = "unknown cpu";
    std::ifstream info("/proc/cpuinfo");
    std::string line;
    while (std::getline(info, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) {
                cpu = line.substr(colon + 2);
            }
            break;
        }
    }
    std::ostringstream os;
    os << cpu << "; " << std::thread::hardware_concurrency() << " hw threads; ";
#if defined(__clang__)
    os << "clang " << __clang_major__ << '.' << __clang_minor__;
#elif defined(__GNUC__)
    os << "gcc " << __GNUC__ << '.' << __GNUC_MINOR__;
#else
    os << "unknown compiler";
#endif
#ifdef NDEBUG
    os << " release";
#else
    os << " debug";
#endif
    return os.str();
}

std::string format_bench(const BenchReport& report) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %8s %12s %12s %12s\n", "stage", "samples", "mean_ms", "p50_ms", "p99_ms");
    os << line;
    auto row = [&](const StageStats& s) {
        std::snprintf(line, sizeof line, "%-12s %8zu %12.3f %12.3f %12.3f\n", s.name.c_str(), s.samples,
                      s.mean * 1e3, s.p50 * 1e3, s.p99 * 1e3);
        os << line;
    };
    for (const auto& s : report.stages) {
        row(s);
    }
    row(report.end_to_end);
    std::snprintf(line, sizeof line, "throughput   %.2f Hz\n", report.hz);
    os << line;
    os << "machine      " << report.machine << '\n';
    if (!report.config_hash.empty()) {
        os << "config_hash  " << report.config_hash << '\n';
    }
    return os.str();
}

}  // namespace gsec
