#pragma once

// Finite-difference gradient checks and small-model fixtures shared by the
// unit tests and the acceptance binary. No test-framework dependency.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gsec/model.hpp"
#include "gsec/nn/layers.hpp"
#include "gsec/nn/loss.hpp"
#include "gsec/rng.hpp"

namespace gradcheck {

using gsec::Rng;
using gsec::nn::ParamList;
using gsec::nn::Shape;
using gsec::nn::Tensor;

inline constexpr double kStep = 1e-3;
inline constexpr double kRelTol = 1e-4;
// Below this magnitude a relative error is meaningless; both sides must then
// agree absolutely.
inline constexpr double kAbsFloor = 1e-7;

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) {
        v = gsec::uniform(rng, lo, hi);
    }
    return t;
}

// Values spaced 0.01 apart in random order, none at zero: no ties for
// max-based layers and no relu kink under perturbation.
inline Tensor<double> tie_free(Rng& rng, Shape shape) {
    Tensor<double> t(std::move(shape));
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    gsec::shuffle(rng, order);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = 0.01 * static_cast<double>(order[i]) - 0.005 * static_cast<double>(t.size()) + 0.005;
    }
    return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

inline double rel_error(double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return scale > 0.0 ? std::abs(analytic - numeric) / scale : 0.0;
}

inline bool agrees(double analytic, double numeric, double floor, double tol) {
    return std::abs(analytic - numeric) <= floor || rel_error(analytic, numeric) < tol;
}

template <typename Layer>
ParamList<double> params_of(Layer& layer) {
    ParamList<double> list;
    if constexpr (requires { layer.collect(list); }) {
        layer.collect(list);
    }
    return list;
}

struct Report {
    std::size_t failures = 0;
    std::size_t skipped = 0;
    std::size_t total = 0;
    // over elements whose gradient is well above the absolute floor
    double max_rel = 0.0;
    std::vector<std::string> notes;  // one per failure

    bool ok(double max_skip_fraction = 0.05) const {
        return failures == 0 && static_cast<double>(skipped) <= max_skip_fraction * static_cast<double>(total);
    }
    void merge(const Report& r) {
        failures += r.failures;
        skipped += r.skipped;
        total += r.total;
        max_rel = std::max(max_rel, r.max_rel);
        notes.insert(notes.end(), r.notes.begin(), r.notes.end());
    }
};

using Regime = std::function<std::vector<bool>()>;

// Sign pattern of a relu's last output.
template <typename T>
std::vector<bool> relu_mask(const gsec::nn::Relu<T>& relu) {
    std::vector<bool> m;
    for (const auto v : relu.output().values()) {
        m.push_back(v > 0);
    }
    return m;
}

// Central differences of L = <forward(x), R> against backward(R), for every
// input element and up to `max_param_elems` elements of each parameter.
// `regime`, if given, reports the piecewise-linear state after a forward;
// perturbations that change it straddle a kink and are skipped.
template <typename Layer>
Report layer_gradients(Layer& layer, Tensor<double> x, Rng& rng, std::size_t max_param_elems = 400,
                       const Regime& regime = {}) {
    const auto out = layer.forward(x);
    const auto r = random_tensor(rng, out.shape());
    auto params = params_of(layer);
    for (auto* p : params) {
        p->zero_grad();
    }
    const auto dx = layer.backward(r);
    Report report;
    if (dx.shape() != x.shape()) {
        report.failures = 1;
        report.notes.emplace_back("input gradient shape differs from the input");
        return report;
    }
    const auto base = regime ? regime() : std::vector<bool>{};

    bool kinked = false;
    auto loss = [&] {
        const double l = dot(layer.forward(x), r);
        if (regime && regime() != base) {
            kinked = true;
        }
        return l;
    };
    auto probe = [&](double& slot, double analytic, const std::string& what) {
        const double orig = slot;
        slot = orig + kStep;
        const double up = loss();
        slot = orig - kStep;
        const double down = loss();
        slot = orig;
        ++report.total;
        if (std::exchange(kinked, false)) {
            ++report.skipped;
            return;
        }
        const double numeric = (up - down) / (2.0 * kStep);
        if (std::max(std::abs(analytic), std::abs(numeric)) > 100 * kAbsFloor) {
            report.max_rel = std::max(report.max_rel, rel_error(analytic, numeric));
        }
        if (!agrees(analytic, numeric, kAbsFloor, kRelTol)) {
            ++report.failures;
            std::ostringstream os;
            os << what << " analytic " << analytic << " numeric " << numeric;
            report.notes.push_back(os.str());
        }
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe(x[i], dx[i], "input[" + std::to_string(i) + "]");
    }
    for (auto* p : params) {
        const auto analytic = p->grad;
        std::vector<std::size_t> idx(p->value.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (idx.size() > max_param_elems) {
            gsec::shuffle(rng, idx);
            idx.resize(max_param_elems);
        }
        for (const auto i : idx) {
            probe(p->value[i], analytic[i], p->name + "[" + std::to_string(i) + "]");
        }
    }
    return report;
}

// Reduced network for whole-model checks: 16 x 16 grid, 4 points per pillar.
inline gsec::ModelConfig small_config() {
    gsec::ModelConfig cfg;
    cfg.rows = cfg.cols = 16;
    cfg.max_points = 4;
    cfg.encoder_channels = 8;
    cfg.ladder = {8, 8, 16, 16};
    cfg.cbam_reduction = 4;
    return cfg;
}

// Random occupied cells of a rows x cols grid, 1..max_points points each.
inline gsec::PillarTensor random_pillars(Rng& rng, const gsec::ModelConfig& cfg, std::size_t pillars) {
    gsec::PillarTensor t;
    t.rows = cfg.rows;
    t.cols = cfg.cols;
    t.max_points = cfg.max_points;
    std::vector<int> cells(static_cast<std::size_t>(cfg.rows * cfg.cols));
    std::iota(cells.begin(), cells.end(), 0);
    gsec::shuffle(rng, cells);
    const auto slot = static_cast<std::size_t>(cfg.max_points) * gsec::kFeatureCount;
    t.features.assign(pillars * slot, 0.0F);
    for (std::size_t k = 0; k < pillars; ++k) {
        const int n = 1 + static_cast<int>(gsec::uniform_index(rng, static_cast<std::uint64_t>(cfg.max_points)));
        t.counts.push_back(n);
        t.coords.push_back({cells[k] / cfg.cols, cells[k] % cfg.cols});
        for (int j = 0; j < n; ++j) {
            for (int q = 0; q < gsec::kFeatureCount; ++q) {
                t.features[k * slot + static_cast<std::size_t>(j * gsec::kFeatureCount + q)] =
                    static_cast<float>(gsec::uniform(rng, -1, 1));
            }
        }
    }
    return t;
}

inline gsec::BinaryMap random_map(Rng& rng, int rows, int cols) {
    gsec::BinaryMap m(rows, cols);
    for (auto& c : m.cells) {
        c = static_cast<std::uint8_t>(gsec::uniform_index(rng, 2));
    }
    return m;
}

// Focal loss of the reduced network on two random frames, differentiated
// numerically with step `h` at `samples` weights drawn across every
// parameter tensor. Element-wise relative error against `tol`.
inline Report end_to_end_gradients(double h, double tol, int samples = 100, std::uint64_t seed = 7) {
    const auto cfg = small_config();
    gsec::GsecNet<double> net(cfg);
    net.init(seed);
    Rng rng(seed + 1);
    for (auto* p : net.params()) {
        if (p->name.ends_with(".bias") || p->name.ends_with(".beta")) {
            for (auto& v : p->value.values()) {
                v = gsec::uniform(rng, -0.1, 0.1);
            }
        }
    }
    std::vector<gsec::PillarTensor> frames{random_pillars(rng, cfg, 60), random_pillars(rng, cfg, 60)};
    const std::vector<const gsec::PillarTensor*> ptrs{&frames[0], &frames[1]};
    const auto batch = gsec::make_batch(ptrs);
    std::vector<std::uint8_t> labels;
    for (int f = 0; f < 2; ++f) {
        const auto m = random_map(rng, cfg.rows, cfg.cols);
        labels.insert(labels.end(), m.cells.begin(), m.cells.end());
    }

    auto loss = [&] { return gsec::nn::focal_loss(net.forward(batch), labels).loss; };
    net.zero_grad();
    const auto result = gsec::nn::focal_loss(net.forward(batch), labels);
    net.backward(result.grad);

    auto params = net.params();
    std::vector<std::pair<gsec::nn::Param<double>*, std::size_t>> picks;
    for (int i = 0; i < samples; ++i) {
        auto* p = params[gsec::uniform_index(rng, params.size())];
        picks.emplace_back(p, gsec::uniform_index(rng, p->value.size()));
    }
    Report report;
    for (const auto& [p, i] : picks) {
        const double analytic = p->grad[i];
        const double orig = p->value[i];
        p->value[i] = orig + h;
        const double up = loss();
        p->value[i] = orig - h;
        const double down = loss();
        p->value[i] = orig;
        const double numeric = (up - down) / (2 * h);
        ++report.total;
        if (std::max(std::abs(analytic), std::abs(numeric)) > 1e-6) {
            report.max_rel = std::max(report.max_rel, rel_error(analytic, numeric));
        }
        if (!agrees(analytic, numeric, 1e-8, tol)) {
            ++report.failures;
            std::ostringstream os;
            os << p->name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
            report.notes.push_back(os.str());
        }
    }
    return report;
}

}  // namespace gradcheck
