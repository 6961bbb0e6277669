#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "gsec/nn/layers.hpp"

namespace gsec::nn {

struct AdamOptions {
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0005;  // decoupled: theta -= lr * wd * theta
};

/// Adam with bias correction and decoupled weight decay. Moments are kept in
/// double regardless of the parameter type.
template <typename T>
class Adam {
public:
    Adam(ParamList<T> params, AdamOptions options = {});

    void step();
    void zero_grad();

    double lr() const { return options_.lr; }
    void set_lr(double lr);
    std::int64_t steps() const { return steps_; }
    const AdamOptions& options() const { return options_; }

private:
    ParamList<T> params_;
    AdamOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::int64_t steps_ = 0;
};

struct PlateauOptions {
    double factor = 0.35;
    int patience = 3;
    double threshold = 1e-4;  // relative improvement that resets the count
};

/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// `patience` consecutive epochs without a relative improvement of
/// `threshold`, then starts counting afresh.
class PlateauScheduler {
public:
    explicit PlateauScheduler(PlateauOptions options = {});

    /// Records one epoch's loss; returns true when `lr` was reduced.
    bool observe(double loss, double& lr);

    double best() const { return best_; }
    int bad_epochs() const { return bad_epochs_; }
    int reductions() const { return reductions_; }

private:
    PlateauOptions options_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
    int reductions_ = 0;
};

}  // namespace gsec::nn
