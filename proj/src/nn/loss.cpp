#include "gsec/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace gsec::nn {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

template <typename T>
void check_labels(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
    if (labels.size() != logits.size()) {
        throw ShapeMismatch("loss: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(logits.size()) + " logits");
    }
    if (logits.empty()) {
        throw ShapeMismatch("loss: empty logit map");
    }
}

}  // namespace

template <typename T>
LossResult<T> focal_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                         const FocalLossOptions& options) {
    check_labels(logits, labels);
    const double log_floor = std::log(kMinProbability);
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    const double gamma = options.gamma;
    LossResult<T> out;
    out.grad = Tensor<T>(logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool ground = labels[i] != 0;
        const double s = ground ? 1.0 : -1.0;
        const double z = s * static_cast<double>(logits[i]);
        const double p_t = sigmoid(z);
        const double q = sigmoid(-z);  // 1 - p_t without cancellation
        const double log_pt_raw = -softplus(-z);
        const bool clamped = log_pt_raw < log_floor;
        const double log_pt = clamped ? log_floor : log_pt_raw;
        const double a_t = options.alpha ? (ground ? *options.alpha : 1.0 - *options.alpha) : 1.0;
        const double modulator = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
        total += -a_t * modulator * log_pt;
        const double dlog = clamped ? 0.0 : s * q;
        out.grad[i] = static_cast<T>(a_t * modulator * (gamma * s * p_t * log_pt - dlog) * inv_n);
    }
    out.loss = total * inv_n;
    return out;
}

template <typename T>
LossResult<T> binary_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
    check_labels(logits, labels);
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    LossResult<T> out;
    out.grad = Tensor<T>(logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double x = static_cast<double>(logits[i]);
        const double y = labels[i] != 0 ? 1.0 : 0.0;
        // -[y log p + (1 - y) log(1 - p)] = softplus(x) - y x
        total += softplus(x) - y * x;
        out.grad[i] = static_cast<T>((sigmoid(x) - y) * inv_n);
    }
    out.loss = total * inv_n;
    return out;
}

template LossResult<float> focal_loss<float>(const Tensor<float>&, std::span<const std::uint8_t>,
                                             const FocalLossOptions&);
template LossResult<double> focal_loss<double>(const Tensor<double>&, std::span<const std::uint8_t>,
                                               const FocalLossOptions&);
template LossResult<float> binary_cross_entropy<float>(const Tensor<float>&, std::span<const std::uint8_t>);
template LossResult<double> binary_cross_entropy<double>(const Tensor<double>&, std::span<const std::uint8_t>);

}  // namespace gsec::nn
