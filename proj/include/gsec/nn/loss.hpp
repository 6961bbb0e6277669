#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "gsec/nn/tensor.hpp"

namespace gsec::nn {

struct FocalLossOptions {
    // Weight of the positive (ground) class; nullopt weighs both classes 1.
    std::optional<double> alpha = 0.25;
    double gamma = 2.0;
};

inline constexpr double kMinProbability = 1e-12;

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;  // d loss / d logits, same shape as the logits
};

/// Sigmoid focal loss averaged over every element of `logits`. `labels`
/// holds one 0/1 entry per logit (1 = ground).
template <typename T>
LossResult<T> focal_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                         const FocalLossOptions& options = {});

/// Mean binary cross-entropy on logits; the reference focal_loss degenerates
/// to when gamma = 0 and alpha is unset.
template <typename T>
LossResult<T> binary_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

}  // namespace gsec::nn
