#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gsec::nn {

enum class LayerKind { Linear, BatchNorm, Conv, Cbam };

const char* layer_kind_name(LayerKind kind);

// One layer as the accountant sees it. `positions` is the number of output
// locations the layer is applied at per frame: H*W for convolutions, rows for
// a linear layer or a rank-2 batch norm.
struct LayerSpec {
    std::string name;
    std::string group;  // "encoder" or "unet"
    LayerKind kind = LayerKind::Conv;
    int in = 0;
    int out = 0;
    int kernel = 1;
    int stride = 1;
    int groups = 1;
    bool bias = false;
    int reduction = 16;  // Cbam only
    std::int64_t positions = 0;

    void validate() const;
};

struct LayerCount {
    LayerSpec spec;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct GroupTotals {
    std::string group;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct ComplexityReport {
    std::vector<LayerCount> layers;
    std::vector<GroupTotals> groups;  // in first-seen order
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

/// Closed-form counts. Convolutions: out * in/groups * k^2 weights (+ out
/// bias) and that many MACs per output position. Linear: in * out (+ out).
/// Batch norm: 2C affine parameters and one MAC per element. Cbam: the shared
/// MLP on two descriptors, the 7x7 two-channel spatial convolution and one
/// MAC per element for each of the two gates.
LayerCount count_layer(const LayerSpec& spec);
ComplexityReport count_complexity(const std::vector<LayerSpec>& specs);

/// Aligned text table, one row per layer plus group and grand totals.
std::string format_report(const ComplexityReport& report);

}  // namespace gsec::nn
