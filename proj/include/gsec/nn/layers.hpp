#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gsec/nn/tensor.hpp"
#include "gsec/rng.hpp"

// Layers used by the pillar encoder and the depthwise-separable attention
// U-Net. Each layer caches what its backward pass needs during forward(), so
// backward() must follow the matching forward(). Gradients accumulate into
// Param::grad; callers zero them between steps.
namespace gsec::nn {

template <typename T>
using ParamList = std::vector<Param<T>*>;

// Everything a checkpoint stores: learnable values plus running statistics.
template <typename T>
using StateList = std::vector<std::pair<std::string, Tensor<T>*>>;

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// y = x W + b over rows of a rank-2 input [M, in].
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out, bool bias = true);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    int in_features() const { return weight.value.dim(0); }
    int out_features() const { return weight.value.dim(1); }
    bool has_bias() const { return has_bias_; }

    Param<T> weight;  // [in, out]
    Param<T> bias;    // [out]

private:
    bool has_bias_ = true;
    Tensor<T> input_;
};

/// Per-channel normalization. Rank-2 inputs [M, C] normalize over rows,
/// rank-4 inputs [N, C, H, W] over N*H*W. Batch statistics in training,
/// running statistics otherwise.
template <typename T>
class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(const std::string& name, int channels);

    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    int channels() const { return gamma.value.dim(0); }

    bool training = true;
    Param<T> gamma;
    Param<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    std::string name;

private:
    Tensor<T> normalized_;
    std::vector<T> inv_std_;
    bool cached_training_ = true;
};

template <typename T>
class Relu {
public:
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    const Tensor<T>& output() const { return output_; }

private:
    Tensor<T> output_;
};

template <typename T>
class Sigmoid {
public:
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);

private:
    Tensor<T> output_;
};

/// Cross-correlation with zero padding, stride and channel groups. Weight is
/// [out, in / groups, k, k]. The general path: used for the attention map
/// convolution and as the reference the specialised convolutions are tested
/// against.
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in, int out, int kernel, int stride, int padding, int groups = 1,
           bool bias = true);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int kernel() const { return kernel_; }
    int stride() const { return stride_; }
    int padding() const { return padding_; }
    int groups() const { return groups_; }
    bool has_bias() const { return has_bias_; }

    Param<T> weight;
    Param<T> bias;

private:
    int in_ = 0;
    int out_ = 0;
    int kernel_ = 1;
    int stride_ = 1;
    int padding_ = 0;
    int groups_ = 1;
    bool has_bias_ = true;
    Tensor<T> input_;
};

/// Per-channel k x k convolution, stride 1, "same" padding, no bias.
/// Weight is [C, 1, k, k].
template <typename T>
class DepthwiseConv {
public:
    DepthwiseConv() = default;
    DepthwiseConv(const std::string& name, int channels, int kernel = 3);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    int channels() const { return weight.value.dim(0); }
    int kernel() const { return weight.value.dim(2); }

    Param<T> weight;

private:
    Tensor<T> input_;
};

/// 1 x 1 convolution as a matrix product. Weight is [out, in].
template <typename T>
class PointwiseConv {
public:
    PointwiseConv() = default;
    PointwiseConv(const std::string& name, int in, int out, bool bias = false);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    int in_channels() const { return weight.value.dim(1); }
    int out_channels() const { return weight.value.dim(0); }
    bool has_bias() const { return has_bias_; }

    Param<T> weight;
    Param<T> bias;

private:
    bool has_bias_ = false;
    Tensor<T> input_;
};

/// Depthwise 3 x 3 followed by pointwise mixing.
template <typename T>
class Dsc {
public:
    Dsc() = default;
    Dsc(const std::string& name, int in, int out);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    DepthwiseConv<T> depthwise;
    PointwiseConv<T> pointwise;
};

/// (DSC -> batch norm -> ReLU) twice.
template <typename T>
class DoubleDsc {
public:
    DoubleDsc() = default;
    DoubleDsc(const std::string& name, int in, int out);

    void init(Rng& rng);
    void set_training(bool training);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    Dsc<T> first;
    BatchNorm<T> first_norm;
    Relu<T> first_relu;
    Dsc<T> second;
    BatchNorm<T> second_norm;
    Relu<T> second_relu;
};

/// Channel attention (shared two-layer MLP over average- and max-pooled
/// descriptors) followed by spatial attention (7 x 7 convolution over the
/// channel-wise mean and max maps). Both gates are sigmoids.
template <typename T>
class Cbam {
public:
    static constexpr int kDefaultReduction = 16;
    static constexpr int kSpatialKernel = 7;

    Cbam() = default;
    Cbam(const std::string& name, int channels, int reduction = kDefaultReduction);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);
    void collect(ParamList<T>& params);
    void collect_state(StateList<T>& state);

    int channels() const { return fc1.in_features(); }
    int hidden() const { return fc1.out_features(); }

    Linear<T> fc1;
    Relu<T> mlp_relu;
    Linear<T> fc2;
    Conv2d<T> spatial;

private:
    Tensor<T> input_;
    Tensor<T> channel_gate_;  // [N, C]
    Tensor<T> gated_;         // input * channel gate
    Tensor<T> spatial_gate_;  // [N, 1, H, W]
    std::vector<int> channel_argmax_;  // [N, C] flat spatial index
    std::vector<int> spatial_argmax_;  // [N, H*W] channel index
};

/// 2 x 2 max pooling, stride 2. Gradient goes to the first maximal element
/// in row-major window order.
template <typename T>
class MaxPool2 {
public:
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);

private:
    Shape input_shape_;
    std::vector<std::size_t> argmax_;
};

/// Bilinear x2 upsampling, half-pixel centers (align_corners = false).
template <typename T>
class UpsampleBilinear2 {
public:
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);

private:
    Shape input_shape_;
};

/// Concatenate rank-4 tensors along channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Inverse of concat_channels: splits off the first `first_channels`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels);

}  // namespace gsec::nn
