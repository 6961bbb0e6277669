#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gsec/nn/complexity.hpp"
#include "gsec/nn/layers.hpp"
#include "gsec/pillars.hpp"

namespace gsec {

struct ModelConfig {
    int encoder_channels = 64;
    int rows = 128;
    int cols = 128;
    int max_points = 64;
    std::array<int, 4> ladder{64, 64, 128, 256};  // three encoder levels + bottleneck
    bool attention = true;
    bool use_normals = true;  // false drops (x_n, y_n, z_n): 9 input features
    int cbam_reduction = 16;

    int feature_count() const { return use_normals ? kFeatureCount : kFeatureCount - 3; }
    std::string variant() const;
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Several frames' pillars stacked: features are P x max_points x 12 with
// zeroed padding; frame_offsets has frames + 1 entries.
struct PillarBatch {
    int rows = 0;
    int cols = 0;
    int max_points = 0;
    std::vector<float> features;
    std::vector<std::int32_t> counts;
    std::vector<std::array<std::int32_t, 2>> coords;
    std::vector<std::size_t> frame_offsets{0};

    int frames() const { return static_cast<int>(frame_offsets.size()) - 1; }
    std::size_t pillar_count() const { return counts.size(); }
};

PillarBatch make_batch(std::span<const PillarTensor* const> frames);
PillarBatch make_batch(const PillarTensor& frame);

/// Pillar encoder (linear -> batch norm -> ReLU per point, max over each
/// pillar, scatter to the grid) followed by the depthwise-separable attention
/// U-Net and a 1x1 head producing one logit per cell.
template <typename T>
class GsecNet {
public:
    using Map = nn::Tensor<T>;

    explicit GsecNet(ModelConfig cfg = {});

    const ModelConfig& config() const { return cfg_; }

    void init(std::uint64_t seed);
    void set_training(bool training);
    bool training() const { return training_; }

    /// [frames, encoder_channels, rows, cols]. In inference mode a
    /// multi-frame batch is processed one frame at a time (identical results,
    /// smaller working set) and cannot be followed by a backward pass.
    Map encode(const PillarBatch& batch);
    /// [N, 1, rows, cols] logits.
    Map forward_unet(const Map& x);
    Map forward(const PillarBatch& batch) { return forward_unet(encode(batch)); }

    Map backward_unet(const Map& grad_logits);
    void backward_encoder(const Map& grad_map);
    void backward(const Map& grad_logits) { backward_encoder(backward_unet(grad_logits)); }

    nn::ParamList<T> params();
    nn::StateList<T> state();
    void zero_grad();
    std::int64_t parameter_count();

    /// Accountant description of the network for one frame; the encoder is
    /// counted densely over every pillar slot of the grid.
    std::vector<nn::LayerSpec> layer_specs() const;

private:
    struct Level {
        nn::DoubleDsc<T> block;
        nn::Cbam<T> attention;
        nn::MaxPool2<T> pool;
    };
    struct UpLevel {
        nn::UpsampleBilinear2<T> up;
        nn::DoubleDsc<T> block;
        int skip_channels = 0;
    };

    ModelConfig cfg_;
    bool training_ = true;

    nn::Linear<T> point_linear_;
    nn::BatchNorm<T> point_norm_;
    nn::Relu<T> point_relu_;

    std::array<Level, 3> down_;
    nn::DoubleDsc<T> bottleneck_;
    nn::Cbam<T> bottleneck_attention_;
    std::array<UpLevel, 3> up_;
    nn::PointwiseConv<T> head_;

    // Encoder caches.
    std::vector<std::size_t> pillar_first_row_;  // first valid-point row of each pillar
    std::vector<std::int32_t> pillar_argmax_;    // [pillars x channels] row index, -1 when empty
    std::vector<std::size_t> pillar_cell_;       // flat offset of each pillar's (frame, 0, r, c)
    std::size_t valid_rows_ = 0;
    nn::Shape map_shape_;
    bool frame_by_frame_ = false;
};

extern template class GsecNet<float>;
extern template class GsecNet<double>;

// Checkpoints: all state tensors as f32, the model config as JSON and the
// run's config hashes.
struct CheckpointMeta {
    std::uint64_t config_hash = 0;
    std::string preprocess_hash;
    std::uint64_t seed = 0;
    double best_miou = 0.0;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, GsecNet<T>& net, const CheckpointMeta& meta);

/// Restores `net` in place. Throws CheckpointMismatch when the stored model
/// config or any tensor shape differs from `net`.
template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, GsecNet<T>& net);

/// Reads only the model config stored in a checkpoint.
ModelConfig checkpoint_model_config(const std::filesystem::path& path);

}  // namespace gsec
