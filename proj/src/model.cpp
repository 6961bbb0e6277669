#include "gsec/model.hpp"

#include <algorithm>
#include <limits>
#include <nlohmann/json.hpp>

#include "gsec/blob.hpp"
#include "gsec/error.hpp"
#include "gsec/rng.hpp"

namespace gsec {

using nlohmann::json;

std::string ModelConfig::variant() const {
    std::string v = use_normals ? "with-normals" : "without-normals";
    v += attention ? "+attention" : "+no-attention";
    return v;
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw InvalidParam(std::string("ModelConfig: ") + what);
        }
    };
    require(encoder_channels > 0, "encoder channels must be positive");
    require(rows > 0 && cols > 0 && rows % 8 == 0 && cols % 8 == 0, "grid dims must be positive multiples of 8");
    require(max_points >= 1, "max points must be >= 1");
    for (const int c : ladder) {
        require(c > 0, "ladder channels must be positive");
        require(!attention || c % cbam_reduction == 0, "attention reduction must divide every ladder width");
    }
    require(cbam_reduction > 0, "attention reduction must be positive");
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["encoder_channels"] = cfg.encoder_channels;
    j["rows"] = cfg.rows;
    j["cols"] = cfg.cols;
    j["max_points"] = cfg.max_points;
    j["ladder"] = cfg.ladder;
    j["attention"] = cfg.attention;
    j["use_normals"] = cfg.use_normals;
    j["cbam_reduction"] = cfg.cbam_reduction;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        ModelConfig cfg;
        cfg.encoder_channels = j.at("encoder_channels").get<int>();
        cfg.rows = j.at("rows").get<int>();
        cfg.cols = j.at("cols").get<int>();
        cfg.max_points = j.at("max_points").get<int>();
        cfg.ladder = j.at("ladder").get<std::array<int, 4>>();
        cfg.attention = j.at("attention").get<bool>();
        cfg.use_normals = j.at("use_normals").get<bool>();
        cfg.cbam_reduction = j.at("cbam_reduction").get<int>();
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
}

PillarBatch make_batch(std::span<const PillarTensor* const> frames) {
    PillarBatch batch;
    if (frames.empty()) {
        return batch;
    }
    batch.rows = frames[0]->rows;
    batch.cols = frames[0]->cols;
    batch.max_points = frames[0]->max_points;
    for (const auto* f : frames) {
        if (f->rows != batch.rows || f->cols != batch.cols || f->max_points != batch.max_points) {
            throw ShapeMismatch("make_batch: frames disagree in grid geometry");
        }
        batch.features.insert(batch.features.end(), f->features.begin(), f->features.end());
        batch.counts.insert(batch.counts.end(), f->counts.begin(), f->counts.end());
        batch.coords.insert(batch.coords.end(), f->coords.begin(), f->coords.end());
        batch.frame_offsets.push_back(batch.counts.size());
    }
    return batch;
}

PillarBatch make_batch(const PillarTensor& frame) {
    const PillarTensor* frames[] = {&frame};
    return make_batch(frames);
}

// ---------------------------------------------------------------------------

template <typename T>
GsecNet<T>::GsecNet(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int f = cfg_.feature_count();
    const int e = cfg_.encoder_channels;
    const int r = cfg_.cbam_reduction;
    point_linear_ = nn::Linear<T>("encoder.linear", f, e, true);
    point_norm_ = nn::BatchNorm<T>("encoder.bn", e);

    int in = e;
    for (int level = 0; level < 3; ++level) {
        const int out = cfg_.ladder[static_cast<std::size_t>(level)];
        const std::string name = "down" + std::to_string(level + 1);
        auto& d = down_[static_cast<std::size_t>(level)];
        d.block = nn::DoubleDsc<T>(name, in, out);
        if (cfg_.attention) {
            d.attention = nn::Cbam<T>(name + ".cbam", out, r);
        }
        in = out;
    }
    bottleneck_ = nn::DoubleDsc<T>("bottleneck", in, cfg_.ladder[3]);
    if (cfg_.attention) {
        bottleneck_attention_ = nn::Cbam<T>("bottleneck.cbam", cfg_.ladder[3], r);
    }
    in = cfg_.ladder[3];
    for (int level = 0; level < 3; ++level) {
        const int skip = cfg_.ladder[static_cast<std::size_t>(2 - level)];
        const int out = skip;
        auto& u = up_[static_cast<std::size_t>(level)];
        u.skip_channels = skip;
        u.block = nn::DoubleDsc<T>("up" + std::to_string(level + 1), skip + in, out);
        in = out;
    }
    head_ = nn::PointwiseConv<T>("head", in, 1, true);
}

template <typename T>
void GsecNet<T>::init(std::uint64_t seed) {
    Rng rng(seed);
    point_linear_.init(rng);
    for (auto& d : down_) {
        d.block.init(rng);
        if (cfg_.attention) {
            d.attention.init(rng);
        }
    }
    bottleneck_.init(rng);
    if (cfg_.attention) {
        bottleneck_attention_.init(rng);
    }
    for (auto& u : up_) {
        u.block.init(rng);
    }
    head_.init(rng);
}

template <typename T>
void GsecNet<T>::set_training(bool training) {
    training_ = training;
    point_norm_.training = training;
    for (auto& d : down_) {
        d.block.set_training(training);
    }
    bottleneck_.set_training(training);
    for (auto& u : up_) {
        u.block.set_training(training);
    }
}

template <typename T>
typename GsecNet<T>::Map GsecNet<T>::encode(const PillarBatch& batch) {
    if (batch.frames() < 1) {
        throw ShapeMismatch("encode: empty batch");
    }
    if (batch.rows != cfg_.rows || batch.cols != cfg_.cols || batch.max_points != cfg_.max_points) {
        throw ShapeMismatch("encode: batch grid " + std::to_string(batch.rows) + "x" + std::to_string(batch.cols) +
                            "x" + std::to_string(batch.max_points) + " does not match the model");
    }
    const std::size_t p = batch.pillar_count();
    const auto slot = static_cast<std::size_t>(batch.max_points) * kFeatureCount;
    if (batch.features.size() != p * slot || batch.coords.size() != p || batch.frame_offsets.back() != p) {
        throw ShapeMismatch("encode: batch arrays disagree in size");
    }
    if (!training_ && batch.frames() > 1) {
        // Frames are independent at inference; one at a time keeps the
        // working set cache-sized.
        Map out({batch.frames(), cfg_.encoder_channels, cfg_.rows, cfg_.cols});
        const std::size_t frame_size = out.size() / static_cast<std::size_t>(batch.frames());
        for (int f = 0; f < batch.frames(); ++f) {
            const auto first = batch.frame_offsets[static_cast<std::size_t>(f)];
            const auto last = batch.frame_offsets[static_cast<std::size_t>(f) + 1];
            PillarBatch one;
            one.rows = batch.rows;
            one.cols = batch.cols;
            one.max_points = batch.max_points;
            one.features.assign(batch.features.begin() + static_cast<std::ptrdiff_t>(first * slot),
                                batch.features.begin() + static_cast<std::ptrdiff_t>(last * slot));
            one.counts.assign(batch.counts.begin() + static_cast<std::ptrdiff_t>(first),
                              batch.counts.begin() + static_cast<std::ptrdiff_t>(last));
            one.coords.assign(batch.coords.begin() + static_cast<std::ptrdiff_t>(first),
                              batch.coords.begin() + static_cast<std::ptrdiff_t>(last));
            one.frame_offsets.push_back(last - first);
            const auto map = encode(one);
            std::copy(map.values().begin(), map.values().end(),
                      out.data() + static_cast<std::size_t>(f) * frame_size);
        }
        map_shape_.clear();  // caches hold the last frame only; no backward
        return out;
    }
    const int f = cfg_.feature_count();
    const int ch = cfg_.encoder_channels;

    pillar_first_row_.assign(p, 0);
    valid_rows_ = 0;
    for (std::size_t k = 0; k < p; ++k) {
        const int n = batch.counts[k];
        if (n < 0 || n > batch.max_points) {
            throw ShapeMismatch("encode: pillar point count out of range");
        }
        pillar_first_row_[k] = valid_rows_;
        valid_rows_ += static_cast<std::size_t>(n);
    }

    map_shape_ = {batch.frames(), ch, cfg_.rows, cfg_.cols};
    Map map(map_shape_);
    pillar_cell_.assign(p, 0);
    pillar_argmax_.assign(p * static_cast<std::size_t>(ch), -1);
    const std::size_t plane = map.plane();
    for (int frame = 0; frame < batch.frames(); ++frame) {
        for (std::size_t k = batch.frame_offsets[static_cast<std::size_t>(frame)];
             k < batch.frame_offsets[static_cast<std::size_t>(frame) + 1]; ++k) {
            const auto [r, c] = batch.coords[k];
            if (r < 0 || r >= cfg_.rows || c < 0 || c >= cfg_.cols) {
                throw ShapeMismatch("encode: pillar coordinate outside the grid");
            }
            pillar_cell_[k] = static_cast<std::size_t>(frame) * static_cast<std::size_t>(ch) * plane +
                              static_cast<std::size_t>(r) * static_cast<std::size_t>(cfg_.cols) +
                              static_cast<std::size_t>(c);
        }
    }
    if (valid_rows_ == 0) {
        return map;
    }

    Map points({static_cast<int>(valid_rows_), f});
    for (std::size_t k = 0; k < p; ++k) {
        const float* src = batch.features.data() + k * slot;
        T* dst = points.data() + pillar_first_row_[k] * static_cast<std::size_t>(f);
        for (int j = 0; j < batch.counts[k]; ++j) {
            for (int q = 0; q < f; ++q) {
                dst[j * f + q] = static_cast<T>(src[j * kFeatureCount + q]);
            }
        }
    }
    const Map h = point_relu_.forward(point_norm_.forward(point_linear_.forward(points)));

    for (std::size_t k = 0; k < p; ++k) {
        const int n = batch.counts[k];
        if (n == 0) {
            continue;
        }
        const std::size_t first = pillar_first_row_[k];
        for (int c = 0; c < ch; ++c) {
            std::size_t best = first;
            T value = h[first * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)];
            for (std::size_t row = first + 1; row < first + static_cast<std::size_t>(n); ++row) {
                const T v = h[row * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)];
                if (v > value) {
                    value = v;
                    best = row;
                }
            }
            map[pillar_cell_[k] + static_cast<std::size_t>(c) * plane] = value;
            pillar_argmax_[k * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)] =
                static_cast<std::int32_t>(best);
        }
    }
    return map;
}

template <typename T>
void GsecNet<T>::backward_encoder(const Map& grad_map) {
    if (grad_map.shape() != map_shape_) {
        throw ShapeMismatch("backward_encoder: gradient shape " + nn::shape_string(grad_map.shape()));
    }
    if (valid_rows_ == 0) {
        return;
    }
    const int ch = cfg_.encoder_channels;
    const std::size_t plane = grad_map.plane();
    Map grad_h({static_cast<int>(valid_rows_), ch});
    for (std::size_t k = 0; k < pillar_cell_.size(); ++k) {
        for (int c = 0; c < ch; ++c) {
            const auto row = pillar_argmax_[k * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)];
            if (row >= 0) {
                grad_h[static_cast<std::size_t>(row) * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)] +=
                    grad_map[pillar_cell_[k] + static_cast<std::size_t>(c) * plane];
            }
        }
    }
    point_linear_.backward(point_norm_.backward(point_relu_.backward(grad_h)));
}

template <typename T>
typename GsecNet<T>::Map GsecNet<T>::forward_unet(const Map& x) {
    x.require_rank(4, "forward_unet input");
    if (x.c() != cfg_.encoder_channels || x.h() != cfg_.rows || x.w() != cfg_.cols) {
        throw ShapeMismatch("forward_unet: expected [N, " + std::to_string(cfg_.encoder_channels) + ", " +
                            std::to_string(cfg_.rows) + ", " + std::to_string(cfg_.cols) + "], got " +
                            nn::shape_string(x.shape()));
    }
    frame_by_frame_ = !training_ && x.n() > 1;
    if (frame_by_frame_) {
        const std::size_t frame_size = x.size() / static_cast<std::size_t>(x.n());
        Map out;
        for (int f = 0; f < x.n(); ++f) {
            Map one({1, x.c(), x.h(), x.w()});
            std::copy_n(x.data() + static_cast<std::size_t>(f) * frame_size, frame_size, one.data());
            const auto logits = forward_unet(one);
            if (f == 0) {
                out = Map({x.n(), logits.c(), logits.h(), logits.w()});
            }
            std::copy(logits.values().begin(), logits.values().end(),
                      out.data() + static_cast<std::size_t>(f) * logits.size());
        }
        return out;
    }
    std::array<Map, 3> skips;
    Map h = x;
    for (std::size_t level = 0; level < 3; ++level) {
        auto& d = down_[level];
        h = d.block.forward(h);
        if (cfg_.attention) {
            h = d.attention.forward(h);
        }
        skips[level] = h;
        h = d.pool.forward(h);
    }
    h = bottleneck_.forward(h);
    if (cfg_.attention) {
        h = bottleneck_attention_.forward(h);
    }
    for (std::size_t level = 0; level < 3; ++level) {
        auto& u = up_[level];
        h = u.block.forward(nn::concat_channels(skips[2 - level], u.up.forward(h)));
    }
    return head_.forward(h);
}

template <typename T>
typename GsecNet<T>::Map GsecNet<T>::backward_unet(const Map& grad_logits) {
    if (frame_by_frame_) {
        throw ShapeMismatch("backward_unet: the last forward ran frame by frame in inference mode");
    }
    Map g = head_.backward(grad_logits);
    std::array<Map, 3> skip_grads;
    for (std::size_t level = 3; level-- > 0;) {
        auto& u = up_[level];
        auto [g_skip, g_up] = nn::split_channels(u.block.backward(g), u.skip_channels);
        skip_grads[2 - level] = std::move(g_skip);
        g = u.up.backward(g_up);
    }
    if (cfg_.attention) {
        g = bottleneck_attention_.backward(g);
    }
    g = bottleneck_.backward(g);
    for (std::size_t level = 3; level-- > 0;) {
        auto& d = down_[level];
        g = d.pool.backward(g);
        g += skip_grads[level];
        if (cfg_.attention) {
            g = d.attention.backward(g);
        }
        g = d.block.backward(g);
    }
    return g;
}

template <typename T>
nn::ParamList<T> GsecNet<T>::params() {
    nn::ParamList<T> out;
    point_linear_.collect(out);
    point_norm_.collect(out);
    for (auto& d : down_) {
        d.block.collect(out);
        if (cfg_.attention) {
            d.attention.collect(out);
        }
    }
    bottleneck_.collect(out);
    if (cfg_.attention) {
        bottleneck_attention_.collect(out);
    }
    for (auto& u : up_) {
        u.block.collect(out);
    }
    head_.collect(out);
    return out;
}

template <typename T>
nn::StateList<T> GsecNet<T>::state() {
    nn::StateList<T> out;
    point_linear_.collect_state(out);
    point_norm_.collect_state(out);
    for (auto& d : down_) {
        d.block.collect_state(out);
        if (cfg_.attention) {
            d.attention.collect_state(out);
        }
    }
    bottleneck_.collect_state(out);
    if (cfg_.attention) {
        bottleneck_attention_.collect_state(out);
    }
    for (auto& u : up_) {
        u.block.collect_state(out);
    }
    head_.collect_state(out);
    return out;
}

template <typename T>
void GsecNet<T>::zero_grad() {
    for (auto* p : params()) {
        p->zero_grad();
    }
}

template <typename T>
std::int64_t GsecNet<T>::parameter_count() {
    std::int64_t n = 0;
    for (const auto* p : params()) {
        n += static_cast<std::int64_t>(p->value.size());
    }
    return n;
}

template <typename T>
std::vector<nn::LayerSpec> GsecNet<T>::layer_specs() const {
    using nn::LayerKind;
    std::vector<nn::LayerSpec> specs;
    const std::int64_t cells = static_cast<std::int64_t>(cfg_.rows) * cfg_.cols;
    const std::int64_t slots = cells * cfg_.max_points;

    auto add = [&specs](nn::LayerSpec s) { specs.push_back(std::move(s)); };
    auto conv = [](std::string name, int in, int out, int k, int groups, bool bias, std::int64_t positions) {
        nn::LayerSpec s;
        s.name = std::move(name);
        s.group = "unet";
        s.kind = LayerKind::Conv;
        s.in = in;
        s.out = out;
        s.kernel = k;
        s.groups = groups;
        s.bias = bias;
        s.positions = positions;
        return s;
    };
    auto norm = [](std::string name, std::string group, int c, std::int64_t positions) {
        nn::LayerSpec s;
        s.name = std::move(name);
        s.group = std::move(group);
        s.kind = LayerKind::BatchNorm;
        s.in = c;
        s.out = c;
        s.positions = positions;
        return s;
    };
    auto double_dsc = [&](const std::string& name, int in, int out, std::int64_t positions) {
        add(conv(name + ".dsc1.depthwise", in, in, 3, in, false, positions));
        add(conv(name + ".dsc1.pointwise", in, out, 1, 1, false, positions));
        add(norm(name + ".bn1", "unet", out, positions));
        add(conv(name + ".dsc2.depthwise", out, out, 3, out, false, positions));
        add(conv(name + ".dsc2.pointwise", out, out, 1, 1, false, positions));
        add(norm(name + ".bn2", "unet", out, positions));
    };
    auto cbam = [&](const std::string& name, int c, std::int64_t positions) {
        nn::LayerSpec s;
        s.name = name;
        s.group = "unet";
        s.kind = LayerKind::Cbam;
        s.in = c;
        s.out = c;
        s.reduction = cfg_.cbam_reduction;
        s.positions = positions;
        add(std::move(s));
    };

    nn::LayerSpec linear;
    linear.name = "encoder.linear";
    linear.group = "encoder";
    linear.kind = LayerKind::Linear;
    linear.in = cfg_.feature_count();
    linear.out = cfg_.encoder_channels;
    linear.bias = true;
    linear.positions = slots;
    add(linear);
    add(norm("encoder.bn", "encoder", cfg_.encoder_channels, slots));

    int in = cfg_.encoder_channels;
    std::int64_t positions = cells;
    std::array<std::int64_t, 3> level_positions{};
    for (std::size_t level = 0; level < 3; ++level) {
        const int out = cfg_.ladder[level];
        const std::string name = "down" + std::to_string(level + 1);
        double_dsc(name, in, out, positions);
        if (cfg_.attention) {
            cbam(name + ".cbam", out, positions);
        }
        level_positions[level] = positions;
        positions /= 4;
        in = out;
    }
    double_dsc("bottleneck", in, cfg_.ladder[3], positions);
    if (cfg_.attention) {
        cbam("bottleneck.cbam", cfg_.ladder[3], positions);
    }
    in = cfg_.ladder[3];
    for (std::size_t level = 0; level < 3; ++level) {
        const int skip = cfg_.ladder[2 - level];
        double_dsc("up" + std::to_string(level + 1), skip + in, skip, level_positions[2 - level]);
        in = skip;
    }
    add(conv("head", in, 1, 1, 1, true, cells));
    return specs;
}

template class GsecNet<float>;
template class GsecNet<double>;

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
void save_checkpoint(const std::filesystem::path& path, GsecNet<T>& net, const CheckpointMeta& meta) {
    Blob blob;
    blob.kind = "checkpoint";
    blob.seed = meta.seed;
    blob.config_hash = meta.config_hash;
    blob.put_text("model_config", model_config_to_json(net.config()));
    blob.put_text("preprocess_hash", meta.preprocess_hash);
    const double best[] = {meta.best_miou};
    blob.put<double>("best_miou", {1}, best);
    for (const auto& [name, tensor] : net.state()) {
        std::vector<std::uint64_t> dims(tensor->shape().begin(), tensor->shape().end());
        std::vector<float> values(tensor->size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = static_cast<float>((*tensor)[i]);
        }
        blob.put<float>("state/" + name, std::move(dims), values);
    }
    blob.save(path);
}

namespace {

ModelConfig stored_config(const Blob& blob) {
    if (blob.kind != "checkpoint") {
        throw FormatError("expected a checkpoint, got a '" + blob.kind + "' blob");
    }
    return model_config_from_json(blob.get_text("model_config"));
}

}  // namespace

template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, GsecNet<T>& net) {
    const Blob blob = Blob::load(path);
    const ModelConfig stored = stored_config(blob);
    if (!(stored == net.config())) {
        throw CheckpointMismatch("checkpoint model config " + model_config_to_json(stored) +
                                 " differs from the requested " + model_config_to_json(net.config()));
    }
    const auto state = net.state();
    std::size_t expected_arrays = 3 + state.size();
    if (blob.arrays().size() != expected_arrays) {
        throw CheckpointMismatch("checkpoint holds " + std::to_string(blob.arrays().size()) + " arrays, expected " +
                                 std::to_string(expected_arrays));
    }
    for (const auto& [name, tensor] : state) {
        const std::string key = "state/" + name;
        if (!blob.has(key)) {
            throw CheckpointMismatch("checkpoint lacks tensor '" + name + "'");
        }
        const auto& a = blob.array(key);
        const std::vector<std::uint64_t> dims(tensor->shape().begin(), tensor->shape().end());
        if (a.dims != dims) {
            throw CheckpointMismatch("checkpoint tensor '" + name + "' has a different shape");
        }
        const auto values = blob.get<float>(key);
        for (std::size_t i = 0; i < values.size(); ++i) {
            (*tensor)[i] = static_cast<T>(values[i]);
        }
    }
    CheckpointMeta meta;
    meta.config_hash = blob.config_hash;
    meta.seed = blob.seed;
    meta.preprocess_hash = blob.get_text("preprocess_hash");
    meta.best_miou = blob.get<double>("best_miou").at(0);
    return meta;
}

ModelConfig checkpoint_model_config(const std::filesystem::path& path) {
    return stored_config(Blob::load(path));
}

template void save_checkpoint<float>(const std::filesystem::path&, GsecNet<float>&, const CheckpointMeta&);
template void save_checkpoint<double>(const std::filesystem::path&, GsecNet<double>&, const CheckpointMeta&);
template CheckpointMeta load_checkpoint<float>(const std::filesystem::path&, GsecNet<float>&);
template CheckpointMeta load_checkpoint<double>(const std::filesystem::path&, GsecNet<double>&);

}  // namespace gsec
