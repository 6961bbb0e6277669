#include "gsec/train.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>

#include "gsec/error.hpp"
#include "gsec/pipeline.hpp"
#include "gsec/rng.hpp"

namespace gsec {

std::string record_to_json(const TrainRecord& r) {
    nlohmann::json j;
    j["kind"] = r.kind;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["lr"] = r.lr;
    j["miou"] = r.miou ? nlohmann::json(*r.miou) : nlohmann::json(nullptr);
    j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
    return j.dump();
}

namespace {

PillarBatch batch_of(std::span<const TrainSample> data, std::span<const std::size_t> indices,
                     std::vector<std::uint8_t>* labels) {
    std::vector<const PillarTensor*> frames;
    if (labels != nullptr) {
        labels->clear();
    }
    for (const auto i : indices) {
        frames.push_back(&data[i].tensor);
        if (labels != nullptr) {
            labels->insert(labels->end(), data[i].labels.cells.begin(), data[i].labels.cells.end());
        }
    }
    return make_batch(frames);
}

void check_dataset(const GsecNet<float>& net, std::span<const TrainSample> data) {
    for (const auto& s : data) {
        const auto& cfg = net.config();
        if (s.tensor.rows != cfg.rows || s.tensor.cols != cfg.cols || s.labels.rows != cfg.rows ||
            s.labels.cols != cfg.cols) {
            throw ShapeMismatch("training sample grid differs from the model grid");
        }
    }
}

}  // namespace

ConfusionCounts evaluate_pillars(GsecNet<float>& net, std::span<const TrainSample> data, double threshold,
                                 int batch_size) {
    const bool was_training = net.training();
    net.set_training(false);
    ConfusionCounts counts;
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        indices.clear();
        for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
            indices.push_back(i);
        }
        const auto logits = net.forward(batch_of(data, indices, nullptr));
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const auto pred = threshold_logits(logits, static_cast<int>(k), threshold);
            counts += accumulate(pred.cells, data[indices[k]].labels.cells);
        }
    }
    net.set_training(was_training);
    return counts;
}

std::vector<std::vector<float>> snapshot_state(GsecNet<float>& net) {
    std::vector<std::vector<float>> out;
    for (const auto& [name, tensor] : net.state()) {
        out.emplace_back(tensor->data(), tensor->data() + tensor->size());
    }
    return out;
}

void restore_state(GsecNet<float>& net, const std::vector<std::vector<float>>& snapshot) {
    const auto state = net.state();
    if (state.size() != snapshot.size()) {
        throw ShapeMismatch("state snapshot does not match the network");
    }
    for (std::size_t k = 0; k < state.size(); ++k) {
        if (state[k].second->size() != snapshot[k].size()) {
            throw ShapeMismatch("state snapshot tensor '" + state[k].first + "' has a different size");
        }
        std::copy(snapshot[k].begin(), snapshot[k].end(), state[k].second->data());
    }
}

TrainResult train(GsecNet<float>& net, std::span<const TrainSample> data, const TrainOptions& options,
                  std::span<const TrainSample> validation) {
    if (data.empty()) {
        throw EmptyDataset("training needs at least one sample");
    }
    if (options.batch_size < 1 || options.epochs < 1 || options.max_steps < 0 || options.eval_every < 0) {
        throw InvalidParam("train: batch size and epochs must be >= 1, step counts >= 0");
    }
    check_dataset(net, data);
    const auto eval_set = validation.empty() ? data : validation;
    check_dataset(net, eval_set);

    Rng rng(options.seed);
    nn::Adam<float> adam(net.params(), options.adam);
    nn::PlateauScheduler scheduler(options.plateau);
    TrainResult result;
    net.set_training(true);

    auto emit = [&](TrainRecord r) {
        if (options.on_record) {
            options.on_record(r);
        }
        result.records.push_back(std::move(r));
    };
    std::int64_t last_eval_step = -1;
    auto evaluate = [&](int epoch, double loss) {
        const auto counts = evaluate_pillars(net, eval_set, options.threshold, options.batch_size);
        const auto s = scores(counts);
        const double miou = s.iou.value_or(0.0);
        TrainRecord r{"eval", epoch, result.steps, loss, adam.lr(), s.iou, s.accuracy};
        emit(r);
        if (miou > result.best_miou) {
            result.best_miou = miou;
            result.best_step = result.steps;
            result.best_state = snapshot_state(net);
        }
        last_eval_step = result.steps;
    };

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::uint8_t> labels;
    const auto batch = static_cast<std::size_t>(options.batch_size);
    bool done = false;
    // a step budget, when given, decides the length on its own
    const bool by_steps = options.max_steps > 0;
    for (int epoch = 1; (by_steps || epoch <= options.epochs) && !done; ++epoch) {
        shuffle(rng, order);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
            const auto input = batch_of(data, idx, &labels);
            adam.zero_grad();
            const auto logits = net.forward(input);
            const auto loss = nn::focal_loss(logits, labels, options.focal);
            net.backward(loss.grad);
            adam.step();
            ++result.steps;
            ++batches;
            loss_sum += loss.loss;
            result.step_losses.push_back(loss.loss);
            emit({"step", epoch, result.steps, loss.loss, adam.lr(), std::nullopt, std::nullopt});
            if (options.eval_every > 0 && result.steps % options.eval_every == 0) {
                evaluate(epoch, loss.loss);
            }
            if (options.max_steps > 0 && result.steps >= options.max_steps) {
                done = true;
                break;
            }
        }
        const double mean_loss = loss_sum / batches;
        double lr = adam.lr();
        if (scheduler.observe(mean_loss, lr)) {
            adam.set_lr(lr);
        }
        result.epochs = epoch;
        if (options.eval_every == 0 && last_eval_step != result.steps) {
            evaluate(epoch, mean_loss);
        }
        emit({"epoch", epoch, result.steps, mean_loss, adam.lr(), std::nullopt, std::nullopt});
    }
    if (last_eval_step != result.steps) {
        evaluate(result.epochs, result.step_losses.back());
    }
    result.final_lr = adam.lr();
    return result;
}

}  // namespace gsec
