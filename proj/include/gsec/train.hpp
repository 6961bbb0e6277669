#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsec/metrics.hpp"
#include "gsec/model.hpp"
#include "gsec/nn/loss.hpp"
#include "gsec/nn/optim.hpp"

namespace gsec {

struct TrainSample {
    PillarTensor tensor;
    BinaryMap labels;
};

struct TrainRecord {
    std::string kind;  // "step", "eval" or "epoch"
    int epoch = 0;
    std::int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> miou;
    std::optional<double> accuracy;
};

std::string record_to_json(const TrainRecord& record);

struct TrainOptions {
    int batch_size = 16;
    int epochs = 20;
    std::int64_t max_steps = 0;   // > 0 overrides epochs; 0: run `epochs` epochs
    std::int64_t eval_every = 0;  // 0: evaluate after each epoch
    nn::AdamOptions adam;
    nn::PlateauOptions plateau;
    nn::FocalLossOptions focal;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    std::function<void(const TrainRecord&)> on_record;
};

struct TrainResult {
    std::vector<double> step_losses;
    std::vector<TrainRecord> records;
    double best_miou = -1.0;
    std::int64_t best_step = 0;
    std::vector<std::vector<float>> best_state;  // snapshot in GsecNet::state() order
    std::int64_t steps = 0;
    int epochs = 0;
    double final_lr = 0.0;
};

/// Pillar-level confusion counts over every cell of every sample, in
/// inference mode.
ConfusionCounts evaluate_pillars(GsecNet<float>& net, std::span<const TrainSample> data, double threshold,
                                 int batch_size);

/// Seeded shuffled epochs of Adam steps on the focal loss with a plateau
/// schedule on the epoch-mean loss. The model state with the best pillar
/// mIoU on `validation` (the training set when empty) is kept in the result.
TrainResult train(GsecNet<float>& net, std::span<const TrainSample> data, const TrainOptions& options,
                  std::span<const TrainSample> validation = {});

std::vector<std::vector<float>> snapshot_state(GsecNet<float>& net);
void restore_state(GsecNet<float>& net, const std::vector<std::vector<float>>& snapshot);

}  // namespace gsec
