#pragma once

#include <functional>

#include "csdnet/data.hpp"
#include "csdnet/losses.hpp"
#include "csdnet/model.hpp"

namespace csdnet {

struct TrainConfig {
    int epochs = 100;
    real learning_rate = 1e-4;
    int batch_size = 4;
    std::uint64_t seed = 1;
    bool hflip = false;
    int eval_every = 5; // holdout evaluation period in epochs; 0 disables

    void validate() const;
};

struct EpochInfo {
    int epoch = 0;
    real mean_loss = 0;
    bool has_holdout_mae = false;
    real holdout_mae = 0;
    bool is_best = false;
};
using EpochCallback = std::function<void(const EpochInfo&)>;

struct TrainResult {
    std::vector<real> epoch_losses;
    real best_mae = 0;
    int best_epoch = -1;
    bool has_best = false;
};

/// Eval-mode full-resolution saliency maps, one 2-d plane per sample.
std::vector<Tensor> predict_maps(CsdNet& model, const std::vector<Sample>& samples,
                                 int batch_size = 4);

/// Mean MAE of eval-mode predictions against the sample ground truths.
real evaluate_mae(CsdNet& model, const std::vector<Sample>& samples, int batch_size = 4);

/// Joint encoder-decoder training on the deep-supervised objective.
/// Deterministic per (config seed, start_epoch); the callback fires once per
/// epoch after any holdout evaluation. Throws NumericError on non-finite loss.
TrainResult train_sod(CsdNet& model, AdamOptimizer& opt,
                      const std::vector<Sample>& train_set,
                      const std::vector<Sample>& holdout, const TrainConfig& cfg,
                      int start_epoch = 0, const EpochCallback& callback = {});

} // namespace csdnet
