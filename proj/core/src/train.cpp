#include "csdnet/train.hpp"

#include <algorithm>
#include <cmath>

#include "csdnet/errors.hpp"
#include "csdnet/metrics.hpp"

namespace csdnet {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
}

namespace {

Tensor hflip_plane(const Tensor& p) {
    const int H = p.dim(0), W = p.dim(1);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(y, x) = p.at(y, W - 1 - x);
    return out;
}

// Stateless per-sample coin so resumed runs reproduce the augmentation.
bool flip_coin(std::uint64_t seed, int epoch, size_t index) {
    std::uint64_t h = seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(epoch) + 1));
    h ^= (index + 0x61c88647ULL) * 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ULL;
    h ^= h >> 33;
    return (h & 1ULL) != 0;
}

} // namespace

std::vector<Tensor> predict_maps(CsdNet& model, const std::vector<Sample>& samples,
                                 int batch_size) {
    model.set_training(false);
    NoGradGuard ng;
    std::vector<Tensor> maps;
    maps.reserve(samples.size());
    const size_t n = samples.size();
    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
        std::vector<size_t> idx(all.begin() + static_cast<long>(start),
                                all.begin() + static_cast<long>(std::min(
                                                  n, start + static_cast<size_t>(batch_size))));
        Batch b = make_batch(samples, idx);
        DecoderOutputs outs = model.forward(constant(b.depth), constant(b.thermal));
        const Tensor& o = outs.o.value();
        const int H = o.dim(2), W = o.dim(3);
        const long long hw = static_cast<long long>(H) * W;
        for (size_t k = 0; k < idx.size(); ++k) {
            Tensor plane({H, W});
            std::copy_n(o.data() + static_cast<long long>(k) * hw, hw, plane.data());
            maps.push_back(std::move(plane));
        }
    }
    return maps;
}

real evaluate_mae(CsdNet& model, const std::vector<Sample>& samples, int batch_size) {
    if (samples.empty()) throw DataError("evaluate_mae: empty sample set");
    std::vector<Tensor> maps = predict_maps(model, samples, batch_size);
    real sum = 0;
    for (size_t i = 0; i < samples.size(); ++i)
        sum += mae_metric(maps[i], samples[i].gt);
    return sum / static_cast<real>(samples.size());
}

TrainResult train_sod(CsdNet& model, AdamOptimizer& opt,
                      const std::vector<Sample>& train_set,
                      const std::vector<Sample>& holdout, const TrainConfig& cfg,
                      int start_epoch, const EpochCallback& callback) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training set");
    TrainResult result;
    const size_t n = train_set.size();
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        model.set_training(true);
        const std::vector<size_t> order = epoch_order(n, cfg.seed, epoch);
        real epoch_loss = 0;
        int steps = 0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<size_t> idx(order.begin() + static_cast<long>(start),
                                    order.begin() +
                                        static_cast<long>(std::min(
                                            n, start + static_cast<size_t>(cfg.batch_size))));
            Batch batch = make_batch(train_set, idx);
            if (cfg.hflip) {
                const int H = batch.gt.dim(2), W = batch.gt.dim(3);
                const long long hw = static_cast<long long>(H) * W;
                for (size_t k = 0; k < idx.size(); ++k) {
                    if (!flip_coin(cfg.seed, epoch, idx[k])) continue;
                    for (Tensor* t : {&batch.depth, &batch.thermal, &batch.gt}) {
                        Tensor plane({H, W});
                        std::copy_n(t->data() + static_cast<long long>(k) * hw, hw,
                                    plane.data());
                        plane = hflip_plane(plane);
                        std::copy_n(plane.data(), hw,
                                    t->data() + static_cast<long long>(k) * hw);
                    }
                }
            }
            opt.zero_grad();
            DecoderOutputs outs =
                model.forward(constant(batch.depth), constant(batch.thermal));
            Var loss = sod_loss(outs, constant(batch.gt));
            if (!std::isfinite(loss.item()))
                throw NumericError("train: non-finite loss at epoch " +
                                   std::to_string(epoch));
            backward(loss);
            opt.step();
            epoch_loss += loss.item();
            ++steps;
        }
        EpochInfo info;
        info.epoch = epoch;
        info.mean_loss = epoch_loss / std::max(1, steps);
        result.epoch_losses.push_back(info.mean_loss);
        const bool last = epoch + 1 == cfg.epochs;
        if (!holdout.empty() && cfg.eval_every > 0 &&
            ((epoch + 1) % cfg.eval_every == 0 || last)) {
            info.has_holdout_mae = true;
            info.holdout_mae = evaluate_mae(model, holdout, cfg.batch_size);
            if (!result.has_best || info.holdout_mae < result.best_mae) {
                result.best_mae = info.holdout_mae;
                result.best_epoch = epoch;
                result.has_best = true;
                info.is_best = true;
            }
        }
        if (callback) callback(info);
    }
    return result;
}

} // namespace csdnet
