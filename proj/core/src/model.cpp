#include "csdnet/model.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "csdnet/errors.hpp"

namespace csdnet {

void CsdNetConfig::finalize() {
    encoder.finalize();
    if (decoder_widths.size() != 5)
        throw ConfigError("model: decoder_widths must list five stages");
    if (se_reduction < 1) throw ConfigError("model: se_reduction must be >= 1");
    if (cfar_enabled) {
        cfar_depth.validate();
        cfar_thermal.validate();
    }
}

std::vector<int> CsdNetConfig::scaled_decoder_widths() const {
    std::vector<int> widths;
    widths.reserve(decoder_widths.size());
    for (int w : decoder_widths)
        widths.push_back(make_divisible(w * encoder.width_multiplier, 4));
    return widths;
}

CsdNet::CsdNet(CsdNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.finalize();
    Rng rng(cfg_.seed);
    depth_enc_ = Backbone(cfg_.encoder, rng);
    thermal_enc_ = Backbone(cfg_.encoder, rng);
    const std::vector<int> widths = cfg_.scaled_decoder_widths();
    if (cfg_.ican_enabled)
        ican_.emplace(cfg_.encoder.stage_channels[4], widths[1], cfg_.se_reduction, rng);
    decoder_ = Decoder(cfg_.encoder.stage_channels, widths, rng);
}

std::pair<BinaryMask, BinaryMask> CsdNet::prescreen(const Tensor& depth_plane,
                                                    const Tensor& thermal_plane) const {
    return cross_prescreen(depth_plane, thermal_plane, cfg_.cfar_depth, cfg_.cfar_thermal);
}

DecoderOutputs CsdNet::forward(const Var& depth, const Var& thermal) {
    Tensor::check_same_shape(depth.value(), thermal.value(), "model forward");
    const Tensor& dv = depth.value();
    const int N = dv.dim(0), H = dv.dim(2), W = dv.dim(3);

    Tensor mask_d_stack, mask_t_stack;
    if (cfg_.cfar_enabled) {
        mask_d_stack = Tensor({N, H, W});
        mask_t_stack = Tensor({N, H, W});
        const long long hw = static_cast<long long>(H) * W;
        for (int n = 0; n < N; ++n) {
            Tensor dpl({H, W}), tpl({H, W});
            std::copy_n(dv.data() + static_cast<long long>(n) * hw, hw, dpl.data());
            std::copy_n(thermal.value().data() + static_cast<long long>(n) * hw, hw,
                        tpl.data());
            auto [md, mt] = prescreen(dpl, tpl);
            for (long long i = 0; i < hw; ++i) {
                mask_d_stack[static_cast<long long>(n) * hw + i] = md.v[static_cast<size_t>(i)];
                mask_t_stack[static_cast<long long>(n) * hw + i] = mt.v[static_cast<size_t>(i)];
            }
        }
    }

    // Each stream is gated by the OTHER modality's mask.
    FeaturePyramid pyr_d =
        depth_enc_.forward(depth, cfg_.cfar_enabled ? &mask_t_stack : nullptr);
    FeaturePyramid pyr_t =
        thermal_enc_.forward(thermal, cfg_.cfar_enabled ? &mask_d_stack : nullptr);

    Var ican_out;
    if (ican_) ican_out = ican_->forward(pyr_d.stage(5), pyr_t.stage(5));
    return decoder_.decode(pyr_d, pyr_t, ican_out);
}

ParamList CsdNet::params() {
    ParamList out;
    depth_enc_.collect("depth_encoder", out);
    thermal_enc_.collect("thermal_encoder", out);
    if (ican_) ican_->collect("ican", out);
    decoder_.collect("decoder", out);
    return out;
}

long long CsdNet::count_parameters() { return params().count(); }

void CsdNet::set_training(bool training) {
    depth_enc_.set_training(training);
    thermal_enc_.set_training(training);
    if (ican_) ican_->set_training(training);
    decoder_.set_training(training);
}

CostReport report_cost(const CsdNetConfig& cfg, int iterations) {
    CsdNet model(cfg);
    model.set_training(false);
    CostReport rep;
    ParamList pl = model.params();
    rep.total_params = pl.count();
    for (const char* prefix : {"depth_encoder", "thermal_encoder", "ican", "decoder"})
        rep.module_params.emplace_back(prefix, pl.count_prefix(prefix));
    rep.input_h = model.config().encoder.input_h;
    rep.input_w = model.config().encoder.input_w;

    std::mt19937_64 rng(71);
    std::uniform_real_distribution<real> uni(0.0, 1.0);
    Tensor d({1, 1, rep.input_h, rep.input_w}), t({1, 1, rep.input_h, rep.input_w});
    for (long long i = 0; i < d.numel(); ++i) d[i] = uni(rng);
    for (long long i = 0; i < t.numel(); ++i) t[i] = uni(rng);

    {
        NoGradGuard ng;
        FlopCounter counter;
        model.forward(constant(d), constant(t));
        rep.flops = counter.flops();
    }

    std::vector<real> times;
    times.reserve(static_cast<size_t>(std::max(iterations, 0)));
    for (int it = 0; it < iterations; ++it) {
        NoGradGuard ng;
        const auto t0 = std::chrono::steady_clock::now();
        model.forward(constant(d), constant(t));
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<real, std::milli>(t1 - t0).count());
    }
    rep.timed_iterations = iterations;
    if (!times.empty()) {
        real sum = 0;
        for (real v : times) sum += v;
        rep.latency_ms_mean = sum / static_cast<real>(times.size());
        std::sort(times.begin(), times.end());
        rep.latency_ms_median = times[times.size() / 2];
    }
    return rep;
}

} // namespace csdnet
