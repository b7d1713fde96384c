#pragma once

#include <memory>
#include <optional>

#include "csdnet/decoder.hpp"
#include "csdnet/encoder.hpp"
#include "csdnet/ican.hpp"

namespace csdnet {

struct CsdNetConfig {
    EncoderConfig encoder;
    std::vector<int> decoder_widths = {320, 160, 64, 32, 16}; // stage 5..1, pre-multiplier
    int se_reduction = 4;
    bool cfar_enabled = true;
    bool ican_enabled = true;
    CfarConfig cfar_depth;
    CfarConfig cfar_thermal;
    std::uint64_t seed = 1;

    /// Validates the configuration (idempotent).
    void finalize();
    /// Decoder widths after the encoder width multiplier.
    std::vector<int> scaled_decoder_widths() const;
};

/// The full depth-thermal network: two independent encoder streams with
/// cross-injected prescreening masks, the deep soft-logic fusion path, and
/// the top-down decoder.
class CsdNet {
public:
    explicit CsdNet(CsdNetConfig cfg);

    CsdNet(const CsdNet&) = delete;
    CsdNet& operator=(const CsdNet&) = delete;

    /// Raw [N,1,H,W] batches with values in [0,1]. Prescreening masks are
    /// computed per sample when enabled and crossed between the streams.
    DecoderOutputs forward(const Var& depth, const Var& thermal);

    /// Prescreening masks for one sample pair (depth gated by thermal's mask
    /// and vice versa happens inside forward).
    std::pair<BinaryMask, BinaryMask> prescreen(const Tensor& depth_plane,
                                                const Tensor& thermal_plane) const;

    ParamList params();
    long long count_parameters();
    void set_training(bool training);

    const CsdNetConfig& config() const { return cfg_; }
    Backbone& depth_encoder() { return depth_enc_; }
    Backbone& thermal_encoder() { return thermal_enc_; }
    Decoder& decoder() { return decoder_; }

private:
    CsdNetConfig cfg_;
    Backbone depth_enc_, thermal_enc_;
    std::optional<IcanFusion> ican_;
    Decoder decoder_;
};

struct CostReport {
    long long total_params = 0;
    std::vector<std::pair<std::string, long long>> module_params;
    long long flops = 0;        // 2 * MAC over conv/linear layers
    real latency_ms_mean = 0;   // per-image forward, eval mode
    real latency_ms_median = 0;
    int timed_iterations = 0;
    int input_h = 0, input_w = 0;
};

/// Parameter count, analytic FLOP estimate at the configured input size, and
/// wall-clock latency over `iterations` timed single-image inferences.
CostReport report_cost(const CsdNetConfig& cfg, int iterations = 50);

} // namespace csdnet
