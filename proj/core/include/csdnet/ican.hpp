#pragma once

#include "csdnet/nn.hpp"

namespace csdnet {

/// Elementwise soft-logic combination of the SE-weighted deepest features.
/// Invariants: and_map <= or_map, xor_map = or_map - and_map >= 0.
struct SoftLogicResult {
    Var and_map, or_map, xor_map;
    Var concat; // [AND | OR | XOR] along channels
};

/// min / max / abs-difference of two equal-shaped tensors, concatenated in
/// (AND, OR, XOR) order.
SoftLogicResult soft_logic(const Var& w_d5, const Var& w_t5);

/// Deep-fusion path: SE-reweight both stage-5 features, combine with soft
/// logic, project, normalize, activate, and upsample x2 for the additive
/// injection into the decoder's stage-4 tensor.
class IcanFusion {
public:
    IcanFusion() = default;
    IcanFusion(int stage5_channels, int out_channels, int se_reduction, Rng& rng);

    /// SE weighting of one stream's deepest feature.
    Var se_reweight_depth(const Var& f_d5) const { return se_d_.forward(f_d5); }
    Var se_reweight_thermal(const Var& f_t5) const { return se_t_.forward(f_t5); }

    /// conv 1x1 -> batch norm -> GELU -> bilinear x2. Output channel count is
    /// the decoder stage-4 width; spatial size doubles.
    Var inject(const SoftLogicResult& l5);

    /// Full path from the two stage-5 features.
    Var forward(const Var& f_d5, const Var& f_t5);

    void collect(const std::string& prefix, ParamList& out);
    void set_training(bool training) { bn_.training = training; }
    int out_channels() const { return out_channels_; }

private:
    SqueezeExcite se_d_, se_t_;
    Conv2dLayer proj_;
    BatchNorm2dLayer bn_;
    int out_channels_ = 0;
};

} // namespace csdnet
