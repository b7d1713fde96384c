#pragma once

#include "csdnet/encoder.hpp"
#include "csdnet/nn.hpp"

namespace csdnet {

/// Post-sigmoid saliency maps: O at full input resolution, O_i at
/// (H/2^i, W/2^i) for i = 1..4. Only O, O_1, O_2 carry loss; O_3, O_4 are
/// diagnostic taps.
struct DecoderOutputs {
    Var o;
    std::array<Var, 4> o_i; // o_i[k] = O_{k+1}

    const Var& intermediate(int i) const { return o_i[static_cast<size_t>(i - 1)]; }
};

/// Top-down refiner over the two pyramids. Each stage:
///   concat(upsample x2 (previous), fuse_skip(stage i)) -> 3x3 conv -> BN -> GELU
/// with the ICAN injection added to the stage-4 tensor.
class Decoder {
public:
    Decoder() = default;
    /// `widths` are the stage widths from stage 5 down to stage 1.
    Decoder(const std::vector<int>& encoder_stage_channels, const std::vector<int>& widths,
            Rng& rng);

    /// 1x1-projected elementwise sum of the two modality features at a stage
    /// (1-based).
    Var fuse_skip(int stage, const Var& f_d, const Var& f_t) const;

    /// `ican_out`, when defined, must match the stage-4 tensor shape.
    DecoderOutputs decode(const FeaturePyramid& pyr_d, const FeaturePyramid& pyr_t,
                          const Var& ican_out);

    int stage_width(int stage) const { return widths_[static_cast<size_t>(5 - stage)]; }
    void collect(const std::string& prefix, ParamList& out);
    void set_training(bool training);

private:
    struct StageBlock {
        Conv2dLayer conv;
        BatchNorm2dLayer bn;
        Var forward(const Var& x) { return gelu(bn.forward(conv.forward(x))); }
    };

    std::vector<int> widths_; // stage 5 .. stage 1
    std::array<Conv2dLayer, 5> fuse_;   // fuse_[k] serves stage 5-k
    std::array<StageBlock, 5> stages_;  // stages_[k] produces the stage-(5-k) tensor
    StageBlock full_res_;
    std::array<Conv2dLayer, 4> heads_;  // heads_[i] predicts O_{i+1}
    Conv2dLayer head_o_;
};

} // namespace csdnet
