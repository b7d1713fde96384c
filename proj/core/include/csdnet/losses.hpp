#pragma once

#include "csdnet/decoder.hpp"
#include "csdnet/encoder.hpp"
#include "csdnet/nn.hpp"

namespace csdnet {

struct TransferWeights {
    real w1 = 1.0, w2 = 0.5, w3 = 0.5, w4 = 0.5;
    void validate() const;
};

/// Channel-attentive weights: global pool -> 1x1 conv -> ReLU -> 1x1 conv ->
/// sigmoid -> global normalization over channels. The input is detached, so
/// no gradient reaches the feature; the small conv stack itself is trainable.
struct ChannelAttention {
    Conv2dLayer reduce, expand;

    ChannelAttention() = default;
    ChannelAttention(int channels, int reduction, Rng& rng);
    Var forward(const Var& f) const; // [N,C,1,1], sums to 1 over C
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Spatial analogue: pool over channels, the same conv/ReLU/conv/sigmoid
/// stack applied per location, normalized over locations.
struct SpatialAttention {
    Conv2dLayer reduce, expand;

    SpatialAttention() = default;
    SpatialAttention(int hidden, Rng& rng);
    Var forward(const Var& f) const; // [N,1,H,W], sums to 1 over H*W
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Semantic transfer: channel-weighted MSE between plane-normalized tensors.
/// The source side (attention and MSE operand) is detached.
Var stl_loss(const ChannelAttention& att, const Var& f_src, const Var& f_dst);

/// Geometric transfer: spatially weighted MSE between channel-normalized
/// tensors; source side detached.
Var gtl_loss(const SpatialAttention& att, const Var& f_src, const Var& f_dst);

/// w1 * MSE(proj, embedding) + w2 * STL(proj -> embedding). The MSE term is
/// not detached and carries the pre-training signal.
Var sal_loss(const ChannelAttention& att_proj, const Var& proj_d4, const Var& s_d,
             const TransferWeights& w);

/// All attention stacks for the pre-training objective. Semantic terms run
/// over the deep stages {3,4,5}, geometric terms over the shallow stages
/// {1,2,3}.
class SamaepLossModule {
public:
    SamaepLossModule() = default;
    SamaepLossModule(const std::vector<int>& stage_channels, int embed_channels,
                     int reduction, int spatial_hidden, Rng& rng);

    struct Terms {
        Var sal, stl_dt, stl_td, gtl_dt, gtl_td, total;
    };
    Terms terms(const FeaturePyramid& pyr_d, const FeaturePyramid& pyr_t,
                const Var& proj_d4, const Var& s_d, const TransferWeights& w) const;
    Var total(const FeaturePyramid& pyr_d, const FeaturePyramid& pyr_t,
              const Var& proj_d4, const Var& s_d, const TransferWeights& w) const;

    const ChannelAttention& proj_attention() const { return sal_att_; }
    void collect(const std::string& prefix, ParamList& out) const;

private:
    std::array<ChannelAttention, 3> stl_att_d_, stl_att_t_; // stages 3,4,5
    std::array<SpatialAttention, 3> gtl_att_d_, gtl_att_t_; // stages 1,2,3
    ChannelAttention sal_att_;
};

/// Morphological gradient with a 3x3 element: maxpool(m) - minpool(m).
/// Zero on constant regions; differentiable for soft inputs.
Var extract_boundary(const Var& m);

/// 1 - (sum(PG)+eps) / (sum(P)+sum(G)-sum(PG)+eps), per sample, batch mean.
Var iou_loss(const Var& p, const Var& g, real eps = 1.0);

/// iou_loss + mean binary cross-entropy (predictions clamped to
/// [1e-6, 1-1e-6]).
Var ioubce(const Var& p, const Var& g);

/// Deep-supervised objective over {O, O_1, O_2}: each prediction is
/// upsampled to ground-truth resolution and charged region and boundary
/// ioubce terms; returns the three-term sum.
Var sod_loss(const DecoderOutputs& outs, const Var& gt);

} // namespace csdnet
