#include "csdnet/encoder.hpp"

#include <cmath>

#include "csdnet/errors.hpp"

namespace csdnet {

int make_divisible(real v, int divisor) {
    int nv = std::max(divisor, (static_cast<int>(v + divisor / 2.0) / divisor) * divisor);
    if (nv < 0.9 * v) nv += divisor;
    return nv;
}

namespace {

struct BlockSpec {
    int expand_ratio, channels, repeats, stride;
};

// Inverted-residual ladder; taps sit after the 1st, 2nd, 3rd, 5th and 7th
// groups, i.e. after each spatial halving.
constexpr BlockSpec kBlockSpecs[] = {
    {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
    {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
};
constexpr int kTapGroups[5] = {0, 1, 2, 4, 6};

} // namespace

void EncoderConfig::finalize() {
    if (!(width_multiplier > 0) || width_multiplier > 1.0)
        throw ConfigError("encoder: width_multiplier must lie in (0,1]");
    if (input_h % 32 != 0 || input_w % 32 != 0)
        throw ConfigError("encoder: input size must be divisible by 32, got " +
                          std::to_string(input_h) + "x" + std::to_string(input_w));
    std::vector<int> computed;
    for (int g : kTapGroups)
        computed.push_back(make_divisible(kBlockSpecs[g].channels * width_multiplier));
    if (stage_channels.empty()) {
        stage_channels = computed;
    } else if (stage_channels != computed) {
        throw ConfigError("encoder: stage_channels inconsistent with width multiplier");
    }
}

Var Backbone::InvertedResidual::forward(const Var& x) {
    Var h = x;
    if (has_expand) h = relu6(bn_expand.forward(expand.forward(h)));
    h = relu6(bn_dw.forward(dw.forward(h)));
    h = bn_project.forward(project.forward(h));
    if (use_residual) h = add(h, x);
    return h;
}

Backbone::Backbone(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.finalize();
    const real w = cfg_.width_multiplier;
    const int in_ch = cfg_.input_replicate ? 3 : 1;
    const int stem_ch = make_divisible(32 * w);
    stem_ = Conv2dLayer(in_ch, stem_ch, 3, 2, 1, 1, false, rng);
    stem_bn_ = BatchNorm2dLayer(stem_ch);

    int cin = stem_ch;
    int group_idx = 0, tap_idx = 0;
    for (const BlockSpec& spec : kBlockSpecs) {
        const int cout = make_divisible(spec.channels * w);
        for (int r = 0; r < spec.repeats; ++r) {
            InvertedResidual blk;
            const int stride = r == 0 ? spec.stride : 1;
            const int hidden = cin * spec.expand_ratio;
            blk.has_expand = spec.expand_ratio != 1;
            if (blk.has_expand) {
                blk.expand = Conv2dLayer(cin, hidden, 1, 1, 0, 1, false, rng);
                blk.bn_expand = BatchNorm2dLayer(hidden);
            }
            blk.dw = Conv2dLayer(hidden, hidden, 3, stride, 1, hidden, false, rng);
            blk.bn_dw = BatchNorm2dLayer(hidden);
            blk.project = Conv2dLayer(hidden, cout, 1, 1, 0, 1, false, rng);
            blk.bn_project = BatchNorm2dLayer(cout);
            blk.use_residual = stride == 1 && cin == cout;
            blocks_.push_back(std::move(blk));
            cin = cout;
        }
        if (tap_idx < 5 && kTapGroups[tap_idx] == group_idx)
            tap_after_block_[tap_idx++] = static_cast<int>(blocks_.size()) - 1;
        ++group_idx;
    }
}

FeaturePyramid Backbone::forward(const Var& image, const Tensor* gate) {
    const Tensor& iv = image.value();
    if (iv.ndim() != 4 || iv.dim(1) != 1)
        throw ShapeError("encoder expects [N,1,H,W] input, got " + iv.shape_str());
    if (iv.dim(2) != cfg_.input_h || iv.dim(3) != cfg_.input_w)
        throw ShapeError("encoder: input is " + std::to_string(iv.dim(2)) + "x" +
                         std::to_string(iv.dim(3)) + ", configured " +
                         std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w));
    Var h = image;
    if (cfg_.input_replicate) h = concat_channels({h, h, h});
    h = add_scalar(mul_scalar(h, 2.0), -1.0); // [0,1] -> [-1,1]
    h = relu6(stem_bn_.forward(stem_.forward(h)));

    FeaturePyramid pyr;
    int tap_idx = 0;
    for (size_t b = 0; b < blocks_.size(); ++b) {
        h = blocks_[b].forward(h);
        if (tap_idx < 5 && tap_after_block_[static_cast<size_t>(tap_idx)] == static_cast<int>(b)) {
            if (tap_idx == 0 && gate != nullptr) h = residual_gate(h, *gate);
            pyr.stages[static_cast<size_t>(tap_idx)] = h;
            ++tap_idx;
        }
    }
    for (const Var& s : pyr.stages)
        if (!s.value().all_finite())
            throw NumericError("encoder produced non-finite activations");
    return pyr;
}

void Backbone::collect(const std::string& prefix, ParamList& out) {
    stem_.collect(prefix + ".stem.conv", out);
    stem_bn_.collect(prefix + ".stem.bn", out);
    for (size_t b = 0; b < blocks_.size(); ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        InvertedResidual& blk = blocks_[b];
        if (blk.has_expand) {
            blk.expand.collect(bp + ".expand.conv", out);
            blk.bn_expand.collect(bp + ".expand.bn", out);
        }
        blk.dw.collect(bp + ".dw.conv", out);
        blk.bn_dw.collect(bp + ".dw.bn", out);
        blk.project.collect(bp + ".project.conv", out);
        blk.bn_project.collect(bp + ".project.bn", out);
    }
}

void Backbone::set_training(bool training) {
    stem_bn_.training = training;
    for (InvertedResidual& blk : blocks_) {
        blk.bn_expand.training = training;
        blk.bn_dw.training = training;
        blk.bn_project.training = training;
    }
}

} // namespace csdnet
