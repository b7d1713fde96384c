#include "csdnet/decoder.hpp"

#include "csdnet/errors.hpp"

namespace csdnet {

Decoder::Decoder(const std::vector<int>& enc_channels, const std::vector<int>& widths,
                 Rng& rng)
    : widths_(widths) {
    if (enc_channels.size() != 5 || widths.size() != 5)
        throw ConfigError("decoder: expected five encoder channels and five widths");
    for (int k = 0; k < 5; ++k) {
        const int stage = 5 - k;
        const int enc_c = enc_channels[static_cast<size_t>(stage - 1)];
        const int out_c = widths_[static_cast<size_t>(k)];
        fuse_[static_cast<size_t>(k)] = Conv2dLayer(enc_c, out_c, 1, 1, 0, 1, false, rng);
        const int in_c = k == 0 ? out_c : widths_[static_cast<size_t>(k - 1)] + out_c;
        stages_[static_cast<size_t>(k)].conv = Conv2dLayer(in_c, out_c, 3, 1, 1, 1, false, rng);
        stages_[static_cast<size_t>(k)].bn = BatchNorm2dLayer(out_c);
    }
    const int w1 = widths_[4];
    full_res_.conv = Conv2dLayer(w1, w1, 3, 1, 1, 1, false, rng);
    full_res_.bn = BatchNorm2dLayer(w1);
    for (int i = 0; i < 4; ++i)
        heads_[static_cast<size_t>(i)] =
            Conv2dLayer(widths_[static_cast<size_t>(5 - (i + 1))], 1, 1, 1, 0, 1, true, rng);
    head_o_ = Conv2dLayer(w1, 1, 1, 1, 0, 1, true, rng);
}

Var Decoder::fuse_skip(int stage, const Var& f_d, const Var& f_t) const {
    Tensor::check_same_shape(f_d.value(), f_t.value(), "fuse_skip");
    return fuse_[static_cast<size_t>(5 - stage)].forward(add(f_d, f_t));
}

DecoderOutputs Decoder::decode(const FeaturePyramid& pyr_d, const FeaturePyramid& pyr_t,
                               const Var& ican_out) {
    std::array<Var, 5> d; // d[k]: stage-(5-k) tensor
    for (int k = 0; k < 5; ++k) {
        const int stage = 5 - k;
        Var fused = fuse_skip(stage, pyr_d.stage(stage), pyr_t.stage(stage));
        Var in;
        if (k == 0) {
            in = fused;
        } else {
            const Tensor& fv = fused.value();
            Var up = bilinear_resize(d[static_cast<size_t>(k - 1)], fv.dim(2), fv.dim(3));
            in = concat_channels({up, fused});
        }
        Var out = stages_[static_cast<size_t>(k)].forward(in);
        if (stage == 4 && ican_out.defined()) {
            Tensor::check_same_shape(out.value(), ican_out.value(), "ican injection");
            out = add(out, ican_out);
        }
        d[static_cast<size_t>(k)] = out;
    }
    const Tensor& d1v = d[4].value();
    Var d0 = full_res_.forward(bilinear_resize(d[4], d1v.dim(2) * 2, d1v.dim(3) * 2));

    DecoderOutputs outs;
    outs.o = sigmoid(head_o_.forward(d0));
    for (int i = 1; i <= 4; ++i)
        outs.o_i[static_cast<size_t>(i - 1)] =
            sigmoid(heads_[static_cast<size_t>(i - 1)].forward(d[static_cast<size_t>(5 - i)]));
    return outs;
}

void Decoder::collect(const std::string& prefix, ParamList& out) {
    for (int k = 0; k < 5; ++k) {
        const std::string sp = prefix + ".stage" + std::to_string(5 - k);
        fuse_[static_cast<size_t>(k)].collect(sp + ".fuse.conv", out);
        stages_[static_cast<size_t>(k)].conv.collect(sp + ".conv", out);
        stages_[static_cast<size_t>(k)].bn.collect(sp + ".bn", out);
    }
    full_res_.conv.collect(prefix + ".full.conv", out);
    full_res_.bn.collect(prefix + ".full.bn", out);
    for (int i = 0; i < 4; ++i)
        heads_[static_cast<size_t>(i)].collect(prefix + ".head_o" + std::to_string(i + 1),
                                               out);
    head_o_.collect(prefix + ".head_o", out);
}

void Decoder::set_training(bool training) {
    for (auto& s : stages_) s.bn.training = training;
    full_res_.bn.training = training;
}

} // namespace csdnet
