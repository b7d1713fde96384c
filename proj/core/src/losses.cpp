#include "csdnet/losses.hpp"

#include "csdnet/errors.hpp"

namespace csdnet {

void TransferWeights::validate() const {
    if (w1 < 0 || w2 < 0 || w3 < 0 || w4 < 0)
        throw ConfigError("transfer weights must be non-negative");
}

ChannelAttention::ChannelAttention(int channels, int reduction, Rng& rng) {
    const int hidden = std::max(1, channels / reduction);
    reduce = Conv2dLayer(channels, hidden, 1, 1, 0, 1, true, rng);
    expand = Conv2dLayer(hidden, channels, 1, 1, 0, 1, true, rng);
}

Var ChannelAttention::forward(const Var& f) const {
    Var h = reduce_plane_mean(detach(f));
    h = sigmoid(expand.forward(relu(reduce.forward(h))));
    return gnorm_channels(h);
}

void ChannelAttention::collect(const std::string& prefix, ParamList& out) const {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
}

SpatialAttention::SpatialAttention(int hidden, Rng& rng) {
    reduce = Conv2dLayer(1, hidden, 1, 1, 0, 1, true, rng);
    expand = Conv2dLayer(hidden, 1, 1, 1, 0, 1, true, rng);
}

Var SpatialAttention::forward(const Var& f) const {
    Var h = reduce_channel_mean(detach(f));
    h = sigmoid(expand.forward(relu(reduce.forward(h))));
    return gnorm_spatial(h);
}

void SpatialAttention::collect(const std::string& prefix, ParamList& out) const {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
}

Var stl_loss(const ChannelAttention& att, const Var& f_src, const Var& f_dst) {
    Tensor::check_same_shape(f_src.value(), f_dst.value(), "stl");
    const int batch = f_src.value().dim(0);
    Var w = att.forward(f_src);
    Var a = l2norm_planes(detach(f_src));
    Var b = l2norm_planes(f_dst);
    Var d = sub(a, b);
    Var per_channel = reduce_plane_mean(mul(d, d)); // [N,C,1,1]
    return mul_scalar(reduce_sum(mul(w, per_channel)), 1.0 / batch);
}

Var gtl_loss(const SpatialAttention& att, const Var& f_src, const Var& f_dst) {
    Tensor::check_same_shape(f_src.value(), f_dst.value(), "gtl");
    const int batch = f_src.value().dim(0);
    Var w = att.forward(f_src);
    Var a = l2norm_channels(detach(f_src));
    Var b = l2norm_channels(f_dst);
    Var d = sub(a, b);
    Var per_location = reduce_channel_mean(mul(d, d)); // [N,1,H,W]
    return mul_scalar(reduce_sum(mul(w, per_location)), 1.0 / batch);
}

Var sal_loss(const ChannelAttention& att_proj, const Var& proj_d4, const Var& s_d,
             const TransferWeights& w) {
    Tensor::check_same_shape(proj_d4.value(), s_d.value(), "sal");
    w.validate();
    Var term1 = mul_scalar(mse(proj_d4, s_d), w.w1);
    Var term2 = mul_scalar(stl_loss(att_proj, proj_d4, s_d), w.w2);
    return add(term1, term2);
}

SamaepLossModule::SamaepLossModule(const std::vector<int>& stage_channels,
                                   int embed_channels, int reduction, int spatial_hidden,
                                   Rng& rng) {
    for (int k = 0; k < 3; ++k) {
        const int c = stage_channels[static_cast<size_t>(2 + k)]; // stages 3,4,5
        stl_att_d_[static_cast<size_t>(k)] = ChannelAttention(c, reduction, rng);
        stl_att_t_[static_cast<size_t>(k)] = ChannelAttention(c, reduction, rng);
    }
    for (int k = 0; k < 3; ++k) {
        gtl_att_d_[static_cast<size_t>(k)] = SpatialAttention(spatial_hidden, rng);
        gtl_att_t_[static_cast<size_t>(k)] = SpatialAttention(spatial_hidden, rng);
    }
    sal_att_ = ChannelAttention(embed_channels, reduction, rng);
}

SamaepLossModule::Terms SamaepLossModule::terms(const FeaturePyramid& pyr_d,
                                                const FeaturePyramid& pyr_t,
                                                const Var& proj_d4, const Var& s_d,
                                                const TransferWeights& w) const {
    Terms t;
    t.sal = sal_loss(sal_att_, proj_d4, s_d, w);
    for (int k = 0; k < 3; ++k) {
        const int stage = 3 + k;
        Var dt = stl_loss(stl_att_d_[static_cast<size_t>(k)], pyr_d.stage(stage),
                          pyr_t.stage(stage));
        Var td = stl_loss(stl_att_t_[static_cast<size_t>(k)], pyr_t.stage(stage),
                          pyr_d.stage(stage));
        t.stl_dt = t.stl_dt.defined() ? add(t.stl_dt, dt) : dt;
        t.stl_td = t.stl_td.defined() ? add(t.stl_td, td) : td;
    }
    for (int k = 0; k < 3; ++k) {
        const int stage = 1 + k;
        Var dt = gtl_loss(gtl_att_d_[static_cast<size_t>(k)], pyr_d.stage(stage),
                          pyr_t.stage(stage));
        Var td = gtl_loss(gtl_att_t_[static_cast<size_t>(k)], pyr_t.stage(stage),
                          pyr_d.stage(stage));
        t.gtl_dt = t.gtl_dt.defined() ? add(t.gtl_dt, dt) : dt;
        t.gtl_td = t.gtl_td.defined() ? add(t.gtl_td, td) : td;
    }
    Var cross_d = mul_scalar(add(t.gtl_dt, t.stl_dt), w.w3);
    Var cross_t = mul_scalar(add(t.gtl_td, t.stl_td), w.w4);
    t.total = add(t.sal, add(cross_d, cross_t));
    return t;
}

Var SamaepLossModule::total(const FeaturePyramid& pyr_d, const FeaturePyramid& pyr_t,
                            const Var& proj_d4, const Var& s_d,
                            const TransferWeights& w) const {
    return terms(pyr_d, pyr_t, proj_d4, s_d, w).total;
}

void SamaepLossModule::collect(const std::string& prefix, ParamList& out) const {
    for (int k = 0; k < 3; ++k) {
        stl_att_d_[static_cast<size_t>(k)].collect(
            prefix + ".stl_att_d" + std::to_string(3 + k), out);
        stl_att_t_[static_cast<size_t>(k)].collect(
            prefix + ".stl_att_t" + std::to_string(3 + k), out);
        gtl_att_d_[static_cast<size_t>(k)].collect(
            prefix + ".gtl_att_d" + std::to_string(1 + k), out);
        gtl_att_t_[static_cast<size_t>(k)].collect(
            prefix + ".gtl_att_t" + std::to_string(1 + k), out);
    }
    sal_att_.collect(prefix + ".sal_att", out);
}

Var extract_boundary(const Var& m) {
    Var dil = maxpool3x3(m);
    Var ero = mul_scalar(maxpool3x3(mul_scalar(m, -1.0)), -1.0);
    return sub(dil, ero);
}

Var iou_loss(const Var& p, const Var& g, real eps) {
    Tensor::check_same_shape(p.value(), g.value(), "iou_loss");
    Var inter = reduce_plane_sum(mul(p, g));                    // [N,1,1,1]
    Var uni = sub(add(reduce_plane_sum(p), reduce_plane_sum(g)), inter);
    Var ratio = div_ew(add_scalar(inter, eps), add_scalar(uni, eps));
    return reduce_mean(add_scalar(mul_scalar(ratio, -1.0), 1.0));
}

Var ioubce(const Var& p, const Var& g) {
    Tensor::check_same_shape(p.value(), g.value(), "ioubce");
    return add(iou_loss(p, g), bce_mean(p, g));
}

Var sod_loss(const DecoderOutputs& outs, const Var& gt) {
    const Tensor& gv = gt.value();
    if (gv.ndim() != 4 || gv.dim(1) != 1)
        throw ShapeError("sod_loss: ground truth must be [N,1,H,W]");
    const int H = gv.dim(2), W = gv.dim(3);
    Var gt_boundary = extract_boundary(gt);
    Var total;
    for (const Var* pred : {&outs.o, &outs.o_i[0], &outs.o_i[1]}) {
        Var up = bilinear_resize(*pred, H, W);
        Var term = add(ioubce(up, gt), ioubce(extract_boundary(up), gt_boundary));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

} // namespace csdnet
