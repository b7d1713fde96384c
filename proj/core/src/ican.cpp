#include "csdnet/ican.hpp"

#include "csdnet/errors.hpp"

namespace csdnet {

SoftLogicResult soft_logic(const Var& w_d5, const Var& w_t5) {
    Tensor::check_same_shape(w_d5.value(), w_t5.value(), "soft_logic");
    SoftLogicResult r;
    r.and_map = min_ew(w_d5, w_t5);
    r.or_map = max_ew(w_d5, w_t5);
    r.xor_map = abs_ew(sub(w_d5, w_t5));
    r.concat = concat_channels({r.and_map, r.or_map, r.xor_map});
    return r;
}

IcanFusion::IcanFusion(int stage5_channels, int out_channels, int se_reduction, Rng& rng)
    : se_d_(stage5_channels, se_reduction, rng),
      se_t_(stage5_channels, se_reduction, rng),
      proj_(3 * stage5_channels, out_channels, 1, 1, 0, 1, false, rng),
      bn_(out_channels),
      out_channels_(out_channels) {}

Var IcanFusion::inject(const SoftLogicResult& l5) {
    const Tensor& v = l5.concat.value();
    Var h = gelu(bn_.forward(proj_.forward(l5.concat)));
    return bilinear_resize(h, v.dim(2) * 2, v.dim(3) * 2);
}

Var IcanFusion::forward(const Var& f_d5, const Var& f_t5) {
    SoftLogicResult l5 = soft_logic(se_reweight_depth(f_d5), se_reweight_thermal(f_t5));
    return inject(l5);
}

void IcanFusion::collect(const std::string& prefix, ParamList& out) {
    se_d_.collect(prefix + ".se_depth", out);
    se_t_.collect(prefix + ".se_thermal", out);
    proj_.collect(prefix + ".proj.conv", out);
    bn_.collect(prefix + ".proj.bn", out);
}

} // namespace csdnet
