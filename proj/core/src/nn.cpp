#include "csdnet/nn.hpp"

#include <cmath>

#include "csdnet/errors.hpp"

namespace csdnet {

long long ParamList::count() const {
    long long n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
}

long long ParamList::count_prefix(const std::string& prefix) const {
    long long n = 0;
    for (const auto& p : params_)
        if (p.name.rfind(prefix, 0) == 0) n += p.var.value().numel();
    return n;
}

void ParamList::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

Tensor kaiming_conv_init(int cout, int cin_per_group, int kh, int kw, Rng& rng) {
    Tensor w({cout, cin_per_group, kh, kw});
    const real fan_out = static_cast<real>(cout) * kh * kw;
    std::normal_distribution<real> dist(0.0, std::sqrt(2.0 / fan_out));
    for (long long i = 0; i < w.numel(); ++i) w[i] = dist(rng);
    return w;
}

Conv2dLayer::Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, int groups_,
                         bool bias, Rng& rng)
    : stride(stride_), pad(pad_), groups(groups_) {
    w = parameter(kaiming_conv_init(cout, cin / groups_, k, k, rng));
    if (bias) b = parameter(Tensor({cout}));
}

void Conv2dLayer::collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + ".w", w);
    if (b.defined()) out.add(prefix + ".b", b);
}

BatchNorm2dLayer::BatchNorm2dLayer(int channels)
    : gamma(parameter(Tensor({channels}, 1.0))),
      beta(parameter(Tensor({channels}))),
      run_mean(Tensor({channels})),
      run_var(Tensor({channels}, 1.0)) {}

void BatchNorm2dLayer::collect(const std::string& prefix, ParamList& out) {
    out.add(prefix + ".gamma", gamma);
    out.add(prefix + ".beta", beta);
    out.add_buffer(prefix + ".run_mean", &run_mean);
    out.add_buffer(prefix + ".run_var", &run_var);
}

SqueezeExcite::SqueezeExcite(int channels, int reduction, Rng& rng) {
    const int hidden = std::max(1, channels / reduction);
    reduce = Conv2dLayer(channels, hidden, 1, 1, 0, 1, true, rng);
    expand = Conv2dLayer(hidden, channels, 1, 1, 0, 1, true, rng);
}

Var SqueezeExcite::excitation(const Var& x) const {
    Var s = reduce_plane_mean(x);
    s = relu(reduce.forward(s));
    return sigmoid(expand.forward(s));
}

Var SqueezeExcite::forward(const Var& x) const {
    return scale_channels(x, excitation(x));
}

void SqueezeExcite::collect(const std::string& prefix, ParamList& out) const {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
}

AdamOptimizer::AdamOptimizer(std::vector<Var> params, real lr, real beta1, real beta2,
                             real eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Var& p : params_) {
        m_.emplace_back(p.value().shape());
        v_.emplace_back(p.value().shape());
    }
}

void AdamOptimizer::step() {
    ++t_;
    const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
    const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Var& p = params_[k];
        if (!p.node->grad_ready) continue;
        Tensor& g = p.node->grad;
        Tensor& val = p.value();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (long long i = 0; i < val.numel(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const real mhat = m[i] / bc1;
            const real vhat = v[i] / bc2;
            val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (Var& p : params_) p.zero_grad();
}

} // namespace csdnet
