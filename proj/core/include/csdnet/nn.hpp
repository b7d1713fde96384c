#pragma once

#include <random>
#include <string>
#include <vector>

#include "csdnet/autodiff.hpp"
#include "csdnet/ops.hpp"

namespace csdnet {

using Rng = std::mt19937_64;

/// Named view over a module's trainable parameters and persistent buffers
/// (batch-norm running statistics). Parameter identity is the Node pointer.
class ParamList {
public:
    struct Param {
        std::string name;
        Var var;
    };
    struct Buffer {
        std::string name;
        Tensor* tensor;
    };

    void add(const std::string& name, const Var& v) { params_.push_back({name, v}); }
    void add_buffer(const std::string& name, Tensor* t) { buffers_.push_back({name, t}); }

    const std::vector<Param>& params() const { return params_; }
    const std::vector<Buffer>& buffers() const { return buffers_; }
    std::vector<Param>& params() { return params_; }
    std::vector<Buffer>& buffers() { return buffers_; }

    /// Exact count of trainable scalars.
    long long count() const;
    /// Count restricted to names starting with `prefix`.
    long long count_prefix(const std::string& prefix) const;
    void zero_grad();

private:
    std::vector<Param> params_;
    std::vector<Buffer> buffers_;
};

/// Kaiming fan-out normal init for convolution weights.
Tensor kaiming_conv_init(int cout, int cin_per_group, int kh, int kw, Rng& rng);

/// 2-d convolution layer; bias optional (off when a norm layer follows).
struct Conv2dLayer {
    Var w, b;
    int stride = 1, pad = 0, groups = 1;

    Conv2dLayer() = default;
    Conv2dLayer(int cin, int cout, int k, int stride, int pad, int groups, bool bias,
                Rng& rng);
    Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad, groups); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNorm2dLayer {
    Var gamma, beta;
    Tensor run_mean, run_var;
    bool training = true;
    real momentum = 0.1, eps = 1e-5;

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(int channels);
    Var forward(const Var& x) {
        return batchnorm2d(x, gamma, beta, run_mean, run_var, training, momentum, eps);
    }
    void collect(const std::string& prefix, ParamList& out);
};

/// Squeeze-and-excitation: global pool -> reduce -> ReLU -> expand ->
/// sigmoid -> channel scale.
struct SqueezeExcite {
    Conv2dLayer reduce, expand;

    SqueezeExcite() = default;
    SqueezeExcite(int channels, int reduction, Rng& rng);
    Var forward(const Var& x) const;
    /// The excitation vector s in (0,1)^C, shape [N,C,1,1].
    Var excitation(const Var& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Adam with bias correction over a fixed parameter list.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Var> params, real lr = 1e-4, real beta1 = 0.9,
                           real beta2 = 0.999, real eps = 1e-8);

    void step();
    void zero_grad();
    real learning_rate() const { return lr_; }
    void set_learning_rate(real lr) { lr_ = lr; }
    long long step_count() const { return t_; }

    // Exposed for checkpointing optimizer state.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    void set_step_count(long long t) { t_ = t; }
    const std::vector<Var>& params() const { return params_; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    real lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
};

} // namespace csdnet
