#pragma once

#include <vector>

#include "csdnet/autodiff.hpp"

namespace csdnet {

// Leaves -------------------------------------------------------------------
Var constant(Tensor t);
Var constant_scalar(real v);
Var parameter(Tensor t);

// Elementwise binary ops. Shapes must match, except that either operand may
// be a single-element tensor, which broadcasts.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div_ew(const Var& a, const Var& b);
Var min_ew(const Var& a, const Var& b);
Var max_ew(const Var& a, const Var& b);

// Elementwise unary ops.
Var abs_ew(const Var& a);
Var add_scalar(const Var& a, real s);
Var mul_scalar(const Var& a, real s);
Var relu(const Var& a);
Var relu6(const Var& a);
Var gelu(const Var& a); // exact erf form
Var sigmoid(const Var& a);

// Reductions.
Var reduce_sum(const Var& a);                 // -> rank-0 scalar
Var reduce_mean(const Var& a);                // -> rank-0 scalar
Var reduce_plane_sum(const Var& a);           // [N,C,H,W] -> [N,C,1,1]
Var reduce_plane_mean(const Var& a);          // [N,C,H,W] -> [N,C,1,1]
Var reduce_channel_mean(const Var& a);        // [N,C,H,W] -> [N,1,H,W]

// Structure.
Var concat_channels(const std::vector<Var>& xs);
Var scale_channels(const Var& x, const Var& s); // s: [N,C,1,1]
Var detach(const Var& a);

/// features * (1 + mask), with the mask nearest-resized to the feature grid
/// and broadcast over batch and channels. `mask` is a 2-d {0,1} map.
Var residual_gate(const Var& x, const Tensor& mask);

// Convolution and friends. x: [N,Cin,H,W]; w: [Cout,Cin/groups,kh,kw];
// b: [Cout] or undefined. groups must be 1 or Cin (depthwise).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int groups = 1);

/// Batch normalization over (N,H,W) per channel. In training mode uses batch
/// statistics and updates `run_mean`/`run_var` in place; otherwise uses the
/// running statistics.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& run_mean,
                Tensor& run_var, bool training, real momentum = 0.1,
                real eps = 1e-5);

Var maxpool3x3(const Var& x); // 3x3 window, stride 1, pad 1 (same size)
Var bilinear_resize(const Var& x, int out_h, int out_w);
Var nearest_resize(const Var& x, int out_h, int out_w);

// Normalizations used by the transfer losses.
Var l2norm_planes(const Var& x, real eps = 1e-12);   // unit L2 per (n,c) plane
Var l2norm_channels(const Var& x, real eps = 1e-12); // unit L2 per (n,h,w) fiber
Var gnorm_channels(const Var& x); // [N,C,1,1]: divide by per-sample channel sum
Var gnorm_spatial(const Var& x);  // [N,1,H,W]: divide by per-sample spatial sum

// Loss primitives.
Var mse(const Var& a, const Var& b);
Var bce_mean(const Var& p, const Var& g, real clamp_eps = 1e-6);

/// Records 2*MAC for conv2d calls made while active on this thread.
class FlopCounter {
public:
    FlopCounter();
    ~FlopCounter();
    long long flops() const;
    static void record(long long f);

private:
    FlopCounter* prev_;
    long long count_ = 0;
};

} // namespace csdnet
