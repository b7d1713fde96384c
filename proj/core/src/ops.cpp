#include "csdnet/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "csdnet/errors.hpp"

namespace csdnet {

namespace {

using detail::make_op;

using MatrixR = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatrixR>;
using CMapM = Eigen::Map<const MatrixR>;

thread_local FlopCounter* g_flop_counter = nullptr;

bool wants_grad(const Node* n) { return n && n->requires_grad; }

Tensor& grad_of(Node& self, size_t i) { return self.parents[i]->ensure_grad(); }

void check_binary_shapes(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b) && a.numel() != 1 && b.numel() != 1)
        throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_str() +
                         " vs " + b.shape_str());
}

// Generic elementwise binary op with single-element broadcast.
template <typename FwdFn, typename BwdA, typename BwdB>
Var binary_op(const Var& a, const Var& b, const char* what, FwdFn fwd, BwdA dfa,
              BwdB dfb) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check_binary_shapes(av, bv, what);
    const bool sa = av.numel() == 1, sb = bv.numel() == 1;
    const Tensor& big = sa ? bv : av;
    Tensor out(big.shape());
    const long long n = big.numel();
    for (long long i = 0; i < n; ++i)
        out[i] = fwd(av[sa ? 0 : i], bv[sb ? 0 : i]);
    return make_op(std::move(out), {a, b}, [sa, sb, dfa, dfb](Node& self) {
        const Tensor& av2 = self.parents[0]->value;
        const Tensor& bv2 = self.parents[1]->value;
        const long long n2 = self.grad.numel();
        if (wants_grad(self.parents[0].get())) {
            Tensor& ga = grad_of(self, 0);
            for (long long i = 0; i < n2; ++i)
                ga[sa ? 0 : i] += self.grad[i] * dfa(av2[sa ? 0 : i], bv2[sb ? 0 : i]);
        }
        if (wants_grad(self.parents[1].get())) {
            Tensor& gb = grad_of(self, 1);
            for (long long i = 0; i < n2; ++i)
                gb[sb ? 0 : i] += self.grad[i] * dfb(av2[sa ? 0 : i], bv2[sb ? 0 : i]);
        }
    });
}

template <typename FwdFn, typename BwdFn>
Var unary_op(const Var& a, FwdFn fwd, BwdFn dfdx) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    const long long n = av.numel();
    for (long long i = 0; i < n; ++i) out[i] = fwd(av[i]);
    return make_op(std::move(out), {a}, [dfdx](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        const Tensor& av2 = self.parents[0]->value;
        Tensor& ga = grad_of(self, 0);
        const long long n2 = self.grad.numel();
        for (long long i = 0; i < n2; ++i) ga[i] += self.grad[i] * dfdx(av2[i]);
    });
}

void require_4d(const Tensor& t, const char* what) {
    if (t.ndim() != 4) throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + t.shape_str());
}

real stable_sigmoid(real x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const real e = std::exp(x);
    return e / (1.0 + e);
}

constexpr real kInvSqrt2 = 0.70710678118654752440;
constexpr real kInvSqrt2Pi = 0.39894228040143267794;

} // namespace

// Leaves ---------------------------------------------------------------------

Var constant(Tensor t) { return Var::leaf(std::move(t), false); }
Var constant_scalar(real v) { return Var::leaf(Tensor::scalar(v), false); }
Var parameter(Tensor t) { return Var::leaf(std::move(t), true); }

// Elementwise ----------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    return binary_op(
        a, b, "add", [](real x, real y) { return x + y; },
        [](real, real) { return 1.0; }, [](real, real) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
    return binary_op(
        a, b, "sub", [](real x, real y) { return x - y; },
        [](real, real) { return 1.0; }, [](real, real) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
    return binary_op(
        a, b, "mul", [](real x, real y) { return x * y; },
        [](real, real y) { return y; }, [](real x, real) { return x; });
}

Var div_ew(const Var& a, const Var& b) {
    return binary_op(
        a, b, "div", [](real x, real y) { return x / y; },
        [](real, real y) { return 1.0 / y; },
        [](real x, real y) { return -x / (y * y); });
}

Var min_ew(const Var& a, const Var& b) {
    Tensor::check_same_shape(a.value(), b.value(), "min_ew");
    return binary_op(
        a, b, "min", [](real x, real y) { return std::min(x, y); },
        [](real x, real y) { return x <= y ? 1.0 : 0.0; },
        [](real x, real y) { return x <= y ? 0.0 : 1.0; });
}

Var max_ew(const Var& a, const Var& b) {
    Tensor::check_same_shape(a.value(), b.value(), "max_ew");
    return binary_op(
        a, b, "max", [](real x, real y) { return std::max(x, y); },
        [](real x, real y) { return x >= y ? 1.0 : 0.0; },
        [](real x, real y) { return x >= y ? 0.0 : 1.0; });
}

Var abs_ew(const Var& a) {
    return unary_op(
        a, [](real x) { return std::fabs(x); },
        [](real x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var add_scalar(const Var& a, real s) {
    return unary_op(
        a, [s](real x) { return x + s; }, [](real) { return 1.0; });
}

Var mul_scalar(const Var& a, real s) {
    return unary_op(
        a, [s](real x) { return x * s; }, [s](real) { return s; });
}

Var relu(const Var& a) {
    return unary_op(
        a, [](real x) { return x > 0 ? x : 0.0; },
        [](real x) { return x > 0 ? 1.0 : 0.0; });
}

Var relu6(const Var& a) {
    return unary_op(
        a, [](real x) { return std::clamp(x, 0.0, 6.0); },
        [](real x) { return (x > 0 && x < 6) ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
    return unary_op(
        a, [](real x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](real x) {
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                   x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
}

Var sigmoid(const Var& a) {
    return unary_op(
        a, [](real x) { return stable_sigmoid(x); },
        [](real x) {
            const real s = stable_sigmoid(x);
            return s * (1.0 - s);
        });
}

// Reductions -----------------------------------------------------------------

Var reduce_sum(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        Tensor& ga = grad_of(self, 0);
        const real g = self.grad[0];
        for (long long i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

Var reduce_mean(const Var& a) {
    const long long n = a.value().numel();
    Tensor out = Tensor::scalar(a.value().sum() / static_cast<real>(n));
    return make_op(std::move(out), {a}, [n](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        Tensor& ga = grad_of(self, 0);
        const real g = self.grad[0] / static_cast<real>(n);
        for (long long i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

namespace {

Var plane_reduce(const Var& a, bool mean) {
    require_4d(a.value(), "reduce_plane");
    const Tensor& x = a.value();
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long long hw = static_cast<long long>(H) * W;
    Tensor out({N, C, 1, 1});
    const real scale = mean ? 1.0 / static_cast<real>(hw) : 1.0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const real* p = x.data() + (static_cast<long long>(n) * C + c) * hw;
            real s = 0;
            for (long long i = 0; i < hw; ++i) s += p[i];
            out.at(n, c, 0, 0) = s * scale;
        }
    return make_op(std::move(out), {a}, [hw, scale](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        Tensor& ga = grad_of(self, 0);
        const int N = ga.dim(0), C = ga.dim(1);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const real g = self.grad.at(n, c, 0, 0) * scale;
                real* p = ga.data() + (static_cast<long long>(n) * C + c) * hw;
                for (long long i = 0; i < hw; ++i) p[i] += g;
            }
    });
}

} // namespace

Var reduce_plane_sum(const Var& a) { return plane_reduce(a, false); }
Var reduce_plane_mean(const Var& a) { return plane_reduce(a, true); }

Var reduce_channel_mean(const Var& a) {
    require_4d(a.value(), "reduce_channel_mean");
    const Tensor& x = a.value();
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out({N, 1, H, W});
    const real inv = 1.0 / static_cast<real>(C);
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int xw = 0; xw < W; ++xw) {
                real s = 0;
                for (int c = 0; c < C; ++c) s += x.at(n, c, y, xw);
                out.at(n, 0, y, xw) = s * inv;
            }
    return make_op(std::move(out), {a}, [inv](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        Tensor& ga = grad_of(self, 0);
        const int N = ga.dim(0), C = ga.dim(1), H = ga.dim(2), W = ga.dim(3);
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int xw = 0; xw < W; ++xw) {
                    const real g = self.grad.at(n, 0, y, xw) * inv;
                    for (int c = 0; c < C; ++c) ga.at(n, c, y, xw) += g;
                }
    });
}

// Structure ------------------------------------------------------------------

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    const Tensor& first = xs[0].value();
    require_4d(first, "concat_channels");
    const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
    int total_c = 0;
    std::vector<int> channels;
    for (const Var& v : xs) {
        const Tensor& t = v.value();
        require_4d(t, "concat_channels");
        if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
            throw ShapeError("concat_channels: mismatched shapes " + first.shape_str() +
                             " vs " + t.shape_str());
        channels.push_back(t.dim(1));
        total_c += t.dim(1);
    }
    Tensor out({N, total_c, H, W});
    const long long hw = static_cast<long long>(H) * W;
    for (int n = 0; n < N; ++n) {
        int co = 0;
        for (const Var& v : xs) {
            const Tensor& t = v.value();
            const int c = t.dim(1);
            std::copy_n(t.data() + static_cast<long long>(n) * c * hw, c * hw,
                        out.data() + (static_cast<long long>(n) * total_c + co) * hw);
            co += c;
        }
    }
    return make_op(std::move(out), xs, [channels, hw, total_c](Node& self) {
        const int N = self.grad.dim(0);
        for (int n = 0; n < N; ++n) {
            int co = 0;
            for (size_t k = 0; k < channels.size(); ++k) {
                const int c = channels[k];
                if (wants_grad(self.parents[k].get())) {
                    Tensor& g = grad_of(self, k);
                    const real* src =
                        self.grad.data() + (static_cast<long long>(n) * total_c + co) * hw;
                    real* dst = g.data() + static_cast<long long>(n) * c * hw;
                    for (long long i = 0; i < c * hw; ++i) dst[i] += src[i];
                }
                co += c;
            }
        }
    });
}

Var scale_channels(const Var& x, const Var& s) {
    require_4d(x.value(), "scale_channels");
    require_4d(s.value(), "scale_channels");
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (sv.dim(0) != N || sv.dim(1) != C || sv.dim(2) != 1 || sv.dim(3) != 1)
        throw ShapeError("scale_channels: scale must be [N,C,1,1], got " + sv.shape_str());
    Tensor out(xv.shape());
    const long long hw = static_cast<long long>(H) * W;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const real sc = sv.at(n, c, 0, 0);
            const real* p = xv.data() + (static_cast<long long>(n) * C + c) * hw;
            real* o = out.data() + (static_cast<long long>(n) * C + c) * hw;
            for (long long i = 0; i < hw; ++i) o[i] = p[i] * sc;
        }
    return make_op(std::move(out), {x, s}, [hw](Node& self) {
        const Tensor& xv2 = self.parents[0]->value;
        const Tensor& sv2 = self.parents[1]->value;
        const int N = xv2.dim(0), C = xv2.dim(1);
        if (wants_grad(self.parents[0].get())) {
            Tensor& gx = grad_of(self, 0);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const real sc = sv2.at(n, c, 0, 0);
                    const long long base = (static_cast<long long>(n) * C + c) * hw;
                    for (long long i = 0; i < hw; ++i)
                        gx[base + i] += self.grad[base + i] * sc;
                }
        }
        if (wants_grad(self.parents[1].get())) {
            Tensor& gs = grad_of(self, 1);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const long long base = (static_cast<long long>(n) * C + c) * hw;
                    real acc = 0;
                    for (long long i = 0; i < hw; ++i)
                        acc += self.grad[base + i] * xv2[base + i];
                    gs.at(n, c, 0, 0) += acc;
                }
        }
    });
}

Var detach(const Var& a) { return Var::leaf(a.value(), false); }

Var residual_gate(const Var& x, const Tensor& mask) {
    require_4d(x.value(), "residual_gate");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const long long hw = static_cast<long long>(H) * W;
    // Mask is [H',W'] (broadcast over batch) or [N,H',W'] (per sample);
    // nearest-resized to the feature grid.
    Tensor m({N, H, W});
    if (mask.ndim() == 2) {
        Tensor r = resize_nearest_plane(mask, H, W);
        for (int n = 0; n < N; ++n)
            std::copy_n(r.data(), hw, m.data() + static_cast<long long>(n) * hw);
    } else if (mask.ndim() == 3 && mask.dim(0) == N) {
        const long long mhw = static_cast<long long>(mask.dim(1)) * mask.dim(2);
        for (int n = 0; n < N; ++n) {
            Tensor plane({mask.dim(1), mask.dim(2)});
            std::copy_n(mask.data() + static_cast<long long>(n) * mhw, mhw, plane.data());
            Tensor r = resize_nearest_plane(plane, H, W);
            std::copy_n(r.data(), hw, m.data() + static_cast<long long>(n) * hw);
        }
    } else {
        throw ShapeError("residual_gate: mask must be [H,W] or [N,H,W], got " +
                         mask.shape_str());
    }
    Tensor out(xv.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const long long base = (static_cast<long long>(n) * C + c) * hw;
            const real* mp = m.data() + static_cast<long long>(n) * hw;
            for (long long i = 0; i < hw; ++i)
                out[base + i] = xv[base + i] * (1.0 + mp[i]);
        }
    return make_op(std::move(out), {x}, [m = std::move(m), hw](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        Tensor& gx = grad_of(self, 0);
        const int N = gx.dim(0), C = gx.dim(1);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const long long base = (static_cast<long long>(n) * C + c) * hw;
                const real* mp = m.data() + static_cast<long long>(n) * hw;
                for (long long i = 0; i < hw; ++i)
                    gx[base + i] += self.grad[base + i] * (1.0 + mp[i]);
            }
    });
}

// Convolution ----------------------------------------------------------------

namespace {

struct ConvDims {
    int N, Cin, H, W, Cout, kh, kw, Ho, Wo, groups;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
    require_4d(x, "conv2d input");
    require_4d(w, "conv2d weight");
    ConvDims d;
    d.N = x.dim(0);
    d.Cin = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.Cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.groups = groups;
    if (groups != 1 && groups != d.Cin)
        throw ShapeError("conv2d: groups must be 1 or Cin");
    if (w.dim(1) != d.Cin / groups)
        throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1) * groups) +
                         " input channels, got " + std::to_string(d.Cin));
    if (groups == d.Cin && d.Cout != d.Cin)
        throw ShapeError("conv2d: depthwise requires Cout == Cin");
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    if (d.Ho <= 0 || d.Wo <= 0) throw ShapeError("conv2d: output would be empty");
    return d;
}

void im2col(const Tensor& x, int n, const ConvDims& d, int stride, int pad,
            std::vector<real>& col) {
    // col is [Cin*kh*kw, Ho*Wo], row-major.
    const long long cols = static_cast<long long>(d.Ho) * d.Wo;
    col.assign(static_cast<size_t>(d.Cin) * d.kh * d.kw * cols, 0.0);
    long long r = 0;
    for (int c = 0; c < d.Cin; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx, ++r) {
                real* dst = col.data() + r * cols;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= d.H) continue;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= d.W) continue;
                        dst[static_cast<long long>(oy) * d.Wo + ox] = x.at(n, c, iy, ix);
                    }
                }
            }
}

void col2im_accum(const std::vector<real>& col, int n, const ConvDims& d, int stride,
                  int pad, Tensor& gx) {
    const long long cols = static_cast<long long>(d.Ho) * d.Wo;
    long long r = 0;
    for (int c = 0; c < d.Cin; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx, ++r) {
                const real* src = col.data() + r * cols;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= d.H) continue;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= d.W) continue;
                        gx.at(n, c, iy, ix) += src[static_cast<long long>(oy) * d.Wo + ox];
                    }
                }
            }
}

Tensor conv_forward_dense(const Tensor& x, const Tensor& w, const Tensor* b,
                          const ConvDims& d, int stride, int pad) {
    Tensor out({d.N, d.Cout, d.Ho, d.Wo});
    const long long cols = static_cast<long long>(d.Ho) * d.Wo;
    const long long K = static_cast<long long>(d.Cin) * d.kh * d.kw;
    std::vector<real> col;
    CMapM W(w.data(), d.Cout, K);
    for (int n = 0; n < d.N; ++n) {
        im2col(x, n, d, stride, pad, col);
        CMapM C(col.data(), K, cols);
        MapM O(out.data() + static_cast<long long>(n) * d.Cout * cols, d.Cout, cols);
        O.noalias() = W * C;
    }
    if (b) {
        for (int n = 0; n < d.N; ++n)
            for (int c = 0; c < d.Cout; ++c) {
                real* p = out.data() + (static_cast<long long>(n) * d.Cout + c) * cols;
                const real bv = (*b)[c];
                for (long long i = 0; i < cols; ++i) p[i] += bv;
            }
    }
    return out;
}

Tensor conv_forward_depthwise(const Tensor& x, const Tensor& w, const Tensor* b,
                              const ConvDims& d, int stride, int pad) {
    Tensor out({d.N, d.Cout, d.Ho, d.Wo});
    for (int n = 0; n < d.N; ++n)
        for (int c = 0; c < d.Cout; ++c) {
            const real bv = b ? (*b)[c] : 0.0;
            for (int oy = 0; oy < d.Ho; ++oy)
                for (int ox = 0; ox < d.Wo; ++ox) {
                    real acc = bv;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= d.H) continue;
                        for (int kx = 0; kx < d.kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= d.W) continue;
                            acc += x.at(n, c, iy, ix) * w.at(c, 0, ky, kx);
                        }
                    }
                    out.at(n, c, oy, ox) = acc;
                }
        }
    return out;
}

void conv_backward_depthwise(Node& self, const ConvDims& d, int stride, int pad) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& w = self.parents[1]->value;
    const bool need_x = wants_grad(self.parents[0].get());
    const bool need_w = wants_grad(self.parents[1].get());
    const bool need_b = self.parents.size() > 2 && wants_grad(self.parents[2].get());
    Tensor* gx = need_x ? &grad_of(self, 0) : nullptr;
    Tensor* gw = need_w ? &grad_of(self, 1) : nullptr;
    Tensor* gb = need_b ? &grad_of(self, 2) : nullptr;
    for (int n = 0; n < d.N; ++n)
        for (int c = 0; c < d.Cout; ++c)
            for (int oy = 0; oy < d.Ho; ++oy)
                for (int ox = 0; ox < d.Wo; ++ox) {
                    const real g = self.grad.at(n, c, oy, ox);
                    if (g == 0.0) continue;
                    if (gb) (*gb)[c] += g;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= d.H) continue;
                        for (int kx = 0; kx < d.kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= d.W) continue;
                            if (gw) gw->at(c, 0, ky, kx) += g * x.at(n, c, iy, ix);
                            if (gx) gx->at(n, c, iy, ix) += g * w.at(c, 0, ky, kx);
                        }
                    }
                }
}

void conv_backward_dense(Node& self, const ConvDims& d, int stride, int pad) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& w = self.parents[1]->value;
    const bool need_x = wants_grad(self.parents[0].get());
    const bool need_w = wants_grad(self.parents[1].get());
    const bool need_b = self.parents.size() > 2 && wants_grad(self.parents[2].get());
    const long long cols = static_cast<long long>(d.Ho) * d.Wo;
    const long long K = static_cast<long long>(d.Cin) * d.kh * d.kw;
    CMapM W(w.data(), d.Cout, K);
    std::vector<real> col, dcol;
    if (need_x) dcol.resize(static_cast<size_t>(K * cols));
    for (int n = 0; n < d.N; ++n) {
        CMapM G(self.grad.data() + static_cast<long long>(n) * d.Cout * cols, d.Cout,
                cols);
        if (need_w) {
            im2col(x, n, d, stride, pad, col);
            CMapM C(col.data(), K, cols);
            MapM GW(grad_of(self, 1).data(), d.Cout, K);
            GW.noalias() += G * C.transpose();
        }
        if (need_x) {
            MapM DC(dcol.data(), K, cols);
            DC.noalias() = W.transpose() * G;
            col2im_accum(dcol, n, d, stride, pad, grad_of(self, 0));
        }
        if (need_b) {
            Tensor& gb = grad_of(self, 2);
            for (int c = 0; c < d.Cout; ++c) gb[c] += G.row(c).sum();
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
    const ConvDims d = conv_dims(x.value(), w.value(), stride, pad, groups);
    if (b.defined() && (b.value().ndim() != 1 || b.value().dim(0) != d.Cout))
        throw ShapeError("conv2d: bias must be [Cout]");
    const Tensor* bp = b.defined() ? &b.value() : nullptr;
    const bool depthwise = groups == d.Cin && d.Cin > 1;
    Tensor out = depthwise ? conv_forward_depthwise(x.value(), w.value(), bp, d, stride, pad)
                           : conv_forward_dense(x.value(), w.value(), bp, d, stride, pad);
    if (g_flop_counter) {
        const long long macs = static_cast<long long>(d.N) * d.Cout * d.Ho * d.Wo *
                               (static_cast<long long>(d.Cin) / groups) * d.kh * d.kw;
        FlopCounter::record(2 * macs);
    }
    return make_op(std::move(out), {x, w, b}, [d, stride, pad, depthwise](Node& self) {
        if (depthwise)
            conv_backward_depthwise(self, d, stride, pad);
        else
            conv_backward_dense(self, d, stride, pad);
    });
}

// Batch normalization ---------------------------------------------------------

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& run_mean,
                Tensor& run_var, bool training, real momentum, real eps) {
    require_4d(x.value(), "batchnorm2d");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const long long m = static_cast<long long>(N) * H * W;
    const long long hw = static_cast<long long>(H) * W;
    std::vector<real> mu(C), inv(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            real s = 0;
            for (int n = 0; n < N; ++n) {
                const real* p = xv.data() + (static_cast<long long>(n) * C + c) * hw;
                for (long long i = 0; i < hw; ++i) s += p[i];
            }
            mu[c] = s / static_cast<real>(m);
            real v = 0;
            for (int n = 0; n < N; ++n) {
                const real* p = xv.data() + (static_cast<long long>(n) * C + c) * hw;
                for (long long i = 0; i < hw; ++i) {
                    const real dxx = p[i] - mu[c];
                    v += dxx * dxx;
                }
            }
            const real var = v / static_cast<real>(m);
            inv[c] = 1.0 / std::sqrt(var + eps);
            run_mean[c] = (1.0 - momentum) * run_mean[c] + momentum * mu[c];
            const real unbiased = m > 1 ? v / static_cast<real>(m - 1) : var;
            run_var[c] = (1.0 - momentum) * run_var[c] + momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mu[c] = run_mean[c];
            inv[c] = 1.0 / std::sqrt(run_var[c] + eps);
        }
    }
    Tensor out(xv.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const long long base = (static_cast<long long>(n) * C + c) * hw;
            const real g = gv[c], b = bv[c], mc = mu[c], ic = inv[c];
            for (long long i = 0; i < hw; ++i)
                out[base + i] = g * ((xv[base + i] - mc) * ic) + b;
        }
    return make_op(
        std::move(out), {x, gamma, beta},
        [mu = std::move(mu), inv = std::move(inv), training, m, hw](Node& self) {
            const Tensor& xv2 = self.parents[0]->value;
            const Tensor& gv2 = self.parents[1]->value;
            const int N = xv2.dim(0), C = xv2.dim(1);
            const bool need_x = wants_grad(self.parents[0].get());
            const bool need_g = wants_grad(self.parents[1].get());
            const bool need_b = wants_grad(self.parents[2].get());
            for (int c = 0; c < C; ++c) {
                real sum_dy = 0, sum_dy_xhat = 0;
                for (int n = 0; n < N; ++n) {
                    const long long base = (static_cast<long long>(n) * C + c) * hw;
                    for (long long i = 0; i < hw; ++i) {
                        const real dy = self.grad[base + i];
                        sum_dy += dy;
                        sum_dy_xhat += dy * ((xv2[base + i] - mu[c]) * inv[c]);
                    }
                }
                if (need_g) grad_of(self, 1)[c] += sum_dy_xhat;
                if (need_b) grad_of(self, 2)[c] += sum_dy;
                if (need_x) {
                    Tensor& gx = grad_of(self, 0);
                    const real g = gv2[c];
                    if (training) {
                        const real scale = g * inv[c] / static_cast<real>(m);
                        for (int n = 0; n < N; ++n) {
                            const long long base = (static_cast<long long>(n) * C + c) * hw;
                            for (long long i = 0; i < hw; ++i) {
                                const real xhat = (xv2[base + i] - mu[c]) * inv[c];
                                gx[base + i] +=
                                    scale * (static_cast<real>(m) * self.grad[base + i] -
                                             sum_dy - xhat * sum_dy_xhat);
                            }
                        }
                    } else {
                        const real scale = g * inv[c];
                        for (int n = 0; n < N; ++n) {
                            const long long base = (static_cast<long long>(n) * C + c) * hw;
                            for (long long i = 0; i < hw; ++i)
                                gx[base + i] += scale * self.grad[base + i];
                        }
                    }
                }
            }
        });
}

// Pooling / resize -------------------------------------------------------------

Var maxpool3x3(const Var& x) {
    require_4d(x.value(), "maxpool3x3");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out(xv.shape());
    std::vector<long long> argmax(static_cast<size_t>(xv.numel()));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xw = 0; xw < W; ++xw) {
                    real best = -std::numeric_limits<real>::infinity();
                    long long bi = 0;
                    for (int dy = -1; dy <= 1; ++dy) {
                        const int iy = y + dy;
                        if (iy < 0 || iy >= H) continue;
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int ix = xw + dx;
                            if (ix < 0 || ix >= W) continue;
                            const long long idx =
                                ((static_cast<long long>(n) * C + c) * H + iy) * W + ix;
                            if (xv[idx] > best) {
                                best = xv[idx];
                                bi = idx;
                            }
                        }
                    }
                    const long long oidx =
                        ((static_cast<long long>(n) * C + c) * H + y) * W + xw;
                    out[oidx] = best;
                    argmax[static_cast<size_t>(oidx)] = bi;
                }
    return make_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        Tensor& gx = grad_of(self, 0);
        const long long n = self.grad.numel();
        for (long long i = 0; i < n; ++i)
            gx[argmax[static_cast<size_t>(i)]] += self.grad[i];
    });
}

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<real> w1; // weight of i1; weight of i0 is 1-w1
};

LerpAxis make_lerp(int in, int out) {
    LerpAxis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.w1.resize(out);
    const real s = static_cast<real>(in) / out;
    for (int o = 0; o < out; ++o) {
        real f = (o + 0.5) * s - 0.5;
        int lo = static_cast<int>(std::floor(f));
        a.w1[o] = f - lo;
        a.i0[o] = std::clamp(lo, 0, in - 1);
        a.i1[o] = std::clamp(lo + 1, 0, in - 1);
    }
    return a;
}

} // namespace

Var bilinear_resize(const Var& x, int out_h, int out_w) {
    require_4d(x.value(), "bilinear_resize");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H == out_h && W == out_w) {
        // Identity resize still goes through a node so gradients flow.
        Tensor out = xv;
        return make_op(std::move(out), {x}, [](Node& self) {
            if (!wants_grad(self.parents[0].get())) return;
            Tensor& gx = grad_of(self, 0);
            for (long long i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i];
        });
    }
    LerpAxis ay = make_lerp(H, out_h), ax = make_lerp(W, out_w);
    Tensor out({N, C, out_h, out_w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < out_h; ++oy) {
                const real wy = ay.w1[oy];
                const int y0 = ay.i0[oy], y1 = ay.i1[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const real wx = ax.w1[ox];
                    const int x0 = ax.i0[ox], x1 = ax.i1[ox];
                    out.at(n, c, oy, ox) =
                        (1 - wy) * ((1 - wx) * xv.at(n, c, y0, x0) + wx * xv.at(n, c, y0, x1)) +
                        wy * ((1 - wx) * xv.at(n, c, y1, x0) + wx * xv.at(n, c, y1, x1));
                }
            }
    return make_op(std::move(out), {x},
                   [ay = std::move(ay), ax = std::move(ax), out_h, out_w](Node& self) {
                       if (!wants_grad(self.parents[0].get())) return;
                       Tensor& gx = grad_of(self, 0);
                       const int N = gx.dim(0), C = gx.dim(1);
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c)
                               for (int oy = 0; oy < out_h; ++oy) {
                                   const real wy = ay.w1[oy];
                                   const int y0 = ay.i0[oy], y1 = ay.i1[oy];
                                   for (int ox = 0; ox < out_w; ++ox) {
                                       const real g = self.grad.at(n, c, oy, ox);
                                       if (g == 0.0) continue;
                                       const real wx = ax.w1[ox];
                                       const int x0 = ax.i0[ox], x1 = ax.i1[ox];
                                       gx.at(n, c, y0, x0) += g * (1 - wy) * (1 - wx);
                                       gx.at(n, c, y0, x1) += g * (1 - wy) * wx;
                                       gx.at(n, c, y1, x0) += g * wy * (1 - wx);
                                       gx.at(n, c, y1, x1) += g * wy * wx;
                                   }
                               }
                   });
}

Var nearest_resize(const Var& x, int out_h, int out_w) {
    require_4d(x.value(), "nearest_resize");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    std::vector<int> sy(out_h), sx(out_w);
    for (int o = 0; o < out_h; ++o)
        sy[o] = std::min(H - 1, static_cast<int>(static_cast<long long>(o) * H / out_h));
    for (int o = 0; o < out_w; ++o)
        sx[o] = std::min(W - 1, static_cast<int>(static_cast<long long>(o) * W / out_w));
    Tensor out({N, C, out_h, out_w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox)
                    out.at(n, c, oy, ox) = xv.at(n, c, sy[oy], sx[ox]);
    return make_op(std::move(out), {x},
                   [sy = std::move(sy), sx = std::move(sx), out_h, out_w](Node& self) {
                       if (!wants_grad(self.parents[0].get())) return;
                       Tensor& gx = grad_of(self, 0);
                       const int N = gx.dim(0), C = gx.dim(1);
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c)
                               for (int oy = 0; oy < out_h; ++oy)
                                   for (int ox = 0; ox < out_w; ++ox)
                                       gx.at(n, c, sy[oy], sx[ox]) +=
                                           self.grad.at(n, c, oy, ox);
                   });
}

// Normalizations ---------------------------------------------------------------

namespace {

// Shared kernel: divide each fiber (plane or channel vector) by its L2 norm.
// `fiber(n, k, i)` enumerates element indices.
Var l2norm_impl(const Var& x, real eps, bool planes) {
    require_4d(x.value(), "l2norm");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const long long hw = static_cast<long long>(H) * W;
    Tensor out(xv.shape());
    if (planes) {
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const long long base = (static_cast<long long>(n) * C + c) * hw;
                real s = 0;
                for (long long i = 0; i < hw; ++i) s += xv[base + i] * xv[base + i];
                const real inv = 1.0 / std::sqrt(s + eps);
                for (long long i = 0; i < hw; ++i) out[base + i] = xv[base + i] * inv;
            }
    } else {
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int xw = 0; xw < W; ++xw) {
                    real s = 0;
                    for (int c = 0; c < C; ++c) {
                        const real v = xv.at(n, c, y, xw);
                        s += v * v;
                    }
                    const real inv = 1.0 / std::sqrt(s + eps);
                    for (int c = 0; c < C; ++c)
                        out.at(n, c, y, xw) = xv.at(n, c, y, xw) * inv;
                }
    }
    return make_op(std::move(out), {x}, [eps, planes, hw](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        const Tensor& xv2 = self.parents[0]->value;
        Tensor& gx = grad_of(self, 0);
        const int N = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
        if (planes) {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const long long base = (static_cast<long long>(n) * C + c) * hw;
                    real s = 0, dot = 0;
                    for (long long i = 0; i < hw; ++i) {
                        s += xv2[base + i] * xv2[base + i];
                        dot += self.grad[base + i] * xv2[base + i];
                    }
                    const real inv = 1.0 / std::sqrt(s + eps);
                    const real inv3 = inv * inv * inv;
                    for (long long i = 0; i < hw; ++i)
                        gx[base + i] +=
                            inv * self.grad[base + i] - inv3 * dot * xv2[base + i];
                }
        } else {
            for (int n = 0; n < N; ++n)
                for (int y = 0; y < H; ++y)
                    for (int xw = 0; xw < W; ++xw) {
                        real s = 0, dot = 0;
                        for (int c = 0; c < C; ++c) {
                            const real v = xv2.at(n, c, y, xw);
                            s += v * v;
                            dot += self.grad.at(n, c, y, xw) * v;
                        }
                        const real inv = 1.0 / std::sqrt(s + eps);
                        const real inv3 = inv * inv * inv;
                        for (int c = 0; c < C; ++c)
                            gx.at(n, c, y, xw) += inv * self.grad.at(n, c, y, xw) -
                                                  inv3 * dot * xv2.at(n, c, y, xw);
                    }
        }
    });
}

Var gnorm_impl(const Var& x, bool channels) {
    require_4d(x.value(), "gnorm");
    const Tensor& xv = x.value();
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (channels && (H != 1 || W != 1))
        throw ShapeError("gnorm_channels expects [N,C,1,1], got " + xv.shape_str());
    if (!channels && C != 1)
        throw ShapeError("gnorm_spatial expects [N,1,H,W], got " + xv.shape_str());
    const long long k = channels ? C : static_cast<long long>(H) * W;
    Tensor out(xv.shape());
    std::vector<real> sums(N);
    for (int n = 0; n < N; ++n) {
        const long long base = static_cast<long long>(n) * k;
        real s = 0;
        for (long long i = 0; i < k; ++i) {
            if (xv[base + i] < 0)
                throw DegenerateAttentionError("gnorm: negative attention weight");
            s += xv[base + i];
        }
        if (!(s > 0) || !std::isfinite(s))
            throw DegenerateAttentionError("gnorm: attention weights sum to zero");
        sums[n] = s;
        for (long long i = 0; i < k; ++i) out[base + i] = xv[base + i] / s;
    }
    return make_op(std::move(out), {x}, [k, sums = std::move(sums)](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        Tensor& gx = grad_of(self, 0);
        const int N = gx.dim(0);
        for (int n = 0; n < N; ++n) {
            const long long base = static_cast<long long>(n) * k;
            real dot = 0;
            for (long long i = 0; i < k; ++i)
                dot += self.grad[base + i] * self.value[base + i];
            const real inv = 1.0 / sums[n];
            for (long long i = 0; i < k; ++i)
                gx[base + i] += (self.grad[base + i] - dot) * inv;
        }
    });
}

} // namespace

Var l2norm_planes(const Var& x, real eps) { return l2norm_impl(x, eps, true); }
Var l2norm_channels(const Var& x, real eps) { return l2norm_impl(x, eps, false); }
Var gnorm_channels(const Var& x) { return gnorm_impl(x, true); }
Var gnorm_spatial(const Var& x) { return gnorm_impl(x, false); }

// Loss primitives ---------------------------------------------------------------

Var mse(const Var& a, const Var& b) {
    Tensor::check_same_shape(a.value(), b.value(), "mse");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const long long n = av.numel();
    real s = 0;
    for (long long i = 0; i < n; ++i) {
        const real d = av[i] - bv[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(s / static_cast<real>(n));
    return make_op(std::move(out), {a, b}, [n](Node& self) {
        const Tensor& av2 = self.parents[0]->value;
        const Tensor& bv2 = self.parents[1]->value;
        const real g = self.grad[0] * 2.0 / static_cast<real>(n);
        if (wants_grad(self.parents[0].get())) {
            Tensor& ga = grad_of(self, 0);
            for (long long i = 0; i < n; ++i) ga[i] += g * (av2[i] - bv2[i]);
        }
        if (wants_grad(self.parents[1].get())) {
            Tensor& gb = grad_of(self, 1);
            for (long long i = 0; i < n; ++i) gb[i] -= g * (av2[i] - bv2[i]);
        }
    });
}

Var bce_mean(const Var& p, const Var& g, real clamp_eps) {
    Tensor::check_same_shape(p.value(), g.value(), "bce_mean");
    const Tensor& pv = p.value();
    const Tensor& gv = g.value();
    const long long n = pv.numel();
    const real lo = clamp_eps, hi = 1.0 - clamp_eps;
    real s = 0;
    for (long long i = 0; i < n; ++i) {
        const real pc = std::clamp(pv[i], lo, hi);
        s -= gv[i] * std::log(pc) + (1.0 - gv[i]) * std::log(1.0 - pc);
    }
    Tensor out = Tensor::scalar(s / static_cast<real>(n));
    return make_op(std::move(out), {p, g}, [n, lo, hi](Node& self) {
        if (!wants_grad(self.parents[0].get())) return;
        const Tensor& pv2 = self.parents[0]->value;
        const Tensor& gv2 = self.parents[1]->value;
        Tensor& gp = grad_of(self, 0);
        const real gscale = self.grad[0] / static_cast<real>(n);
        for (long long i = 0; i < n; ++i) {
            if (pv2[i] <= lo || pv2[i] >= hi) continue; // clamped: zero slope
            gp[i] += gscale * (-gv2[i] / pv2[i] + (1.0 - gv2[i]) / (1.0 - pv2[i]));
        }
    });
}

// FLOP counter -------------------------------------------------------------------

FlopCounter::FlopCounter() : prev_(g_flop_counter) { g_flop_counter = this; }
FlopCounter::~FlopCounter() { g_flop_counter = prev_; }
long long FlopCounter::flops() const { return count_; }
void FlopCounter::record(long long f) {
    for (FlopCounter* c = g_flop_counter; c; c = c->prev_) c->count_ += f;
}

} // namespace csdnet
