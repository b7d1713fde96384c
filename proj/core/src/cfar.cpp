#include "csdnet/cfar.hpp"

#include <algorithm>
#include <cmath>

#include "csdnet/errors.hpp"
#include "csdnet/ops.hpp"

namespace csdnet {

void CfarConfig::validate() const {
    if (guard_radius < 0 || guard_radius >= window_radius)
        throw ConfigError("cfar: require 0 <= guard_radius < window_radius, got guard=" +
                          std::to_string(guard_radius) +
                          " window=" + std::to_string(window_radius));
    if (!(threshold_scale > 0))
        throw ConfigError("cfar: threshold_scale must be > 0");
}

long long BinaryMask::ones() const {
    long long n = 0;
    for (std::uint8_t b : v) n += b;
    return n;
}

real BinaryMask::fraction() const {
    return v.empty() ? 0.0 : static_cast<real>(ones()) / static_cast<real>(v.size());
}

Tensor BinaryMask::to_plane() const {
    Tensor t({h, w});
    for (size_t i = 0; i < v.size(); ++i) t[static_cast<long long>(i)] = v[i] ? 1.0 : 0.0;
    return t;
}

real pfa_from_threshold(real threshold_scale) {
    return 0.5 * std::erfc(threshold_scale * 0.70710678118654752440);
}

real threshold_from_pfa(real pfa) {
    if (!(pfa > 0.0) || !(pfa < 1.0))
        throw Error("threshold_from_pfa: pfa must lie in (0,1), got " + std::to_string(pfa));
    // Q is strictly decreasing; bisect, then polish with Newton steps using
    // Q'(t) = -phi(t).
    real lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const real mid = 0.5 * (lo + hi);
        if (pfa_from_threshold(mid) > pfa)
            lo = mid;
        else
            hi = mid;
    }
    real t = 0.5 * (lo + hi);
    for (int i = 0; i < 4; ++i) {
        const real q = pfa_from_threshold(t) - pfa;
        const real phi = 0.39894228040143267794 * std::exp(-0.5 * t * t);
        if (phi <= 0) break;
        t += q / phi;
    }
    return t;
}

namespace {

struct PaddedSums {
    // Integral images over the reflect-padded, globally centered map.
    // I1/I2 have size (H+2R+1) x (W+2R+1) with a zero first row/column.
    std::vector<real> i1, i2;
    int ph, pw, R;

    real rect1(int y0, int x0, int y1, int x1) const { // inclusive box in padded coords
        const int W1 = pw + 1;
        auto I = [&](const std::vector<real>& t, int y, int x) {
            return t[static_cast<size_t>(y) * W1 + x];
        };
        return I(i1, y1 + 1, x1 + 1) - I(i1, y0, x1 + 1) - I(i1, y1 + 1, x0) +
               I(i1, y0, x0);
    }
    real rect2(int y0, int x0, int y1, int x1) const {
        const int W1 = pw + 1;
        auto I = [&](const std::vector<real>& t, int y, int x) {
            return t[static_cast<size_t>(y) * W1 + x];
        };
        return I(i2, y1 + 1, x1 + 1) - I(i2, y0, x1 + 1) - I(i2, y1 + 1, x0) +
               I(i2, y0, x0);
    }
};

int reflect_index(int i, int n) {
    // Symmetric reflection (edge value repeated): ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    if (n == 1) return 0;
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

PaddedSums build_sums(const Tensor& image, int R, real center) {
    const int H = image.dim(0), W = image.dim(1);
    PaddedSums s;
    s.R = R;
    s.ph = H + 2 * R;
    s.pw = W + 2 * R;
    const int W1 = s.pw + 1;
    s.i1.assign(static_cast<size_t>(s.ph + 1) * W1, 0.0);
    s.i2.assign(static_cast<size_t>(s.ph + 1) * W1, 0.0);
    for (int y = 0; y < s.ph; ++y) {
        const int sy = reflect_index(y - R, H);
        real row1 = 0, row2 = 0;
        for (int x = 0; x < s.pw; ++x) {
            const int sx = reflect_index(x - R, W);
            const real v = image.at(sy, sx) - center;
            row1 += v;
            row2 += v * v;
            s.i1[static_cast<size_t>(y + 1) * W1 + (x + 1)] =
                s.i1[static_cast<size_t>(y) * W1 + (x + 1)] + row1;
            s.i2[static_cast<size_t>(y + 1) * W1 + (x + 1)] =
                s.i2[static_cast<size_t>(y) * W1 + (x + 1)] + row2;
        }
    }
    return s;
}

BackgroundStats annulus_stats_reflect(const PaddedSums& s, int cy, int cx,
                                      const CfarConfig& cfg) {
    const int R = cfg.window_radius, g = cfg.guard_radius;
    const int py = cy + s.R, px = cx + s.R; // padded coordinates
    const real sum_w = s.rect1(py - R, px - R, py + R, px + R);
    const real sum_g = s.rect1(py - g, px - g, py + g, px + g);
    const real sq_w = s.rect2(py - R, px - R, py + R, px + R);
    const real sq_g = s.rect2(py - g, px - g, py + g, px + g);
    const long long n = static_cast<long long>(2 * R + 1) * (2 * R + 1) -
                        static_cast<long long>(2 * g + 1) * (2 * g + 1);
    BackgroundStats st;
    st.count = n;
    const real sum = sum_w - sum_g;
    const real sq = sq_w - sq_g;
    st.mean = sum / static_cast<real>(n);
    if (n > 1) {
        const real ss = sq - sum * st.mean; // sum of squared deviations
        st.std = std::sqrt(std::max(real(0), ss / static_cast<real>(n - 1)));
    }
    return st;
}

BackgroundStats annulus_stats_shrink(const Tensor& image, int cy, int cx,
                                     const CfarConfig& cfg, real center) {
    const int H = image.dim(0), W = image.dim(1);
    const int R = cfg.window_radius, g = cfg.guard_radius;
    real sum = 0, sq = 0;
    long long n = 0;
    const int y0 = std::max(0, cy - R), y1 = std::min(H - 1, cy + R);
    const int x0 = std::max(0, cx - R), x1 = std::min(W - 1, cx + R);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (std::abs(y - cy) <= g && std::abs(x - cx) <= g) continue;
            const real v = image.at(y, x) - center;
            sum += v;
            sq += v * v;
            ++n;
        }
    if (n == 0)
        throw DegenerateWindowError("cfar: training window has no cells at (" +
                                    std::to_string(cy) + "," + std::to_string(cx) + ")");
    BackgroundStats st;
    st.count = n;
    st.mean = sum / static_cast<real>(n);
    if (n > 1) {
        const real ss = sq - sum * st.mean;
        st.std = std::sqrt(std::max(real(0), ss / static_cast<real>(n - 1)));
    }
    return st;
}

} // namespace

BackgroundStats local_background_stats(const Tensor& image, int cy, int cx,
                                       const CfarConfig& cfg) {
    if (image.ndim() != 2) throw ShapeError("cfar expects a 2-d map");
    cfg.validate();
    const int H = image.dim(0), W = image.dim(1);
    if (cy < 0 || cy >= H || cx < 0 || cx >= W)
        throw Error("cfar: center outside image bounds");
    BackgroundStats st;
    if (cfg.border == BorderPolicy::Reflect) {
        PaddedSums s = build_sums(image, cfg.window_radius, 0.0);
        st = annulus_stats_reflect(s, cy, cx, cfg);
    } else {
        st = annulus_stats_shrink(image, cy, cx, cfg, 0.0);
    }
    return st;
}

BinaryMask cfar_detect(const Tensor& image, const CfarConfig& cfg) {
    if (image.ndim() != 2) throw ShapeError("cfar expects a 2-d map");
    cfg.validate();
    const int H = image.dim(0), W = image.dim(1);
    // Center on the global mean before accumulating squares; keeps the
    // E[x^2]-E[x]^2 variance path stable under large additive offsets, which
    // the detector decision is invariant to.
    const real center = image.mean();
    const real ts = cfg.threshold_scale;
    BinaryMask mask(H, W);
    if (cfg.border == BorderPolicy::Reflect) {
        PaddedSums s = build_sums(image, cfg.window_radius, center);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const BackgroundStats st = annulus_stats_reflect(s, y, x, cfg);
                const real cell = image.at(y, x) - center;
                const bool hit = cfg.polarity == Polarity::High
                                     ? cell > st.mean + st.std * ts
                                     : cell < st.mean - st.std * ts;
                mask.at(y, x) = hit ? 1 : 0;
            }
    } else {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const BackgroundStats st = annulus_stats_shrink(image, y, x, cfg, center);
                const real cell = image.at(y, x) - center;
                const bool hit = cfg.polarity == Polarity::High
                                     ? cell > st.mean + st.std * ts
                                     : cell < st.mean - st.std * ts;
                mask.at(y, x) = hit ? 1 : 0;
            }
    }
    return mask;
}

std::pair<BinaryMask, BinaryMask> cross_prescreen(const Tensor& depth,
                                                  const Tensor& thermal,
                                                  const CfarConfig& cfg_d,
                                                  const CfarConfig& cfg_t) {
    Tensor::check_same_shape(depth, thermal, "cross_prescreen");
    return {cfar_detect(depth, cfg_d), cfar_detect(thermal, cfg_t)};
}

Var apply_prescreen_gate(const Var& features, const BinaryMask& mask_other) {
    return residual_gate(features, mask_other.to_plane());
}

} // namespace csdnet
