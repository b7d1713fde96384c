#include "csdnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace csdnet {

namespace {

constexpr real kEps = 2.2204460492503131e-16;

void check_pair(const Tensor& o, const Tensor& gt, const char* what) {
    if (o.ndim() != 2 || gt.ndim() != 2)
        throw ShapeError(std::string(what) + ": expects 2-d maps");
    Tensor::check_same_shape(o, gt, what);
}

bool is_fg(real g) { return g >= 0.5; }

long long count_fg(const Tensor& gt) {
    long long n = 0;
    for (long long i = 0; i < gt.numel(); ++i) n += is_fg(gt[i]) ? 1 : 0;
    return n;
}

} // namespace

real adaptive_threshold(const Tensor& o) { return std::min(2.0 * o.mean(), 1.0); }

real mae_metric(const Tensor& o, const Tensor& gt) {
    check_pair(o, gt, "mae");
    real s = 0;
    for (long long i = 0; i < o.numel(); ++i) s += std::fabs(o[i] - gt[i]);
    return s / static_cast<real>(o.numel());
}

real f_measure(const Tensor& o, const Tensor& gt, real beta2) {
    check_pair(o, gt, "f_measure");
    const long long fg = count_fg(gt);
    if (fg == 0)
        throw UndefinedMetricError("f_measure: empty ground-truth foreground");
    const real th = adaptive_threshold(o);
    long long tp = 0, fp = 0;
    for (long long i = 0; i < o.numel(); ++i) {
        if (o[i] >= th) {
            if (is_fg(gt[i]))
                ++tp;
            else
                ++fp;
        }
    }
    if (tp == 0) return 0.0;
    const real precision = static_cast<real>(tp) / static_cast<real>(tp + fp);
    const real recall = static_cast<real>(tp) / static_cast<real>(fg);
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall);
}

// Distance transform: exact nearest foreground site per pixel. Column sweep
// finds the closest foreground row per column (ties -> smaller row), then a
// row scan minimizes (d^2, src_row, src_col) lexicographically, which equals
// the global lexicographic nearest site.
Tensor distance_transform(const Tensor& gt, std::vector<long long>* nearest) {
    const int H = gt.dim(0), W = gt.dim(1);
    const real inf = std::numeric_limits<real>::infinity();
    std::vector<long long> col_d2(static_cast<size_t>(H) * W,
                                  std::numeric_limits<long long>::max());
    std::vector<int> col_src(static_cast<size_t>(H) * W, -1);
    for (int x = 0; x < W; ++x) {
        int last = -1; // nearest fg row at or above
        for (int y = 0; y < H; ++y) {
            if (is_fg(gt.at(y, x))) last = y;
            if (last >= 0) {
                col_d2[static_cast<size_t>(y) * W + x] =
                    static_cast<long long>(y - last) * (y - last);
                col_src[static_cast<size_t>(y) * W + x] = last;
            }
        }
        int next = -1; // nearest fg row below (strictly closer wins; ties keep above)
        for (int y = H - 1; y >= 0; --y) {
            if (is_fg(gt.at(y, x))) next = y;
            if (next >= 0) {
                const long long d2 = static_cast<long long>(next - y) * (next - y);
                if (d2 < col_d2[static_cast<size_t>(y) * W + x]) {
                    col_d2[static_cast<size_t>(y) * W + x] = d2;
                    col_src[static_cast<size_t>(y) * W + x] = next;
                }
            }
        }
    }
    Tensor dist({H, W});
    if (nearest) nearest->assign(static_cast<size_t>(H) * W, -1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            long long best = std::numeric_limits<long long>::max();
            int by = -1, bx = -1;
            for (int j = 0; j < W; ++j) {
                const long long cd = col_d2[static_cast<size_t>(y) * W + j];
                if (cd == std::numeric_limits<long long>::max()) continue;
                const long long d2 = cd + static_cast<long long>(x - j) * (x - j);
                const int sy = col_src[static_cast<size_t>(y) * W + j];
                if (d2 < best || (d2 == best && (sy < by || (sy == by && j < bx)))) {
                    best = d2;
                    by = sy;
                    bx = j;
                }
            }
            if (by < 0) {
                dist.at(y, x) = inf;
            } else {
                dist.at(y, x) = std::sqrt(static_cast<real>(best));
                if (nearest)
                    (*nearest)[static_cast<size_t>(y) * W + x] =
                        static_cast<long long>(by) * W + bx;
            }
        }
    return dist;
}

namespace {

// 7x7 Gaussian kernel with sigma 5, normalized to sum 1; correlation with
// zero padding.
Tensor gaussian7_filter(const Tensor& src) {
    const int H = src.dim(0), W = src.dim(1);
    real k[7][7];
    real sum = 0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            const real dy = i - 3, dx = j - 3;
            k[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 25.0));
            sum += k[i][j];
        }
    for (auto& row : k)
        for (real& v : row) v /= sum;
    Tensor out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            real acc = 0;
            for (int i = 0; i < 7; ++i) {
                const int sy = y + i - 3;
                if (sy < 0 || sy >= H) continue;
                for (int j = 0; j < 7; ++j) {
                    const int sx = x + j - 3;
                    if (sx < 0 || sx >= W) continue;
                    acc += k[i][j] * src.at(sy, sx);
                }
            }
            out.at(y, x) = acc;
        }
    return out;
}

} // namespace

real weighted_f(const Tensor& o, const Tensor& gt) {
    check_pair(o, gt, "weighted_f");
    const int H = gt.dim(0), W = gt.dim(1);
    const long long n = gt.numel();
    const long long fg = count_fg(gt);
    if (fg == 0)
        throw UndefinedMetricError("weighted_f: empty ground-truth foreground");

    Tensor e({H, W});
    for (long long i = 0; i < n; ++i) e[i] = std::fabs(o[i] - (is_fg(gt[i]) ? 1.0 : 0.0));

    std::vector<long long> idx;
    Tensor dist = distance_transform(gt, &idx);

    // Background errors inherit the error at the nearest foreground pixel.
    Tensor et = e;
    for (long long i = 0; i < n; ++i)
        if (!is_fg(gt[i])) et[i] = e[idx[static_cast<size_t>(i)]];

    Tensor ea = gaussian7_filter(et);
    Tensor min_e_ea = e;
    for (long long i = 0; i < n; ++i)
        if (is_fg(gt[i]) && ea[i] < e[i]) min_e_ea[i] = ea[i];

    // Importance decays with distance from the foreground.
    const real decay = std::log(0.5) / 5.0;
    real tpw = static_cast<real>(fg);
    real fpw = 0, fg_err = 0;
    for (long long i = 0; i < n; ++i) {
        const real b = is_fg(gt[i]) ? 1.0 : 2.0 - std::exp(decay * dist[i]);
        const real ew = min_e_ea[i] * b;
        if (is_fg(gt[i])) {
            tpw -= ew;
            fg_err += ew;
        } else {
            fpw += ew;
        }
    }
    const real recall = 1.0 - fg_err / static_cast<real>(fg);
    const real precision = tpw / (kEps + tpw + fpw);
    return 2.0 * recall * precision / (kEps + recall + precision);
}

namespace {

struct Region {
    std::vector<real> pred, gt;
};

real region_ssim(const Region& r) {
    const long long n = static_cast<long long>(r.pred.size());
    if (n == 0) return 0.0;
    real mx = 0, my = 0;
    for (long long i = 0; i < n; ++i) {
        mx += r.pred[static_cast<size_t>(i)];
        my += r.gt[static_cast<size_t>(i)];
    }
    mx /= static_cast<real>(n);
    my /= static_cast<real>(n);
    real sx = 0, sy = 0, sxy = 0;
    for (long long i = 0; i < n; ++i) {
        const real dx = r.pred[static_cast<size_t>(i)] - mx;
        const real dy = r.gt[static_cast<size_t>(i)] - my;
        sx += dx * dx;
        sy += dy * dy;
        sxy += dx * dy;
    }
    if (n > 1) {
        sx /= static_cast<real>(n - 1);
        sy /= static_cast<real>(n - 1);
        sxy /= static_cast<real>(n - 1);
    } else {
        sx = sy = sxy = 0;
    }
    const real a = 4.0 * mx * my * sxy;
    const real b = (mx * mx + my * my) * (sx + sy);
    if (a != 0) return a / (b + kEps);
    return b == 0 ? 1.0 : 0.0;
}

real object_score(const Tensor& vals, const Tensor& gt, bool foreground) {
    // Mean/std of the prediction restricted to the (fore|back)ground support.
    real m = 0;
    long long n = 0;
    for (long long i = 0; i < gt.numel(); ++i)
        if (is_fg(gt[i]) == foreground) {
            m += vals[i];
            ++n;
        }
    if (n == 0) return 0.0;
    m /= static_cast<real>(n);
    real s2 = 0;
    for (long long i = 0; i < gt.numel(); ++i)
        if (is_fg(gt[i]) == foreground) {
            const real d = vals[i] - m;
            s2 += d * d;
        }
    const real sd = n > 1 ? std::sqrt(s2 / static_cast<real>(n - 1)) : 0.0;
    return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

} // namespace

real s_measure(const Tensor& o, const Tensor& gt, real alpha) {
    check_pair(o, gt, "s_measure");
    const int H = gt.dim(0), W = gt.dim(1);
    const real y = static_cast<real>(count_fg(gt)) / static_cast<real>(gt.numel());
    if (y == 0.0) return 1.0 - o.mean();
    if (y == 1.0) return o.mean();

    // Object-aware term.
    Tensor inv_o({H, W});
    for (long long i = 0; i < o.numel(); ++i) inv_o[i] = 1.0 - o[i];
    const real s_object =
        y * object_score(o, gt, true) + (1.0 - y) * object_score(inv_o, gt, false);

    // Region-aware term: split at the foreground centroid (1-based, rounded).
    real total = 0, sx = 0, sy = 0;
    for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx)
            if (is_fg(gt.at(yy, xx))) {
                total += 1.0;
                sx += xx + 1;
                sy += yy + 1;
            }
    const int cx = static_cast<int>(std::llround(sx / total));
    const int cy = static_cast<int>(std::llround(sy / total));

    Region regions[4]; // LT, RT, LB, RB
    for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx) {
            const int r = (yy + 1 <= cy ? 0 : 2) + (xx + 1 <= cx ? 0 : 1);
            regions[r].pred.push_back(o.at(yy, xx));
            regions[r].gt.push_back(is_fg(gt.at(yy, xx)) ? 1.0 : 0.0);
        }
    const real area = static_cast<real>(H) * W;
    const real w1 = static_cast<real>(cx) * cy / area;
    const real w2 = static_cast<real>(W - cx) * cy / area;
    const real w3 = static_cast<real>(cx) * (H - cy) / area;
    const real w4 = 1.0 - w1 - w2 - w3;
    const real s_region = w1 * region_ssim(regions[0]) + w2 * region_ssim(regions[1]) +
                          w3 * region_ssim(regions[2]) + w4 * region_ssim(regions[3]);

    return std::max(real(0), alpha * s_object + (1.0 - alpha) * s_region);
}

real e_measure(const Tensor& o, const Tensor& gt) {
    check_pair(o, gt, "e_measure");
    const long long n = o.numel();
    const long long fg_count = count_fg(gt);
    if (o.min() == o.max() && (fg_count == 0 || fg_count == n)) {
        // Both maps constant: 1 when they agree as saliency, else 0.
        const bool o_fg = o.min() >= 0.5;
        const bool g_fg = fg_count == n;
        return o_fg == g_fg ? 1.0 : 0.0;
    }
    const real th = adaptive_threshold(o);
    std::vector<real> bin(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) bin[static_cast<size_t>(i)] = o[i] >= th ? 1.0 : 0.0;
    const long long fg = count_fg(gt);

    real phi_sum = 0;
    if (fg == 0) {
        for (long long i = 0; i < n; ++i) phi_sum += 1.0 - bin[static_cast<size_t>(i)];
    } else if (fg == n) {
        for (long long i = 0; i < n; ++i) phi_sum += bin[static_cast<size_t>(i)];
    } else {
        real mu_g = static_cast<real>(fg) / static_cast<real>(n);
        real mu_b = 0;
        for (long long i = 0; i < n; ++i) mu_b += bin[static_cast<size_t>(i)];
        mu_b /= static_cast<real>(n);
        for (long long i = 0; i < n; ++i) {
            const real ag = (is_fg(gt[i]) ? 1.0 : 0.0) - mu_g;
            const real ab = bin[static_cast<size_t>(i)] - mu_b;
            const real align = 2.0 * ag * ab / (ag * ag + ab * ab + kEps);
            phi_sum += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    return phi_sum / static_cast<real>(n);
}

CurveSamples curves(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
    if (preds.empty() || preds.size() != gts.size())
        throw ShapeError("curves: prediction and ground-truth sets must match and be nonempty");
    constexpr int kLevels = 256;
    CurveSamples c;
    c.thresholds.resize(kLevels);
    c.precision.assign(kLevels, 0.0);
    c.recall.assign(kLevels, 0.0);
    c.fm.assign(kLevels, 0.0);
    for (int k = 0; k < kLevels; ++k)
        c.thresholds[static_cast<size_t>(k)] = static_cast<real>(k) / (kLevels - 1);

    long long used = 0;
    for (size_t img = 0; img < preds.size(); ++img) {
        const Tensor& o = preds[img];
        const Tensor& gt = gts[img];
        check_pair(o, gt, "curves");
        const long long fg = count_fg(gt);
        if (fg == 0) continue; // recall undefined; image skipped
        ++used;
        for (int k = 0; k < kLevels; ++k) {
            const real th = c.thresholds[static_cast<size_t>(k)];
            long long tp = 0, fp = 0;
            for (long long i = 0; i < o.numel(); ++i) {
                if (o[i] >= th) {
                    if (is_fg(gt[i]))
                        ++tp;
                    else
                        ++fp;
                }
            }
            const real p = (tp + fp) == 0
                               ? 1.0
                               : static_cast<real>(tp) / static_cast<real>(tp + fp);
            c.precision[static_cast<size_t>(k)] += p;
            c.recall[static_cast<size_t>(k)] += static_cast<real>(tp) / static_cast<real>(fg);
        }
    }
    if (used == 0) throw UndefinedMetricError("curves: every image has empty ground truth");
    constexpr real beta2 = 0.3;
    for (int k = 0; k < kLevels; ++k) {
        c.precision[static_cast<size_t>(k)] /= static_cast<real>(used);
        c.recall[static_cast<size_t>(k)] /= static_cast<real>(used);
        const real p = c.precision[static_cast<size_t>(k)];
        const real r = c.recall[static_cast<size_t>(k)];
        const real denom = beta2 * p + r;
        c.fm[static_cast<size_t>(k)] = denom > 0 ? (1.0 + beta2) * p * r / denom : 0.0;
    }
    return c;
}

MetricReport evaluate_dataset(const std::vector<std::string>& ids,
                              const std::vector<Tensor>& preds,
                              const std::vector<Tensor>& gts) {
    if (ids.size() != preds.size() || preds.size() != gts.size())
        throw ShapeError("evaluate_dataset: ids/preds/gts size mismatch");
    MetricReport rep;
    real sums[5] = {0, 0, 0, 0, 0};
    long long counts[5] = {0, 0, 0, 0, 0};
    for (size_t i = 0; i < ids.size(); ++i) {
        PerImageMetrics m;
        m.id = ids[i];
        m.mae = mae_metric(preds[i], gts[i]);
        sums[0] += m.mae;
        ++counts[0];
        try {
            m.fm = f_measure(preds[i], gts[i]);
            sums[1] += m.fm;
            ++counts[1];
        } catch (const UndefinedMetricError&) {
            m.fm_valid = false;
        }
        try {
            m.wf = weighted_f(preds[i], gts[i]);
            sums[2] += m.wf;
            ++counts[2];
        } catch (const UndefinedMetricError&) {
            m.wf_valid = false;
        }
        m.sm = s_measure(preds[i], gts[i]);
        sums[3] += m.sm;
        ++counts[3];
        m.em = e_measure(preds[i], gts[i]);
        sums[4] += m.em;
        ++counts[4];
        if (!m.fm_valid || !m.wf_valid) ++rep.excluded_empty_gt;
        rep.per_image.push_back(std::move(m));
    }
    rep.mean_mae = counts[0] ? sums[0] / counts[0] : 0;
    rep.mean_fm = counts[1] ? sums[1] / counts[1] : 0;
    rep.mean_wf = counts[2] ? sums[2] / counts[2] : 0;
    rep.mean_sm = counts[3] ? sums[3] / counts[3] : 0;
    rep.mean_em = counts[4] ? sums[4] / counts[4] : 0;
    rep.curve = curves(preds, gts);
    return rep;
}

std::string format_report_table(const MetricReport& rep) {
    std::ostringstream os;
    os << "# Binarization: adaptive threshold min(2*mean, 1), applied with >= "
          "(Fm and Em).\n";
    os << "# Empty-ground-truth images are excluded from the Fm/WF means.\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-24s %8s %8s %8s %8s %8s\n", "id", "MAE", "Fm",
                  "WF", "Sm", "Em");
    os << line;
    for (const PerImageMetrics& m : rep.per_image) {
        char fm[16], wf[16];
        if (m.fm_valid)
            std::snprintf(fm, sizeof(fm), "%8.4f", m.fm);
        else
            std::snprintf(fm, sizeof(fm), "%8s", "n/a");
        if (m.wf_valid)
            std::snprintf(wf, sizeof(wf), "%8.4f", m.wf);
        else
            std::snprintf(wf, sizeof(wf), "%8s", "n/a");
        std::snprintf(line, sizeof(line), "%-24s %8.4f %s %s %8.4f %8.4f\n",
                      m.id.c_str(), m.mae, fm, wf, m.sm, m.em);
        os << line;
    }
    std::snprintf(line, sizeof(line), "%-24s %8.4f %8.4f %8.4f %8.4f %8.4f\n", "mean",
                  rep.mean_mae, rep.mean_fm, rep.mean_wf, rep.mean_sm, rep.mean_em);
    os << line;
    return os.str();
}

std::string format_report_kv(const MetricReport& rep) {
    std::ostringstream os;
    os.precision(10);
    os << "images=" << rep.per_image.size() << '\n';
    os << "excluded_empty_gt=" << rep.excluded_empty_gt << '\n';
    os << "mean_mae=" << rep.mean_mae << '\n';
    os << "mean_fm=" << rep.mean_fm << '\n';
    os << "mean_wf=" << rep.mean_wf << '\n';
    os << "mean_sm=" << rep.mean_sm << '\n';
    os << "mean_em=" << rep.mean_em << '\n';
    return os.str();
}

} // namespace csdnet
