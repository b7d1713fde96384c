#pragma once

#include <string>
#include <vector>

#include "csdnet/errors.hpp"
#include "csdnet/tensor.hpp"

namespace csdnet {

/// Thrown when a metric is undefined for an input (e.g. recall with an
/// empty ground-truth foreground). Such images are reported and excluded
/// from dataset means.
struct UndefinedMetricError : Error {
    using Error::Error;
};

/// Per-image binarization threshold: min(2 * mean(map), 1), compared with >=.
real adaptive_threshold(const Tensor& o);

real mae_metric(const Tensor& o, const Tensor& gt);
real f_measure(const Tensor& o, const Tensor& gt, real beta2 = 0.3);
real weighted_f(const Tensor& o, const Tensor& gt);
real s_measure(const Tensor& o, const Tensor& gt, real alpha = 0.5);
real e_measure(const Tensor& o, const Tensor& gt);

/// Exact Euclidean distance transform to the nearest foreground pixel.
/// `nearest`, when non-null, receives the flat index of that pixel; ties are
/// broken by smallest row, then smallest column. Distances are +inf when the
/// map has no foreground.
Tensor distance_transform(const Tensor& gt, std::vector<long long>* nearest = nullptr);

struct CurveSamples {
    std::vector<real> thresholds; // 256 uniform levels in [0,1]
    std::vector<real> precision;  // dataset mean per threshold
    std::vector<real> recall;
    std::vector<real> fm; // F-measure of the mean precision/recall, beta^2 = 0.3
};

CurveSamples curves(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);

struct PerImageMetrics {
    std::string id;
    real mae = 0, fm = 0, wf = 0, sm = 0, em = 0;
    bool fm_valid = true, wf_valid = true;
};

struct MetricReport {
    std::vector<PerImageMetrics> per_image;
    real mean_mae = 0, mean_fm = 0, mean_wf = 0, mean_sm = 0, mean_em = 0;
    int excluded_empty_gt = 0;
    CurveSamples curve;
};

/// Computes all five metrics per image plus the dataset curves. Images with
/// empty ground truth keep mae/sm/em but are excluded from the Fm/WF means.
MetricReport evaluate_dataset(const std::vector<std::string>& ids,
                              const std::vector<Tensor>& preds,
                              const std::vector<Tensor>& gts);

/// Human-readable table plus machine-readable key=value block.
std::string format_report_table(const MetricReport& rep);
std::string format_report_kv(const MetricReport& rep);

} // namespace csdnet
