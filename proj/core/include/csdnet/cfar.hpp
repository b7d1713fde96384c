#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "csdnet/autodiff.hpp"
#include "csdnet/tensor.hpp"

namespace csdnet {

enum class Polarity { High, Low };
enum class BorderPolicy { Reflect, Shrink };

/// Geometry and sensitivity of the cell-averaging detector. The training
/// window is the square annulus between the guard square and the window
/// square; the cell under test always sits inside the guard region.
struct CfarConfig {
    int window_radius = 8;
    int guard_radius = 2;
    real threshold_scale = 3.0;
    Polarity polarity = Polarity::High;
    BorderPolicy border = BorderPolicy::Reflect;

    void validate() const;
};

struct BackgroundStats {
    real mean = 0.0;
    real std = 0.0;
    long long count = 0;
};

/// Per-pixel {0,1} prescreening mask.
struct BinaryMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    BinaryMask() = default;
    BinaryMask(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}
    std::uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    long long ones() const;
    real fraction() const;
    Tensor to_plane() const; // 2-d Tensor of 0.0 / 1.0
};

/// Gaussian upper-tail probability Q(threshold_scale): the false-alarm rate
/// the detector holds on Gaussian clutter. Strictly decreasing; range (0,1).
real pfa_from_threshold(real threshold_scale);

/// Inverse of pfa_from_threshold. Requires 0 < pfa < 1.
real threshold_from_pfa(real pfa);

/// Mean/std over the training annulus centered at (cy, cx), honoring the
/// border policy. Std is the sample standard deviation.
BackgroundStats local_background_stats(const Tensor& image, int cy, int cx,
                                       const CfarConfig& cfg);

/// Sliding-window detector: mask[p] = 1 iff the cell exceeds
/// mean + std * threshold_scale (polarity High) or falls below
/// mean - std * threshold_scale (polarity Low).
BinaryMask cfar_detect(const Tensor& image, const CfarConfig& cfg);

/// Runs cfar_detect on each modality. The returned masks are intended for
/// injection into the OPPOSITE stream's shallow features.
std::pair<BinaryMask, BinaryMask> cross_prescreen(const Tensor& depth,
                                                  const Tensor& thermal,
                                                  const CfarConfig& cfg_d,
                                                  const CfarConfig& cfg_t);

/// features * (1 + mask_from_other_stream), mask nearest-resized to the
/// feature grid. An all-zero mask returns the features unchanged.
Var apply_prescreen_gate(const Var& features, const BinaryMask& mask_other);

} // namespace csdnet
