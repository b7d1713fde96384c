#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "csdnet/cfar.hpp"
#include "csdnet/nn.hpp"

namespace csdnet {

/// Rounds scaled channel counts to hardware-friendly multiples, never
/// dropping below 90% of the requested width.
int make_divisible(real v, int divisor = 8);

struct EncoderConfig {
    real width_multiplier = 1.0;
    int input_h = 256, input_w = 256;
    bool input_replicate = true;
    std::vector<int> stage_channels; // five tap widths; filled by finalize()
    std::string weights_path;

    /// Computes stage_channels from the width multiplier (or validates a
    /// preset list) and checks the input size contract.
    void finalize();
};

/// Five feature scales, stage i at (H/2^i, W/2^i).
struct FeaturePyramid {
    std::array<Var, 5> stages;
    const Var& stage(int i) const { return stages[static_cast<size_t>(i - 1)]; } // 1-based
};

/// Inverted-residual backbone producing the five-scale pyramid.
class Backbone {
public:
    Backbone() = default;
    Backbone(const EncoderConfig& cfg, Rng& rng);

    /// `image` is [N,1,H,W] with values in [0,1]. When `gate` is given
    /// ([H',W'] or [N,H',W'] of {0,1}), the stage-1 features are multiplied
    /// by (1 + mask) before deeper stages.
    FeaturePyramid forward(const Var& image, const Tensor* gate = nullptr);

    void collect(const std::string& prefix, ParamList& out);
    void set_training(bool training);
    const EncoderConfig& config() const { return cfg_; }

private:
    struct InvertedResidual {
        bool has_expand = false;
        bool use_residual = false;
        Conv2dLayer expand, dw, project;
        BatchNorm2dLayer bn_expand, bn_dw, bn_project;
        Var forward(const Var& x);
    };

    EncoderConfig cfg_;
    Conv2dLayer stem_;
    BatchNorm2dLayer stem_bn_;
    std::vector<InvertedResidual> blocks_;
    std::array<int, 5> tap_after_block_{}; // block index whose output is stage i
};

/// Outcome of loading a named-tensor archive into a module.
struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> only_in_file;
    std::vector<std::string> only_in_model;
};

} // namespace csdnet
