#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csdnet/tensor.hpp"

namespace csdnet {

/// One aligned depth/thermal/ground-truth triple, all maps in [0,1] at the
/// configured working resolution; gt strictly binary.
struct Sample {
    std::string id;
    Tensor depth, thermal, gt;
    std::string embedding_path; // optional

    int height() const { return depth.dim(0); }
    int width() const { return depth.dim(1); }
};

struct LoaderConfig {
    int input_h = 256, input_w = 256;
    bool invert_depth = true; // near = bright, so high-polarity CFAR fires on near objects
    std::string depth_dir = "D", thermal_dir = "T", gt_dir = "GT";
};

/// Loads root/{D,T,GT}/<id>.png, rescales to the working resolution
/// (bilinear for depth/thermal, nearest for GT), binarizes GT at 0.5 and
/// optionally inverts depth. Missing files raise DataError naming the path.
Sample load_vdt_sample(const std::string& root, const std::string& id,
                       const LoaderConfig& cfg);

/// Sorted ids present in all three subdirectories.
std::vector<std::string> list_vdt_ids(const std::string& root, const LoaderConfig& cfg);

// Synthetic low-coherence scenes ---------------------------------------------

struct ObjectSpec {
    enum class Shape { Circle, Rect };
    Shape shape = Shape::Circle;
    real cy = 0, cx = 0, radius = 8;
    real depth_visibility = 1.0;   // contrast of the object in the depth map
    real thermal_visibility = 1.0; // contrast in the thermal map
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int h = 64, w = 64;
    std::vector<ObjectSpec> objects;
    real depth_clutter = 0.02;  // noise level of the smooth depth background
    real thermal_clutter = 0.08; // clutter level of the thermal background

    void validate() const;
};

/// Deterministic per spec: gt is the union of the object supports; each
/// modality shows an object at contrast proportional to its visibility.
Sample synth_sample(const SceneSpec& spec);

/// Scene with one depth-only, one thermal-only and one both-visible object —
/// ground truth is unrecoverable from either modality alone.
SceneSpec low_coherence_scene(std::uint64_t seed, int h, int w);

// Splits and batching ----------------------------------------------------------

std::pair<std::vector<std::string>, std::vector<std::string>>
make_split(const std::vector<std::string>& ids, real train_fraction, std::uint64_t seed);

/// Deterministic shuffled index order for (seed, epoch).
std::vector<size_t> epoch_order(size_t n, std::uint64_t seed, int epoch);

/// Stacks samples[indices] into [N,1,H,W] depth/thermal/gt batches.
struct Batch {
    Tensor depth, thermal, gt;
};
Batch make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices);

} // namespace csdnet
