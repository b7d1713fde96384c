#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csdnet {

using real = double;

/// Dense row-major n-dimensional array of `real`. Rank 0 holds one scalar.
/// 4-d tensors follow the NCHW convention throughout the project.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, real fill);
    Tensor(std::vector<int> shape, std::vector<real> data);

    static Tensor scalar(real v) { return Tensor({}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    long long numel() const { return static_cast<long long>(data_.size()); }
    bool defined() const { return !data_.empty(); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    real& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
    real operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

    // 2-d (H, W) accessors.
    real& at(int y, int x) { return data_[static_cast<size_t>(y) * shape_[1] + x]; }
    real at(int y, int x) const { return data_[static_cast<size_t>(y) * shape_[1] + x]; }

    // 4-d (N, C, H, W) accessors.
    real& at(int n, int c, int y, int x);
    real at(int n, int c, int y, int x) const;

    void fill(real v);
    void zero() { fill(0.0); }
    bool all_finite() const;
    real min() const;
    real max() const;
    real sum() const;
    real mean() const { return numel() > 0 ? sum() / static_cast<real>(numel()) : 0.0; }

    std::string shape_str() const;

    /// Throws ShapeError with a contextual message unless shapes match.
    static void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

private:
    std::vector<int> shape_;
    std::vector<real> data_;
};

/// Resize a 2-d map with bilinear interpolation (half-pixel centers).
Tensor resize_bilinear_plane(const Tensor& p, int out_h, int out_w);

/// Resize a 2-d map with nearest-neighbor sampling; preserves binarity.
Tensor resize_nearest_plane(const Tensor& p, int out_h, int out_w);

} // namespace csdnet
