#include "csdnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "csdnet/errors.hpp"

namespace csdnet {

namespace {

long long shape_numel(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative tensor dimension");
        n *= d;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, real fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<long long>(data_.size()))
        throw ShapeError("tensor data size does not match shape " + shape_str());
}

real& Tensor::at(int n, int c, int y, int x) {
    const size_t idx =
        ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    return data_[idx];
}

real Tensor::at(int n, int c, int y, int x) const {
    const size_t idx =
        ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    return data_[idx];
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (real v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

real Tensor::min() const {
    real m = data_.empty() ? 0.0 : data_[0];
    for (real v : data_) m = std::min(m, v);
    return m;
}

real Tensor::max() const {
    real m = data_.empty() ? 0.0 : data_[0];
    for (real v : data_) m = std::max(m, v);
    return m;
}

real Tensor::sum() const {
    real s = 0.0;
    for (real v : data_) s += v;
    return s;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

void Tensor::check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

Tensor resize_bilinear_plane(const Tensor& p, int out_h, int out_w) {
    if (p.ndim() != 2) throw ShapeError("resize_bilinear_plane expects a 2-d map");
    const int ih = p.dim(0), iw = p.dim(1);
    Tensor out({out_h, out_w});
    if (ih == out_h && iw == out_w) {
        for (long long i = 0; i < p.numel(); ++i) out[i] = p[i];
        return out;
    }
    const real sy = static_cast<real>(ih) / out_h;
    const real sx = static_cast<real>(iw) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        real fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        real wy = fy - y0;
        int y0c = std::clamp(y0, 0, ih - 1);
        int y1c = std::clamp(y0 + 1, 0, ih - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            real fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            real wx = fx - x0;
            int x0c = std::clamp(x0, 0, iw - 1);
            int x1c = std::clamp(x0 + 1, 0, iw - 1);
            out.at(oy, ox) = (1 - wy) * ((1 - wx) * p.at(y0c, x0c) + wx * p.at(y0c, x1c)) +
                             wy * ((1 - wx) * p.at(y1c, x0c) + wx * p.at(y1c, x1c));
        }
    }
    return out;
}

Tensor resize_nearest_plane(const Tensor& p, int out_h, int out_w) {
    if (p.ndim() != 2) throw ShapeError("resize_nearest_plane expects a 2-d map");
    const int ih = p.dim(0), iw = p.dim(1);
    Tensor out({out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy) {
        int sy = std::min(ih - 1, static_cast<int>(static_cast<long long>(oy) * ih / out_h));
        for (int ox = 0; ox < out_w; ++ox) {
            int sx = std::min(iw - 1, static_cast<int>(static_cast<long long>(ox) * iw / out_w));
            out.at(oy, ox) = p.at(sy, sx);
        }
    }
    return out;
}

} // namespace csdnet
