#pragma once

#include <string>

#include "csdnet/tensor.hpp"

namespace csdnet {

/// Reads any PNG as 8-bit grayscale, scaled to [0,1]. Returns a 2-d map.
Tensor read_png_gray(const std::string& path);

/// Writes a 2-d map as 8-bit grayscale PNG; values clamped to [0,1].
void write_png_gray(const std::string& path, const Tensor& plane);

} // namespace csdnet
