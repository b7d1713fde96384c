#include "csdnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "csdnet/errors.hpp"

namespace csdnet {

Tensor read_png_gray(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("failed to open PNG: " + path + " (" + image.message + ")");
    image.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw DataError("failed to decode PNG: " + path + " (" + msg + ")");
    }
    const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
    Tensor out({h, w});
    for (long long i = 0; i < out.numel(); ++i)
        out[i] = static_cast<real>(buffer[static_cast<size_t>(i)]) / 255.0;
    return out;
}

void write_png_gray(const std::string& path, const Tensor& plane) {
    if (plane.ndim() != 2) throw ShapeError("write_png_gray expects a 2-d map");
    const int h = plane.dim(0), w = plane.dim(1);
    std::vector<png_byte> buffer(static_cast<size_t>(h) * w);
    for (long long i = 0; i < plane.numel(); ++i) {
        const real v = std::clamp(plane[i], real(0), real(1));
        buffer[static_cast<size_t>(i)] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw DataError("failed to write PNG: " + path + " (" + image.message + ")");
}

} // namespace csdnet
