#include "nca_scope/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "nca_scope/common.hpp"

namespace nca_scope {

GridState load_target_png(const std::string& path, ChannelMode mode, int pad) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw FormatError("cannot read PNG " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGBA;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError("cannot decode PNG " + path + ": " + image.message);
    }
    const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
    GridState target(h + 2 * pad, w + 2 * pad, visible_channels(mode), mode);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const unsigned char* px = &buffer[(static_cast<std::size_t>(r) * w + c) * 4];
            const float a = px[3] / 255.0f;
            for (int k = 0; k < 3; ++k)
                target.at(r + pad, c + pad, k) = mode == ChannelMode::RgbaAlive ? px[k] / 255.0f * a : px[k] / 255.0f;
            if (mode == ChannelMode::RgbaAlive) target.at(r + pad, c + pad, kAlphaChannel) = a;
        }
    return target;
}

namespace {

template <typename Inside>
GridState shape_target(int height, int width, const Colour& rgb, ChannelMode mode, Inside inside) {
    GridState target(height, width, visible_channels(mode), mode);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            if (!inside(r, c)) continue;
            for (int k = 0; k < 3; ++k) target.at(r, c, k) = static_cast<float>(rgb[k]);
            if (mode == ChannelMode::RgbaAlive) target.at(r, c, kAlphaChannel) = 1.0f;
        }
    return target;
}

}  // namespace

GridState disc_target(int height, int width, double radius, const Colour& rgb, ChannelMode mode) {
    const double cr = height / 2, cc = width / 2;
    return shape_target(height, width, rgb, mode, [&](int r, int c) {
        return std::hypot(r - cr, c - cc) <= radius;
    });
}

GridState square_target(int height, int width, int size, const Colour& rgb, ChannelMode mode) {
    const int r0 = (height - size) / 2, c0 = (width - size) / 2;
    return shape_target(height, width, rgb, mode, [&](int r, int c) {
        return r >= r0 && r < r0 + size && c >= c0 && c < c0 + size;
    });
}

}  // namespace nca_scope
