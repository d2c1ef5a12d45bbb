#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mren/tensor.hpp"

namespace mren::image {

// 8-bit interleaved RGB, row-major.
struct ImageRGB {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // 3 * width * height

    std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
    }
};

// Real-valued BT.601 studio-swing luma, [16, 235] for valid RGB.
struct YPlane {
    int width = 0;
    int height = 0;
    std::vector<double> samples;

    double at(int x, int y) const { return samples[static_cast<std::size_t>(y) * width + x]; }
};

// 8-bit RGB PNG only; palette and grayscale inputs are expanded, alpha is
// stripped, 16-bit files are rejected.
ImageRGB load_png(const std::string& path);
void save_png(const ImageRGB& img, const std::string& path);

// Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255.
YPlane rgb_to_y(const ImageRGB& img);

ImageRGB crop_to_multiple(const ImageRGB& img, int scale);

// Antialiased bicubic downscale, rounded back to 8 bits. Crops to the
// largest scale-divisible region first.
ImageRGB degrade(const ImageRGB& hr, int scale);

// [0,255] bytes <-> [0,1] planes of dims (1,3,h,w).
template <class T>
Tensor4<T> image_to_tensor(const ImageRGB& img);
template <class T>
ImageRGB tensor_to_image(const Tensor4<T>& t); // clamps to [0,1], rounds

} // namespace mren::image
