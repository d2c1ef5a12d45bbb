#include "mren/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "mren/error.hpp"
#include "mren/ops.hpp"

namespace mren::image {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png != nullptr) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png != nullptr) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

} // namespace

ImageRGB load_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open '" + path + "'");

    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw IoError("not a PNG file: '" + path + "'");
    }

    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (r.png == nullptr) throw IoError("libpng init failed");
    r.info = png_create_info_struct(r.png);
    if (r.info == nullptr) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(r.png))) {
        throw IoError("PNG decode failed: '" + path + "'");
    }
    png_init_io(r.png, file.get());
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);

    const int bit_depth = png_get_bit_depth(r.png, r.info);
    if (bit_depth == 16) throw IoError("16-bit PNG not supported: '" + path + "'");
    const int color_type = png_get_color_type(r.png, r.info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(r.png);
    }
    png_set_strip_alpha(r.png);
    png_set_interlace_handling(r.png);
    png_read_update_info(r.png, r.info);

    ImageRGB img;
    img.width = static_cast<int>(png_get_image_width(r.png, r.info));
    img.height = static_cast<int>(png_get_image_height(r.png, r.info));
    const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
    if (rowbytes != static_cast<std::size_t>(img.width) * 3) {
        throw IoError("unexpected PNG layout in '" + path + "'");
    }
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * rowbytes;
    }
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

void save_png(const ImageRGB& img, const std::string& path) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
        throw IoError("save_png: malformed image buffer");
    }
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot write '" + path + "'");

    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (w.png == nullptr) throw IoError("libpng init failed");
    w.info = png_create_info_struct(w.png);
    if (w.info == nullptr) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(w.png))) {
        throw IoError("PNG encode failed: '" + path + "'");
    }
    png_init_io(w.png, file.get());
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    std::vector<png_const_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
    }
    png_write_rows(w.png, const_cast<png_bytepp>(rows.data()),
                   static_cast<png_uint_32>(img.height));
    png_write_end(w.png, w.info);
    if (std::fflush(file.get()) != 0) throw IoError("cannot write '" + path + "'");
}

YPlane rgb_to_y(const ImageRGB& img) {
    YPlane y;
    y.width = img.width;
    y.height = img.height;
    y.samples.resize(static_cast<std::size_t>(img.width) * img.height);
    for (std::size_t i = 0; i < y.samples.size(); ++i) {
        const double r = img.pixels[3 * i + 0];
        const double g = img.pixels[3 * i + 1];
        const double b = img.pixels[3 * i + 2];
        y.samples[i] = 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
    }
    return y;
}

ImageRGB crop_to_multiple(const ImageRGB& img, int scale) {
    const int w = (img.width / scale) * scale;
    const int h = (img.height / scale) * scale;
    if (w == img.width && h == img.height) return img;
    if (w <= 0 || h <= 0) {
        throw IoError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      " too small for scale " + std::to_string(scale));
    }
    ImageRGB out;
    out.width = w;
    out.height = h;
    out.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        std::copy_n(img.at(0, y), static_cast<std::size_t>(w) * 3, out.at(0, y));
    }
    return out;
}

ImageRGB degrade(const ImageRGB& hr, int scale) {
    if (scale == 1) return hr;
    const ImageRGB cropped = crop_to_multiple(hr, scale);
    Tensor4<double> t(Dims4{1, 3, cropped.height, cropped.width});
    const std::int64_t plane = static_cast<std::int64_t>(cropped.width) * cropped.height;
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            t.data()[c * plane + i] = cropped.pixels[static_cast<std::size_t>(3 * i + c)];
        }
    }
    const Tensor4<double> down = ops::downscale_bicubic(t, scale);
    ImageRGB out;
    out.width = cropped.width / scale;
    out.height = cropped.height / scale;
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    const std::int64_t oplane = static_cast<std::int64_t>(out.width) * out.height;
    for (std::int64_t i = 0; i < oplane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::round(down.data()[c * oplane + i]);
            out.pixels[static_cast<std::size_t>(3 * i + c)] =
                static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    }
    return out;
}

template <class T>
Tensor4<T> image_to_tensor(const ImageRGB& img) {
    Tensor4<T> t(Dims4{1, 3, img.height, img.width});
    const std::int64_t plane = static_cast<std::int64_t>(img.width) * img.height;
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            t.data()[c * plane + i] =
                static_cast<T>(img.pixels[static_cast<std::size_t>(3 * i + c)] / T(255));
        }
    }
    return t;
}

template <class T>
ImageRGB tensor_to_image(const Tensor4<T>& t) {
    const Dims4 d = t.dims();
    if (d.n != 1 || d.c != 3) {
        throw ShapeError("tensor_to_image: expected dims (1,3,h,w), got " + d.str());
    }
    ImageRGB img;
    img.width = static_cast<int>(d.w);
    img.height = static_cast<int>(d.h);
    img.pixels.resize(static_cast<std::size_t>(d.w) * d.h * 3);
    const std::int64_t plane = d.h * d.w;
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(t.data()[c * plane + i]), 0.0, 1.0);
            img.pixels[static_cast<std::size_t>(3 * i + c)] =
                static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return img;
}

template Tensor4<float> image_to_tensor<float>(const ImageRGB&);
template Tensor4<double> image_to_tensor<double>(const ImageRGB&);
template ImageRGB tensor_to_image<float>(const Tensor4<float>&);
template ImageRGB tensor_to_image<double>(const Tensor4<double>&);

} // namespace mren::image
