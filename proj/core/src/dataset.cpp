#include "mren/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "mren/error.hpp"

namespace mren::data {
namespace fs = std::filesystem;

std::vector<std::string> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir + "'");
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    return paths;
}

std::vector<NamedImage> load_images(const std::string& dir) {
    const std::vector<std::string> paths = list_images(dir);
    if (paths.empty()) throw IoError("no .png images in '" + dir + "'");
    std::vector<NamedImage> images;
    images.reserve(paths.size());
    for (const std::string& p : paths) {
        images.push_back(NamedImage{fs::path(p).filename().string(), image::load_png(p)});
    }
    return images;
}

namespace {

void copy_patch(const image::ImageRGB& src, int x0, int y0, int side, image::ImageRGB& dst) {
    dst.width = side;
    dst.height = side;
    dst.pixels.resize(static_cast<std::size_t>(side) * side * 3);
    for (int y = 0; y < side; ++y) {
        std::copy_n(src.at(x0, y0 + y), static_cast<std::size_t>(side) * 3, dst.at(0, y));
    }
}

void put_sample(Tensor4f& t, std::int64_t n, const image::ImageRGB& img) {
    const std::int64_t plane = static_cast<std::int64_t>(img.width) * img.height;
    float* dst = t.data() + n * 3 * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            dst[c * plane + i] = static_cast<float>(img.pixels[static_cast<std::size_t>(3 * i + c)]) / 255.0f;
        }
    }
}

// In-place per-sample spatial transforms on an (n,3,side,side) tensor.
void flip_h(Tensor4f& t, std::int64_t n) {
    const Dims4 d = t.dims();
    for (std::int64_t c = 0; c < d.c; ++c) {
        float* plane = t.data() + (n * d.c + c) * d.h * d.w;
        for (std::int64_t y = 0; y < d.h; ++y) {
            std::reverse(plane + y * d.w, plane + (y + 1) * d.w);
        }
    }
}

void flip_v(Tensor4f& t, std::int64_t n) {
    const Dims4 d = t.dims();
    for (std::int64_t c = 0; c < d.c; ++c) {
        float* plane = t.data() + (n * d.c + c) * d.h * d.w;
        for (std::int64_t y = 0; y < d.h / 2; ++y) {
            std::swap_ranges(plane + y * d.w, plane + (y + 1) * d.w, plane + (d.h - 1 - y) * d.w);
        }
    }
}

void rot90(Tensor4f& t, std::int64_t n) {
    const Dims4 d = t.dims();
    std::vector<float> tmp(static_cast<std::size_t>(d.h * d.w));
    for (std::int64_t c = 0; c < d.c; ++c) {
        float* plane = t.data() + (n * d.c + c) * d.h * d.w;
        std::copy_n(plane, tmp.size(), tmp.data());
        for (std::int64_t y = 0; y < d.h; ++y) {
            for (std::int64_t x = 0; x < d.w; ++x) {
                plane[y * d.w + x] = tmp[static_cast<std::size_t>((d.h - 1 - x) * d.w + y)];
            }
        }
    }
}

} // namespace

PatchBatch sample_patches(const std::vector<NamedImage>& images, int scale, int patch, int batch,
                          Rng& rng) {
    if (patch % scale != 0) {
        throw UsageError("patch " + std::to_string(patch) + " not divisible by scale " +
                         std::to_string(scale));
    }
    if (batch < 1) throw UsageError("batch must be >= 1");
    std::vector<const image::ImageRGB*> usable;
    for (const NamedImage& ni : images) {
        if (ni.img.width >= patch && ni.img.height >= patch) {
            usable.push_back(&ni.img);
        } else {
            std::cerr << "warning: '" << ni.name << "' (" << ni.img.width << "x" << ni.img.height
                      << ") smaller than patch " << patch << ", skipped\n";
        }
    }
    if (usable.empty()) {
        throw IoError("no image is at least " + std::to_string(patch) + "x" +
                      std::to_string(patch));
    }

    PatchBatch b{Tensor4f(Dims4{batch, 3, patch / scale, patch / scale}),
                 Tensor4f(Dims4{batch, 3, patch, patch})};
    image::ImageRGB hr_patch;
    for (int s = 0; s < batch; ++s) {
        const image::ImageRGB& src =
            *usable[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(usable.size())))];
        const int x0 = static_cast<int>(rng.uniform_int(src.width - patch + 1));
        const int y0 = static_cast<int>(rng.uniform_int(src.height - patch + 1));
        copy_patch(src, x0, y0, patch, hr_patch);
        put_sample(b.hr, s, hr_patch);
        put_sample(b.lr, s, image::degrade(hr_patch, scale));
    }
    return b;
}

void augment(PatchBatch& batch, Rng& rng) {
    const Dims4 hd = batch.hr.dims();
    const Dims4 ld = batch.lr.dims();
    for (std::int64_t s = 0; s < hd.n; ++s) {
        const bool h = rng.bernoulli(0.5);
        const bool v = rng.bernoulli(0.5);
        const bool r = rng.bernoulli(0.5);
        if (r && (hd.h != hd.w || ld.h != ld.w)) {
            throw IoError("rotation augmentation needs square patches, got " + hd.str());
        }
        if (h) {
            flip_h(batch.hr, s);
            flip_h(batch.lr, s);
        }
        if (v) {
            flip_v(batch.hr, s);
            flip_v(batch.lr, s);
        }
        if (r) {
            rot90(batch.hr, s);
            rot90(batch.lr, s);
        }
    }
}

image::ImageRGB synth_texture(int width, int height, std::uint64_t seed) {
    Rng rng(seed);
    struct Wave {
        double fx, fy, phase, sharp;
    };
    Wave waves[3];
    for (Wave& w : waves) {
        // the shortest period keeps a x2 downscale comfortably above Nyquist,
        // so the LR rendition still pins edge positions instead of aliasing
        const double period = rng.uniform(10.0, 28.0);
        const double angle = rng.uniform(0.0, 2.0 * M_PI);
        w.fx = std::cos(angle) / period;
        w.fy = std::sin(angle) / period;
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
        w.sharp = rng.uniform(1.5, 4.0);
    }
    double mix[3][3];
    for (auto& row : mix) {
        double norm = 0.0;
        for (double& m : row) {
            m = rng.uniform(0.2, 1.0);
            norm += m;
        }
        for (double& m : row) m /= norm;
    }

    image::ImageRGB img;
    img.width = width;
    img.height = height;
    img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double b[3];
            for (int k = 0; k < 3; ++k) {
                const double s =
                    std::sin(2.0 * M_PI * (waves[k].fx * x + waves[k].fy * y) + waves[k].phase);
                b[k] = std::tanh(waves[k].sharp * s);
            }
            for (int c = 0; c < 3; ++c) {
                const double v = mix[c][0] * b[0] + mix[c][1] * b[1] + mix[c][2] * b[2];
                const double byte = std::round(127.5 + 127.5 * v);
                img.pixels[3 * (static_cast<std::size_t>(y) * width + x) + static_cast<std::size_t>(c)] =
                    static_cast<std::uint8_t>(std::clamp(byte, 0.0, 255.0));
            }
        }
    }
    return img;
}

} // namespace mren::data
