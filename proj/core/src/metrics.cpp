#include "mren/metrics.hpp"

#include <cmath>
#include <vector>

#include "mren/error.hpp"

namespace mren::metrics {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kPsnrCap = 100.0;

void check_pair(const image::ImageRGB& sr, const image::ImageRGB& hr) {
    if (sr.width != hr.width || sr.height != hr.height) {
        throw ShapeError("metric inputs differ: " + std::to_string(sr.width) + "x" +
                         std::to_string(sr.height) + " vs " + std::to_string(hr.width) + "x" +
                         std::to_string(hr.height));
    }
}

// Shaved luma plane as a dense matrix.
struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane shave_plane(const image::YPlane& y, int shave) {
    Plane p;
    p.w = y.width - 2 * shave;
    p.h = y.height - 2 * shave;
    p.v.resize(static_cast<std::size_t>(p.w) * p.h);
    for (int row = 0; row < p.h; ++row) {
        for (int col = 0; col < p.w; ++col) {
            p.v[static_cast<std::size_t>(row) * p.w + col] = y.at(col + shave, row + shave);
        }
    }
    return p;
}

Plane shaved_y(const image::ImageRGB& img, int shave) {
    return shave_plane(image::rgb_to_y(img), shave);
}

double psnr_planes(const Plane& a, const Plane& b) {
    double se = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.v.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

std::vector<double> gaussian_window() {
    std::vector<double> w(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        w[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (double& x : w) x /= sum;
    return w;
}

// Valid-region separable blur: output dims (h - 10, w - 10).
Plane blur_valid(const Plane& p, const std::vector<double>& win) {
    Plane tmp;
    tmp.w = p.w - kWindow + 1;
    tmp.h = p.h;
    tmp.v.resize(static_cast<std::size_t>(tmp.w) * tmp.h);
    for (int y = 0; y < tmp.h; ++y) {
        for (int x = 0; x < tmp.w; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += win[static_cast<std::size_t>(k)] * p.at(x + k, y);
            tmp.v[static_cast<std::size_t>(y) * tmp.w + x] = acc;
        }
    }
    Plane out;
    out.w = tmp.w;
    out.h = p.h - kWindow + 1;
    out.v.resize(static_cast<std::size_t>(out.w) * out.h);
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += win[static_cast<std::size_t>(k)] * tmp.at(x, y + k);
            out.v[static_cast<std::size_t>(y) * out.w + x] = acc;
        }
    }
    return out;
}

Plane hadamard(const Plane& a, const Plane& b) {
    Plane out;
    out.w = a.w;
    out.h = a.h;
    out.v.resize(a.v.size());
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

} // namespace

double psnr_y(const image::ImageRGB& sr, const image::ImageRGB& hr, int scale) {
    check_pair(sr, hr);
    if (sr.width < 2 * scale + 1 || sr.height < 2 * scale + 1) {
        throw IoError("image " + std::to_string(sr.width) + "x" + std::to_string(sr.height) +
                      " too small to shave a " + std::to_string(scale) + "-pixel border");
    }
    return psnr_planes(shaved_y(sr, scale), shaved_y(hr, scale));
}

double psnr_y(const image::YPlane& sr, const image::YPlane& hr, int shave) {
    if (sr.width != hr.width || sr.height != hr.height) {
        throw ShapeError("metric inputs differ: " + std::to_string(sr.width) + "x" +
                         std::to_string(sr.height) + " vs " + std::to_string(hr.width) + "x" +
                         std::to_string(hr.height));
    }
    if (sr.width < 2 * shave + 1 || sr.height < 2 * shave + 1) {
        throw IoError("plane " + std::to_string(sr.width) + "x" + std::to_string(sr.height) +
                      " too small to shave a " + std::to_string(shave) + "-pixel border");
    }
    return psnr_planes(shave_plane(sr, shave), shave_plane(hr, shave));
}

double ssim_y(const image::ImageRGB& sr, const image::ImageRGB& hr, int scale) {
    check_pair(sr, hr);
    if (sr.width < 2 * scale + kWindow || sr.height < 2 * scale + kWindow) {
        throw IoError("image " + std::to_string(sr.width) + "x" + std::to_string(sr.height) +
                      " leaves no 11x11 window after shaving a " + std::to_string(scale) +
                      "-pixel border");
    }
    const Plane x = shaved_y(sr, scale);
    const Plane y = shaved_y(hr, scale);
    const std::vector<double> win = gaussian_window();

    const Plane mu1 = blur_valid(x, win);
    const Plane mu2 = blur_valid(y, win);
    const Plane xx = blur_valid(hadamard(x, x), win);
    const Plane yy = blur_valid(hadamard(y, y), win);
    const Plane xy = blur_valid(hadamard(x, y), win);

    const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
    const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
    double total = 0.0;
    for (std::size_t i = 0; i < mu1.v.size(); ++i) {
        const double m1 = mu1.v[i], m2 = mu2.v[i];
        const double s1 = xx.v[i] - m1 * m1;
        const double s2 = yy.v[i] - m2 * m2;
        const double s12 = xy.v[i] - m1 * m2;
        const double num = (2.0 * m1 * m2 + c1) * (2.0 * s12 + c2);
        const double den = (m1 * m1 + m2 * m2 + c1) * (s1 + s2 + c2);
        total += num / den;
    }
    return total / static_cast<double>(mu1.v.size());
}

} // namespace mren::metrics
