#pragma once

// Reference implementations used to check the fast kernels. Everything here
// is written straight from the definitions (plain loops, double arithmetic),
// deliberately sharing no code with core/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mren/image.hpp"
#include "mren/rng.hpp"
#include "mren/tensor.hpp"

namespace oracle {

using mren::ConvSpec;
using mren::Dims4;
using mren::Rng;
using mren::Tensor4;

// same-padded direct convolution, six loops, groups supported
template <class T>
Tensor4<double> conv_ref(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* bias,
                         const ConvSpec& spec) {
    const auto d = x.dims();
    const std::int64_t oc = spec.out_channels, ic = spec.in_channels, g = spec.groups;
    const std::int64_t icg = ic / g, ocg = oc / g;
    const std::int64_t py = spec.kh / 2, px = spec.kw / 2;
    Tensor4<double> y(Dims4{d.n, oc, d.h, d.w});
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t o = 0; o < oc; ++o) {
            const std::int64_t grp = o / ocg;
            for (std::int64_t oy = 0; oy < d.h; ++oy)
                for (std::int64_t ox = 0; ox < d.w; ++ox) {
                    double acc = bias ? static_cast<double>(bias->data()[o]) : 0.0;
                    for (std::int64_t c = 0; c < icg; ++c)
                        for (int ky = 0; ky < spec.kh; ++ky)
                            for (int kx = 0; kx < spec.kw; ++kx) {
                                const std::int64_t iy = oy + ky - py;
                                const std::int64_t ix = ox + kx - px;
                                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                                acc += static_cast<double>(x.at(n, grp * icg + c, iy, ix)) *
                                       static_cast<double>(w.at(o, c, ky, kx));
                            }
                    y.at(n, o, oy, ox) = acc;
                }
        }
    return y;
}

inline double keys_ref(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

inline std::int64_t clampi(std::int64_t i, std::int64_t n) {
    return std::clamp<std::int64_t>(i, 0, n - 1);
}

// per-pixel gather upscale, half-pixel centers, clamp-to-edge
template <class T>
Tensor4<double> resize_up_ref(bool bicubic, const Tensor4<T>& x, int scale) {
    const auto d = x.dims();
    Tensor4<double> y(Dims4{d.n, d.c, d.h * scale, d.w * scale});
    const int reach = bicubic ? 2 : 1;
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t c = 0; c < d.c; ++c)
            for (std::int64_t oy = 0; oy < d.h * scale; ++oy)
                for (std::int64_t ox = 0; ox < d.w * scale; ++ox) {
                    const double cy = (oy + 0.5) / scale - 0.5;
                    const double cx = (ox + 0.5) / scale - 0.5;
                    const std::int64_t by = static_cast<std::int64_t>(std::floor(cy));
                    const std::int64_t bx = static_cast<std::int64_t>(std::floor(cx));
                    double acc = 0.0;
                    for (std::int64_t iy = by - reach + 1; iy <= by + reach; ++iy)
                        for (std::int64_t ix = bx - reach + 1; ix <= bx + reach; ++ix) {
                            const double wy = bicubic ? keys_ref(cy - static_cast<double>(iy))
                                                      : 1.0 - std::fabs(cy - static_cast<double>(iy));
                            const double wx = bicubic ? keys_ref(cx - static_cast<double>(ix))
                                                      : 1.0 - std::fabs(cx - static_cast<double>(ix));
                            acc += wy * wx *
                                   static_cast<double>(x.at(n, c, clampi(iy, d.h), clampi(ix, d.w)));
                        }
                    y.at(n, c, oy, ox) = acc;
                }
    return y;
}

// antialiased downscale: Keys kernel stretched by the factor, window
// normalized per axis, product weights
template <class T>
Tensor4<double> downscale_ref(const Tensor4<T>& x, int scale) {
    const auto d = x.dims();
    const std::int64_t oh = d.h / scale, ow = d.w / scale;
    const double support = 2.0 * scale;

    struct Win {
        std::int64_t lo, hi;
        std::vector<double> w;
    };
    auto axis = [&](std::int64_t o, std::int64_t size) {
        const double center = (o + 0.5) * scale - 0.5;
        Win win;
        win.lo = static_cast<std::int64_t>(std::ceil(center - support));
        win.hi = static_cast<std::int64_t>(std::floor(center + support));
        double sum = 0.0;
        for (std::int64_t i = win.lo; i <= win.hi; ++i) {
            win.w.push_back(keys_ref((static_cast<double>(i) - center) / scale));
            sum += win.w.back();
        }
        for (double& v : win.w) v /= sum;
        (void)size;
        return win;
    };

    Tensor4<double> y(Dims4{d.n, d.c, oh, ow});
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t c = 0; c < d.c; ++c)
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                const Win wy = axis(oy, d.h);
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    const Win wx = axis(ox, d.w);
                    double acc = 0.0;
                    for (std::int64_t iy = wy.lo; iy <= wy.hi; ++iy)
                        for (std::int64_t ix = wx.lo; ix <= wx.hi; ++ix)
                            acc += wy.w[static_cast<std::size_t>(iy - wy.lo)] *
                                   wx.w[static_cast<std::size_t>(ix - wx.lo)] *
                                   static_cast<double>(x.at(n, c, clampi(iy, d.h), clampi(ix, d.w)));
                    y.at(n, c, oy, ox) = acc;
                }
            }
    return y;
}

inline double y_ref(double r, double g, double b) {
    return 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
}

inline std::vector<double> y_plane_ref(const mren::image::ImageRGB& img) {
    std::vector<double> y(static_cast<std::size_t>(img.width) * img.height);
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = y_ref(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]);
    return y;
}

inline double psnr_ref(const mren::image::ImageRGB& a, const mren::image::ImageRGB& b, int shave) {
    const auto ya = y_plane_ref(a), yb = y_plane_ref(b);
    double se = 0.0;
    std::int64_t count = 0;
    for (int y = shave; y < a.height - shave; ++y)
        for (int x = shave; x < a.width - shave; ++x) {
            const double d = ya[static_cast<std::size_t>(y) * a.width + x] -
                             yb[static_cast<std::size_t>(y) * a.width + x];
            se += d * d;
            ++count;
        }
    const double mse = se / static_cast<double>(count);
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// windowed SSIM straight from the definition: non-separable 11x11 Gaussian,
// weighted moments per valid window
inline double ssim_ref(const mren::image::ImageRGB& a, const mren::image::ImageRGB& b, int shave) {
    const int win = 11;
    const double sigma = 1.5;
    double g[11];
    double gsum = 0.0;
    for (int i = 0; i < win; ++i) {
        const double d = i - 5.0;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        gsum += g[i];
    }
    for (double& v : g) v /= gsum;

    const auto ya = y_plane_ref(a), yb = y_plane_ref(b);
    const int w = a.width - 2 * shave, h = a.height - 2 * shave;
    auto yat = [&](const std::vector<double>& p, int x, int y) {
        return p[static_cast<std::size_t>(y + shave) * a.width + (x + shave)];
    };

    const double c1 = 6.5025, c2 = 58.5225; // (0.01*255)^2, (0.03*255)^2
    double total = 0.0;
    std::int64_t windows = 0;
    for (int oy = 0; oy + win <= h; ++oy)
        for (int ox = 0; ox + win <= w; ++ox) {
            double m1 = 0, m2 = 0;
            for (int j = 0; j < win; ++j)
                for (int i = 0; i < win; ++i) {
                    const double wgt = g[j] * g[i];
                    m1 += wgt * yat(ya, ox + i, oy + j);
                    m2 += wgt * yat(yb, ox + i, oy + j);
                }
            double v1 = 0, v2 = 0, cov = 0;
            for (int j = 0; j < win; ++j)
                for (int i = 0; i < win; ++i) {
                    const double wgt = g[j] * g[i];
                    const double d1 = yat(ya, ox + i, oy + j) - m1;
                    const double d2 = yat(yb, ox + i, oy + j) - m2;
                    v1 += wgt * d1 * d1;
                    v2 += wgt * d2 * d2;
                    cov += wgt * d1 * d2;
                }
            total += ((2 * m1 * m2 + c1) * (2 * cov + c2)) /
                     ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
            ++windows;
        }
    return total / static_cast<double>(windows);
}

// textbook Adam recurrence in double, quantized to float after each step the
// way a float parameter store would hold it
struct AdamRef {
    std::vector<double> m, v;
    std::int64_t t = 0;

    void step(std::vector<float>& w, const std::vector<float>& grad, double lr, double b1,
              double b2, double eps) {
        if (m.empty()) {
            m.assign(w.size(), 0.0);
            v.assign(w.size(), 0.0);
        }
        ++t;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mh = m[i] / (1.0 - std::pow(b1, static_cast<double>(t)));
            const double vh = v[i] / (1.0 - std::pow(b2, static_cast<double>(t)));
            w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * mh / (std::sqrt(vh) + eps));
        }
    }
};

// uniform helpers

template <class T>
Tensor4<T> random_tensor(const Dims4& d, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor4<T> t(d);
    for (std::int64_t i = 0; i < t.count(); ++i)
        t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

inline mren::image::ImageRGB random_image(int w, int h, Rng& rng) {
    mren::image::ImageRGB img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(3) * w * h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    return img;
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.count(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) -
                                  static_cast<double>(b.data()[i])));
    return m;
}

} // namespace oracle
