#include "mren/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mren::ops {
namespace {

constexpr double kGeluAlpha = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluBeta = 0.044715;

// Scratch budget for one im2col column block, in elements.
constexpr std::int64_t kColBlockElems = 1 << 20;

std::int64_t col_block_cols(std::int64_t k, std::int64_t total_cols) {
    std::int64_t cols = kColBlockElems / std::max<std::int64_t>(k, 1);
    cols = std::clamp<std::int64_t>(cols, 64, total_cols);
    return cols;
}

// B[k][j] for k = (c, ky, kx) row-major and j indexing output sites
// [col0, col1) of an H x W plane. Stride 1, same zero padding.
template <class T>
void im2col_block(const T* x, std::int64_t channels, std::int64_t height, std::int64_t width,
                  int kh, int kw, std::int64_t col0, std::int64_t col1, T* buf) {
    const int pad_h = (kh - 1) / 2;
    const int pad_w = (kw - 1) / 2;
    const std::int64_t ncols = col1 - col0;
    T* dst = buf;
    for (std::int64_t c = 0; c < channels; ++c) {
        const T* plane = x + c * height * width;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                std::int64_t idx = col0;
                std::int64_t j = 0;
                while (j < ncols) {
                    const std::int64_t oy = idx / width;
                    const std::int64_t ox0 = idx % width;
                    const std::int64_t run = std::min(ncols - j, width - ox0);
                    const std::int64_t iy = oy + ky - pad_h;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst + j, dst + j + run, T(0));
                    } else {
                        const T* src_row = plane + iy * width;
                        // ix = ox + kx - pad_w must fall in [0, width)
                        const std::int64_t shift = kx - pad_w;
                        std::int64_t lead = std::max<std::int64_t>(0, -shift - ox0);
                        std::int64_t tail = std::max<std::int64_t>(0, ox0 + run + shift - width);
                        lead = std::min(lead, run);
                        tail = std::min(tail, run - lead);
                        const std::int64_t mid = run - lead - tail;
                        std::fill(dst + j, dst + j + lead, T(0));
                        if (mid > 0) {
                            std::memcpy(dst + j + lead, src_row + ox0 + lead + shift,
                                        static_cast<std::size_t>(mid) * sizeof(T));
                        }
                        std::fill(dst + j + lead + mid, dst + j + run, T(0));
                    }
                    j += run;
                    idx += run;
                }
                dst += ncols;
            }
        }
    }
}

// C[M x N] = A[M x K] * B[K x N], rows of C owned by this call, K ascending.
// Row-blocked over i so each B row is loaded once per 4 output rows.
template <class T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
    std::int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
        T* c0 = c + (i + 0) * n;
        T* c1 = c + (i + 1) * n;
        T* c2 = c + (i + 2) * n;
        T* c3 = c + (i + 3) * n;
        std::fill(c0, c0 + n, T(0));
        std::fill(c1, c1 + n, T(0));
        std::fill(c2, c2 + n, T(0));
        std::fill(c3, c3 + n, T(0));
        for (std::int64_t p = 0; p < k; ++p) {
            const T a0 = a[(i + 0) * k + p];
            const T a1 = a[(i + 1) * k + p];
            const T a2 = a[(i + 2) * k + p];
            const T a3 = a[(i + 3) * k + p];
            const T* br = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) {
                const T bv = br[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        T* cr = c + i * n;
        std::fill(cr, cr + n, T(0));
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* br = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

// C[K x N] = A^T * D with A[M x K], D[M x N]. m is blocked by 4 so each C row
// absorbs four ranks per pass; the blocking is fixed, so results are
// reproducible on any machine.
template <class T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* d, T* c) {
    std::fill(c, c + k * n, T(0));
    std::int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* d0 = d + (i + 0) * n;
        const T* d1 = d + (i + 1) * n;
        const T* d2 = d + (i + 2) * n;
        const T* d3 = d + (i + 3) * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const T a0 = a[(i + 0) * k + p];
            const T a1 = a[(i + 1) * k + p];
            const T a2 = a[(i + 2) * k + p];
            const T a3 = a[(i + 3) * k + p];
            T* crow = c + p * n;
            for (std::int64_t j = 0; j < n; ++j)
                crow[j] += (a0 * d0[j] + a1 * d1[j]) + (a2 * d2[j] + a3 * d3[j]);
        }
    }
    for (; i < m; ++i) {
        const T* drow = d + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            T* crow = c + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * drow[j];
        }
    }
}

// C[M x K] += D * B^T with D[M x N], B[K x N]. Dot products run in 16
// independent lanes folded in a fixed order, which keeps the reduction
// deterministic while letting it vectorize.
template <class T>
void gemm_nt_acc(std::int64_t m, std::int64_t n, std::int64_t k, const T* d, const T* b, T* c) {
    constexpr std::int64_t kLanes = 16;
    const std::int64_t body = n / kLanes * kLanes;
    for (std::int64_t i = 0; i < m; ++i) {
        const T* drow = d + i * n;
        std::int64_t p = 0;
        for (; p + 4 <= k; p += 4) {
            const T* b0 = b + (p + 0) * n;
            const T* b1 = b + (p + 1) * n;
            const T* b2 = b + (p + 2) * n;
            const T* b3 = b + (p + 3) * n;
            T l0[kLanes] = {}, l1[kLanes] = {}, l2[kLanes] = {}, l3[kLanes] = {};
            for (std::int64_t j = 0; j < body; j += kLanes) {
                for (std::int64_t u = 0; u < kLanes; ++u) {
                    const T dv = drow[j + u];
                    l0[u] += dv * b0[j + u];
                    l1[u] += dv * b1[j + u];
                    l2[u] += dv * b2[j + u];
                    l3[u] += dv * b3[j + u];
                }
            }
            T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
            for (std::int64_t u = 0; u < kLanes; ++u) {
                s0 += l0[u];
                s1 += l1[u];
                s2 += l2[u];
                s3 += l3[u];
            }
            for (std::int64_t j = body; j < n; ++j) {
                const T dv = drow[j];
                s0 += dv * b0[j];
                s1 += dv * b1[j];
                s2 += dv * b2[j];
                s3 += dv * b3[j];
            }
            c[i * k + p + 0] += s0;
            c[i * k + p + 1] += s1;
            c[i * k + p + 2] += s2;
            c[i * k + p + 3] += s3;
        }
        for (; p < k; ++p) {
            const T* brow = b + p * n;
            T lane[kLanes] = {};
            for (std::int64_t j = 0; j < body; j += kLanes)
                for (std::int64_t u = 0; u < kLanes; ++u) lane[u] += drow[j + u] * brow[j + u];
            T s = T(0);
            for (std::int64_t u = 0; u < kLanes; ++u) s += lane[u];
            for (std::int64_t j = body; j < n; ++j) s += drow[j] * brow[j];
            c[i * k + p] += s;
        }
    }
}

// Scatters one im2col block back, walking whole row segments so the inner
// add is contiguous. The (c, ky, kx, site-ascending) accumulation order is
// the same one a per-element walk would use.
template <class T>
void col2im_add_block(const T* col, std::int64_t channels, std::int64_t height, std::int64_t width,
                      int kh, int kw, std::int64_t col0, std::int64_t col1, T* dx) {
    const int pad_h = (kh - 1) / 2;
    const int pad_w = (kw - 1) / 2;
    const std::int64_t ncols = col1 - col0;
    const std::int64_t oy_first = col0 / width;
    const std::int64_t oy_last = (col1 - 1) / width;
    const T* src = col;
    for (std::int64_t c = 0; c < channels; ++c) {
        T* plane = dx + c * height * width;
        for (int ky = 0; ky < kh; ++ky) {
            const std::int64_t dy_off = ky - pad_h;
            for (int kx = 0; kx < kw; ++kx) {
                const std::int64_t dx_off = kx - pad_w;
                for (std::int64_t oy = oy_first; oy <= oy_last; ++oy) {
                    const std::int64_t iy = oy + dy_off;
                    if (iy < 0 || iy >= height) continue;
                    std::int64_t ox0 = std::max(col0 - oy * width, -dx_off);
                    std::int64_t ox1 = std::min(col1 - oy * width, width - dx_off);
                    if (ox1 > width) ox1 = width;
                    if (ox0 < 0) ox0 = 0;
                    if (ox0 >= ox1) continue;
                    const T* s = src + oy * width + ox0 - col0;
                    T* t = plane + iy * width + ox0 + dx_off;
                    for (std::int64_t j = 0; j < ox1 - ox0; ++j) t[j] += s[j];
                }
                src += ncols;
            }
        }
    }
}

void check_conv_args(const Dims4& x, const Dims4& w, const Dims4* bias, const ConvSpec& spec) {
    spec.validate();
    if (x.c != spec.in_channels) {
        throw ShapeError("conv2d: input channel axis is " + std::to_string(x.c) +
                         ", spec.in_channels is " + std::to_string(spec.in_channels));
    }
    if (w != spec.weight_dims()) {
        throw ShapeError("conv2d: weight dims " + w.str() + " do not match spec " +
                         spec.weight_dims().str());
    }
    if (bias && *bias != spec.bias_dims()) {
        throw ShapeError("conv2d: bias dims " + bias->str() + " do not match out_channels axis " +
                         std::to_string(spec.out_channels));
    }
}

template <class T>
void depthwise_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* bias,
                       const ConvSpec& spec, Tensor4<T>& y) {
    const auto d = x.dims();
    const int kh = spec.kh, kw = spec.kw;
    const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
    const std::int64_t mult = spec.out_channels / spec.groups;
    const std::int64_t planes = d.n * spec.out_channels;
#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const std::int64_t n = plane / spec.out_channels;
        const std::int64_t co = plane % spec.out_channels;
        const std::int64_t ci = co / mult;
        const T* xp = x.data() + (n * d.c + ci) * d.h * d.w;
        const T* wp = w.data() + co * kh * kw;
        const T bv = bias ? bias->data()[co] : T(0);
        T* yp = y.data() + plane * d.h * d.w;
        for (std::int64_t oy = 0; oy < d.h; ++oy) {
            for (std::int64_t ox = 0; ox < d.w; ++ox) {
                T acc = T(0);
                for (int ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = oy + ky - pad_h;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const std::int64_t ix = ox + kx - pad_w;
                        if (ix < 0 || ix >= d.w) continue;
                        acc += xp[iy * d.w + ix] * wp[ky * kw + kx];
                    }
                }
                yp[oy * d.w + ox] = acc + bv;
            }
        }
    }
}

template <class T>
void depthwise_grad_input(const Tensor4<T>& dy, const Tensor4<T>& w, const ConvSpec& spec,
                          Tensor4<T>& dx) {
    const auto d = dx.dims();
    const int kh = spec.kh, kw = spec.kw;
    const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
    const std::int64_t mult = spec.out_channels / spec.groups;
    const std::int64_t planes = d.n * d.c;
#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const std::int64_t n = plane / d.c;
        const std::int64_t ci = plane % d.c;
        T* dxp = dx.data() + plane * d.h * d.w;
        for (std::int64_t iy = 0; iy < d.h; ++iy) {
            for (std::int64_t ix = 0; ix < d.w; ++ix) {
                T acc = T(0);
                for (std::int64_t r = 0; r < mult; ++r) {
                    const std::int64_t co = ci * mult + r;
                    const T* dyp = dy.data() + (n * spec.out_channels + co) * d.h * d.w;
                    const T* wp = w.data() + co * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        const std::int64_t oy = iy - ky + pad_h;
                        if (oy < 0 || oy >= d.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::int64_t ox = ix - kx + pad_w;
                            if (ox < 0 || ox >= d.w) continue;
                            acc += dyp[oy * d.w + ox] * wp[ky * kw + kx];
                        }
                    }
                }
                dxp[iy * d.w + ix] = acc;
            }
        }
    }
}

template <class T>
void depthwise_grad_weight(const Tensor4<T>& dy, const Tensor4<T>& x, const ConvSpec& spec,
                           Tensor4<T>& dw) {
    const auto d = x.dims();
    const int kh = spec.kh, kw = spec.kw;
    const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
    const std::int64_t mult = spec.out_channels / spec.groups;
#pragma omp parallel for schedule(static)
    for (std::int64_t co = 0; co < spec.out_channels; ++co) {
        const std::int64_t ci = co / mult;
        T* wp = dw.data() + co * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T acc = T(0);
                for (std::int64_t n = 0; n < d.n; ++n) {
                    const T* xp = x.data() + (n * d.c + ci) * d.h * d.w;
                    const T* dyp = dy.data() + (n * spec.out_channels + co) * d.h * d.w;
                    for (std::int64_t oy = 0; oy < d.h; ++oy) {
                        const std::int64_t iy = oy + ky - pad_h;
                        if (iy < 0 || iy >= d.h) continue;
                        for (std::int64_t ox = 0; ox < d.w; ++ox) {
                            const std::int64_t ix = ox + kx - pad_w;
                            if (ix < 0 || ix >= d.w) continue;
                            acc += dyp[oy * d.w + ox] * xp[iy * d.w + ix];
                        }
                    }
                }
                wp[ky * kw + kx] = acc;
            }
        }
    }
}

// Keys cubic kernel, a = -0.5.
double keys_kernel(double t) {
    const double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

struct Tap {
    std::int64_t lo = 0; // first source index before clamping
    int count = 0;
    double w[4] = {0, 0, 0, 0};
};

// Upscale taps along one axis, half-pixel centers.
std::vector<Tap> up_taps(ResizeKind kind, std::int64_t src_size, int scale) {
    std::vector<Tap> taps(static_cast<std::size_t>(src_size) * scale);
    for (std::int64_t o = 0; o < src_size * scale; ++o) {
        const double center = (static_cast<double>(o) + 0.5) / scale - 0.5;
        Tap t;
        if (kind == ResizeKind::bilinear) {
            const std::int64_t i0 = static_cast<std::int64_t>(std::floor(center));
            const double frac = center - static_cast<double>(i0);
            t.lo = i0;
            t.count = 2;
            t.w[0] = 1.0 - frac;
            t.w[1] = frac;
        } else {
            const std::int64_t base = static_cast<std::int64_t>(std::floor(center));
            t.lo = base - 1;
            t.count = 4;
            for (int j = 0; j < 4; ++j) {
                t.w[j] = keys_kernel(center - static_cast<double>(t.lo + j));
            }
        }
        taps[static_cast<std::size_t>(o)] = t;
    }
    return taps;
}

std::int64_t clamp_idx(std::int64_t i, std::int64_t n) {
    return std::clamp<std::int64_t>(i, 0, n - 1);
}

// Antialiased downscale taps: Keys kernel stretched by the scale factor,
// weights normalized to unit sum.
struct WideTap {
    std::int64_t lo = 0;
    std::vector<double> w;
};

std::vector<WideTap> down_taps(std::int64_t src_size, int scale) {
    const std::int64_t out_size = src_size / scale;
    std::vector<WideTap> taps(static_cast<std::size_t>(out_size));
    const double support = 2.0 * scale;
    for (std::int64_t o = 0; o < out_size; ++o) {
        const double center = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const auto lo = static_cast<std::int64_t>(std::ceil(center - support));
        const auto hi = static_cast<std::int64_t>(std::floor(center + support));
        WideTap t;
        t.lo = lo;
        t.w.resize(static_cast<std::size_t>(hi - lo + 1));
        double sum = 0.0;
        for (std::int64_t i = lo; i <= hi; ++i) {
            const double v = keys_kernel((static_cast<double>(i) - center) / scale);
            t.w[static_cast<std::size_t>(i - lo)] = v;
            sum += v;
        }
        for (double& v : t.w) v /= sum;
        taps[static_cast<std::size_t>(o)] = t;
    }
    return taps;
}

} // namespace

template <class T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* bias,
                  const ConvSpec& spec) {
    const Dims4 bdims = bias ? bias->dims() : Dims4{};
    check_conv_args(x.dims(), w.dims(), bias ? &bdims : nullptr, spec);
    if (spec.bias != (bias != nullptr)) {
        throw ShapeError(std::string("conv2d: spec.bias is ") + (spec.bias ? "true" : "false") +
                         " but bias tensor is " + (bias ? "present" : "absent"));
    }
    const auto d = x.dims();
    Tensor4<T> y(Dims4{d.n, spec.out_channels, d.h, d.w});
    if (y.count() == 0) return y;

    if (spec.groups == spec.in_channels && spec.groups > 1) {
        depthwise_forward(x, w, bias, spec, y);
        return y;
    }

    const std::int64_t m = spec.out_channels;
    const std::int64_t k = static_cast<std::int64_t>(spec.in_channels) * spec.kh * spec.kw;
    const std::int64_t sites = d.h * d.w;
    const std::int64_t block = col_block_cols(k, sites);
    const std::int64_t nblocks = (sites + block - 1) / block;
    const std::int64_t jobs = d.n * nblocks;

#pragma omp parallel for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::int64_t n = job / nblocks;
        const std::int64_t col0 = (job % nblocks) * block;
        const std::int64_t col1 = std::min(col0 + block, sites);
        std::vector<T> colbuf(static_cast<std::size_t>(k * (col1 - col0)));
        std::vector<T> out(static_cast<std::size_t>(m * (col1 - col0)));
        im2col_block(x.data() + n * d.c * sites, d.c, d.h, d.w, spec.kh, spec.kw, col0, col1,
                     colbuf.data());
        gemm_nn(m, col1 - col0, k, w.data(), colbuf.data(), out.data());
        for (std::int64_t i = 0; i < m; ++i) {
            const T bv = bias ? bias->data()[i] : T(0);
            T* dst = y.data() + (n * m + i) * sites + col0;
            const T* src = out.data() + i * (col1 - col0);
            for (std::int64_t j = 0; j < col1 - col0; ++j) dst[j] = src[j] + bv;
        }
    }
    return y;
}

template <class T>
Tensor4<T> conv2d_grad_input(const Tensor4<T>& dy, const Tensor4<T>& w, const Dims4& x_dims,
                             const ConvSpec& spec) {
    Tensor4<T> dx(x_dims);
    if (dx.count() == 0) return dx;
    if (spec.groups == spec.in_channels && spec.groups > 1) {
        depthwise_grad_input(dy, w, spec, dx);
        return dx;
    }
    const std::int64_t m = spec.out_channels;
    const std::int64_t k = static_cast<std::int64_t>(spec.in_channels) * spec.kh * spec.kw;
    const std::int64_t sites = x_dims.h * x_dims.w;
    const std::int64_t block = col_block_cols(k, sites);

#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < x_dims.n; ++n) {
        std::vector<T> colbuf;
        std::vector<T> dyblock;
        for (std::int64_t col0 = 0; col0 < sites; col0 += block) {
            const std::int64_t col1 = std::min(col0 + block, sites);
            const std::int64_t ncols = col1 - col0;
            dyblock.resize(static_cast<std::size_t>(m * ncols));
            for (std::int64_t i = 0; i < m; ++i) {
                std::memcpy(dyblock.data() + i * ncols, dy.data() + (n * m + i) * sites + col0,
                            static_cast<std::size_t>(ncols) * sizeof(T));
            }
            colbuf.assign(static_cast<std::size_t>(k * ncols), T(0));
            gemm_tn(m, ncols, k, w.data(), dyblock.data(), colbuf.data());
            col2im_add_block(colbuf.data(), x_dims.c, x_dims.h, x_dims.w, spec.kh, spec.kw, col0,
                             col1, dx.data() + n * x_dims.c * sites);
        }
    }
    return dx;
}

template <class T>
Tensor4<T> conv2d_grad_weight(const Tensor4<T>& dy, const Tensor4<T>& x, const ConvSpec& spec) {
    Tensor4<T> dw(spec.weight_dims());
    if (spec.groups == spec.in_channels && spec.groups > 1) {
        depthwise_grad_weight(dy, x, spec, dw);
        return dw;
    }
    const auto d = x.dims();
    const std::int64_t m = spec.out_channels;
    const std::int64_t k = static_cast<std::int64_t>(spec.in_channels) * spec.kh * spec.kw;
    const std::int64_t sites = d.h * d.w;
    const std::int64_t block = col_block_cols(k, sites);

    std::vector<T> colbuf;
    std::vector<T> dyblock;
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t col0 = 0; col0 < sites; col0 += block) {
            const std::int64_t col1 = std::min(col0 + block, sites);
            const std::int64_t ncols = col1 - col0;
            colbuf.resize(static_cast<std::size_t>(k * ncols));
            im2col_block(x.data() + n * d.c * sites, d.c, d.h, d.w, spec.kh, spec.kw, col0, col1,
                         colbuf.data());
            dyblock.resize(static_cast<std::size_t>(m * ncols));
            for (std::int64_t i = 0; i < m; ++i) {
                std::memcpy(dyblock.data() + i * ncols, dy.data() + (n * m + i) * sites + col0,
                            static_cast<std::size_t>(ncols) * sizeof(T));
            }
            gemm_nt_acc(m, ncols, k, dyblock.data(), colbuf.data(), dw.data());
        }
    }
    return dw;
}

template <class T>
Tensor4<T> conv2d_grad_bias(const Tensor4<T>& dy) {
    const auto d = dy.dims();
    Tensor4<T> db(Dims4{1, d.c, 1, 1});
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < d.c; ++c) {
        T acc = T(0);
        for (std::int64_t n = 0; n < d.n; ++n) {
            const T* p = dy.data() + (n * d.c + c) * d.h * d.w;
            for (std::int64_t i = 0; i < d.h * d.w; ++i) acc += p[i];
        }
        db.data()[c] = acc;
    }
    return db;
}

template <class T>
Tensor4<T> gelu(const Tensor4<T>& x) {
    Tensor4<T> y(x.dims());
    const std::int64_t count = x.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
        const T v = x.data()[i];
        const T u = static_cast<T>(kGeluAlpha) * (v + static_cast<T>(kGeluBeta) * v * v * v);
        y.data()[i] = T(0.5) * v * (T(1) + std::tanh(u));
    }
    return y;
}

template <class T>
Tensor4<T> gelu_grad(const Tensor4<T>& x, const Tensor4<T>& dy) {
    check_same_dims(x.dims(), dy.dims(), "gelu_grad");
    Tensor4<T> dx(x.dims());
    const std::int64_t count = x.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
        const T v = x.data()[i];
        const T u = static_cast<T>(kGeluAlpha) * (v + static_cast<T>(kGeluBeta) * v * v * v);
        const T t = std::tanh(u);
        const T du = static_cast<T>(kGeluAlpha) * (T(1) + T(3) * static_cast<T>(kGeluBeta) * v * v);
        const T g = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        dx.data()[i] = dy.data()[i] * g;
    }
    return dx;
}

template <class T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
    Tensor4<T> y(x.dims());
    const std::int64_t count = x.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
        const T v = x.data()[i];
        if (v >= T(0)) {
            y.data()[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y.data()[i] = e / (T(1) + e);
        }
    }
    return y;
}

template <class T>
Tensor4<T> sigmoid_grad(const Tensor4<T>& y, const Tensor4<T>& dy) {
    check_same_dims(y.dims(), dy.dims(), "sigmoid_grad");
    Tensor4<T> dx(y.dims());
    const std::int64_t count = y.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
        const T s = y.data()[i];
        dx.data()[i] = dy.data()[i] * s * (T(1) - s);
    }
    return dx;
}

template <class T>
Tensor4<T> add(const Tensor4<T>& x, const Tensor4<T>& y) {
    check_same_dims(x.dims(), y.dims(), "add");
    Tensor4<T> out(x.dims());
    const std::int64_t count = x.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) out.data()[i] = x.data()[i] + y.data()[i];
    return out;
}

template <class T>
Tensor4<T> mul(const Tensor4<T>& x, const Tensor4<T>& y) {
    check_same_dims(x.dims(), y.dims(), "mul");
    Tensor4<T> out(x.dims());
    const std::int64_t count = x.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) out.data()[i] = x.data()[i] * y.data()[i];
    return out;
}

template <class T>
Tensor4<T> axpy(T alpha, const Tensor4<T>& x, const Tensor4<T>& y) {
    check_same_dims(x.dims(), y.dims(), "axpy");
    Tensor4<T> out(x.dims());
    const std::int64_t count = x.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) out.data()[i] = alpha * x.data()[i] + y.data()[i];
    return out;
}

template <class T>
Tensor4<T> scale(T alpha, const Tensor4<T>& x) {
    Tensor4<T> out(x.dims());
    const std::int64_t count = x.count();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) out.data()[i] = alpha * x.data()[i];
    return out;
}

template <class T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no parts");
    const Dims4 first = parts[0]->dims();
    std::int64_t total_c = 0;
    for (const auto* p : parts) {
        const Dims4 d = p->dims();
        if (d.n != first.n) throw ShapeError("concat_channels: batch axis mismatch " + d.str() + " vs " + first.str());
        if (d.h != first.h || d.w != first.w) {
            throw ShapeError("concat_channels: spatial axes mismatch " + d.str() + " vs " + first.str());
        }
        total_c += d.c;
    }
    Tensor4<T> out(Dims4{first.n, total_c, first.h, first.w});
    const std::int64_t plane = first.h * first.w;
    for (std::int64_t n = 0; n < first.n; ++n) {
        std::int64_t coff = 0;
        for (const auto* p : parts) {
            const std::int64_t pc = p->dims().c;
            std::memcpy(out.data() + (n * total_c + coff) * plane, p->data() + n * pc * plane,
                        static_cast<std::size_t>(pc * plane) * sizeof(T));
            coff += pc;
        }
    }
    return out;
}

template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::int64_t c0, std::int64_t c1) {
    const auto d = x.dims();
    if (c0 < 0 || c1 > d.c || c0 >= c1) {
        throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of channel axis " + std::to_string(d.c));
    }
    Tensor4<T> out(Dims4{d.n, c1 - c0, d.h, d.w});
    const std::int64_t plane = d.h * d.w;
    for (std::int64_t n = 0; n < d.n; ++n) {
        std::memcpy(out.data() + n * (c1 - c0) * plane, x.data() + (n * d.c + c0) * plane,
                    static_cast<std::size_t>((c1 - c0) * plane) * sizeof(T));
    }
    return out;
}

template <class T>
Tensor4<T> pad_channels(const Tensor4<T>& dy, std::int64_t c0, std::int64_t total_c) {
    const auto d = dy.dims();
    if (c0 < 0 || c0 + d.c > total_c) {
        throw ShapeError("pad_channels: offset " + std::to_string(c0) + " with " +
                         std::to_string(d.c) + " channels exceeds axis " + std::to_string(total_c));
    }
    Tensor4<T> out(Dims4{d.n, total_c, d.h, d.w});
    const std::int64_t plane = d.h * d.w;
    for (std::int64_t n = 0; n < d.n; ++n) {
        std::memcpy(out.data() + (n * total_c + c0) * plane, dy.data() + n * d.c * plane,
                    static_cast<std::size_t>(d.c * plane) * sizeof(T));
    }
    return out;
}

template <class T>
Tensor4<T> resize_up(ResizeKind kind, const Tensor4<T>& x, int scale) {
    if (scale < 1) throw ShapeError("resize_up: scale must be >= 1, got " + std::to_string(scale));
    if (scale == 1) return x;
    const auto d = x.dims();
    Tensor4<T> y(Dims4{d.n, d.c, d.h * scale, d.w * scale});
    const auto ty = up_taps(kind, d.h, scale);
    const auto tx = up_taps(kind, d.w, scale);
    const std::int64_t planes = d.n * d.c;
    const std::int64_t oh = d.h * scale, ow = d.w * scale;
#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const T* src = x.data() + plane * d.h * d.w;
        T* dst = y.data() + plane * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const Tap& tapy = ty[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const Tap& tapx = tx[static_cast<std::size_t>(ox)];
                double acc = 0.0;
                for (int jy = 0; jy < tapy.count; ++jy) {
                    const std::int64_t iy = clamp_idx(tapy.lo + jy, d.h);
                    for (int jx = 0; jx < tapx.count; ++jx) {
                        const std::int64_t ix = clamp_idx(tapx.lo + jx, d.w);
                        acc += tapy.w[jy] * tapx.w[jx] * static_cast<double>(src[iy * d.w + ix]);
                    }
                }
                dst[oy * ow + ox] = static_cast<T>(acc);
            }
        }
    }
    return y;
}

template <class T>
Tensor4<T> resize_up_grad(ResizeKind kind, const Tensor4<T>& dy, const Dims4& x_dims, int scale) {
    if (scale == 1) return dy;
    const auto od = dy.dims();
    Tensor4<T> dx(x_dims);
    const auto ty = up_taps(kind, x_dims.h, scale);
    const auto tx = up_taps(kind, x_dims.w, scale);
    const std::int64_t planes = x_dims.n * x_dims.c;
#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const T* src = dy.data() + plane * od.h * od.w;
        T* dst = dx.data() + plane * x_dims.h * x_dims.w;
        for (std::int64_t oy = 0; oy < od.h; ++oy) {
            const Tap& tapy = ty[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < od.w; ++ox) {
                const Tap& tapx = tx[static_cast<std::size_t>(ox)];
                const double g = static_cast<double>(src[oy * od.w + ox]);
                for (int jy = 0; jy < tapy.count; ++jy) {
                    const std::int64_t iy = clamp_idx(tapy.lo + jy, x_dims.h);
                    for (int jx = 0; jx < tapx.count; ++jx) {
                        const std::int64_t ix = clamp_idx(tapx.lo + jx, x_dims.w);
                        dst[iy * x_dims.w + ix] += static_cast<T>(tapy.w[jy] * tapx.w[jx] * g);
                    }
                }
            }
        }
    }
    return dx;
}

template <class T>
Tensor4<T> downscale_bicubic(const Tensor4<T>& x, int scale) {
    if (scale < 1) throw ShapeError("downscale_bicubic: scale must be >= 1, got " + std::to_string(scale));
    if (scale == 1) return x;
    const auto d = x.dims();
    if (d.h % scale != 0 || d.w % scale != 0) {
        throw ShapeError("downscale_bicubic: spatial axes " + d.str() + " not divisible by scale " +
                         std::to_string(scale));
    }
    const std::int64_t oh = d.h / scale, ow = d.w / scale;
    const auto ty = down_taps(d.h, scale);
    const auto tx = down_taps(d.w, scale);
    Tensor4<T> y(Dims4{d.n, d.c, oh, ow});
    const std::int64_t planes = d.n * d.c;
#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const T* src = x.data() + plane * d.h * d.w;
        T* dst = y.data() + plane * oh * ow;
        // horizontal pass then vertical, both in double
        std::vector<double> tmp(static_cast<std::size_t>(d.h * ow));
        for (std::int64_t iy = 0; iy < d.h; ++iy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const WideTap& t = tx[static_cast<std::size_t>(ox)];
                double acc = 0.0;
                for (std::size_t j = 0; j < t.w.size(); ++j) {
                    const std::int64_t ix = clamp_idx(t.lo + static_cast<std::int64_t>(j), d.w);
                    acc += t.w[j] * static_cast<double>(src[iy * d.w + ix]);
                }
                tmp[static_cast<std::size_t>(iy * ow + ox)] = acc;
            }
        }
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const WideTap& t = ty[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t j = 0; j < t.w.size(); ++j) {
                    const std::int64_t iy = clamp_idx(t.lo + static_cast<std::int64_t>(j), d.h);
                    acc += t.w[j] * tmp[static_cast<std::size_t>(iy * ow + ox)];
                }
                dst[oy * ow + ox] = static_cast<T>(acc);
            }
        }
    }
    return y;
}

template <class T>
T l1_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
    check_same_dims(pred.dims(), target.dims(), "l1_loss");
    double acc = 0.0;
    const std::int64_t count = pred.count();
    for (std::int64_t i = 0; i < count; ++i) {
        acc += std::fabs(static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]));
    }
    return static_cast<T>(acc / static_cast<double>(count));
}

template <class T>
Tensor4<T> l1_loss_grad(const Tensor4<T>& pred, const Tensor4<T>& target, T upstream) {
    check_same_dims(pred.dims(), target.dims(), "l1_loss_grad");
    Tensor4<T> g(pred.dims());
    const std::int64_t count = pred.count();
    const T unit = static_cast<T>(static_cast<double>(upstream) / static_cast<double>(count));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
        const T diff = pred.data()[i] - target.data()[i];
        g.data()[i] = diff > T(0) ? unit : (diff < T(0) ? -unit : T(0));
    }
    return g;
}

template <class T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
    const auto d = x.dims();
    Tensor4<T> y(Dims4{d.n, d.c, 1, 1});
    const std::int64_t plane = d.h * d.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < d.n * d.c; ++p) {
        double acc = 0.0;
        const T* src = x.data() + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(src[i]);
        y.data()[p] = static_cast<T>(acc / static_cast<double>(plane));
    }
    return y;
}

template <class T>
Tensor4<T> global_avg_pool_grad(const Tensor4<T>& dy, const Dims4& x_dims) {
    Tensor4<T> dx(x_dims);
    const std::int64_t plane = x_dims.h * x_dims.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < x_dims.n * x_dims.c; ++p) {
        const T g = static_cast<T>(static_cast<double>(dy.data()[p]) / static_cast<double>(plane));
        T* dst = dx.data() + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = g;
    }
    return dx;
}

template <class T>
Tensor4<T> scale_channels(const Tensor4<T>& x, const Tensor4<T>& s) {
    const auto d = x.dims();
    const auto sd = s.dims();
    if (sd.n != d.n || sd.c != d.c || sd.h != 1 || sd.w != 1) {
        throw ShapeError("scale_channels: scale dims " + sd.str() + " must be (" +
                         std::to_string(d.n) + "," + std::to_string(d.c) + ",1,1)");
    }
    Tensor4<T> y(d);
    const std::int64_t plane = d.h * d.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < d.n * d.c; ++p) {
        const T sv = s.data()[p];
        const T* src = x.data() + p * plane;
        T* dst = y.data() + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * sv;
    }
    return y;
}

template <class T>
Tensor4<T> scale_channels_grad_scale(const Tensor4<T>& dy, const Tensor4<T>& x) {
    check_same_dims(dy.dims(), x.dims(), "scale_channels_grad_scale");
    const auto d = x.dims();
    Tensor4<T> ds(Dims4{d.n, d.c, 1, 1});
    const std::int64_t plane = d.h * d.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < d.n * d.c; ++p) {
        double acc = 0.0;
        const T* a = dy.data() + p * plane;
        const T* b = x.data() + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        ds.data()[p] = static_cast<T>(acc);
    }
    return ds;
}

template <class T>
T sum(const Tensor4<T>& x) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.count(); ++i) acc += static_cast<double>(x.data()[i]);
    return static_cast<T>(acc);
}

#define MREN_INSTANTIATE_OPS(T)                                                                    \
    template Tensor4<T> conv2d<T>(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*,        \
                                  const ConvSpec&);                                                \
    template Tensor4<T> conv2d_grad_input<T>(const Tensor4<T>&, const Tensor4<T>&, const Dims4&,  \
                                             const ConvSpec&);                                     \
    template Tensor4<T> conv2d_grad_weight<T>(const Tensor4<T>&, const Tensor4<T>&,               \
                                              const ConvSpec&);                                    \
    template Tensor4<T> conv2d_grad_bias<T>(const Tensor4<T>&);                                   \
    template Tensor4<T> gelu<T>(const Tensor4<T>&);                                               \
    template Tensor4<T> gelu_grad<T>(const Tensor4<T>&, const Tensor4<T>&);                       \
    template Tensor4<T> sigmoid<T>(const Tensor4<T>&);                                            \
    template Tensor4<T> sigmoid_grad<T>(const Tensor4<T>&, const Tensor4<T>&);                    \
    template Tensor4<T> add<T>(const Tensor4<T>&, const Tensor4<T>&);                             \
    template Tensor4<T> mul<T>(const Tensor4<T>&, const Tensor4<T>&);                             \
    template Tensor4<T> axpy<T>(T, const Tensor4<T>&, const Tensor4<T>&);                         \
    template Tensor4<T> scale<T>(T, const Tensor4<T>&);                                           \
    template Tensor4<T> concat_channels<T>(const std::vector<const Tensor4<T>*>&);                \
    template Tensor4<T> slice_channels<T>(const Tensor4<T>&, std::int64_t, std::int64_t);         \
    template Tensor4<T> pad_channels<T>(const Tensor4<T>&, std::int64_t, std::int64_t);           \
    template Tensor4<T> resize_up<T>(ResizeKind, const Tensor4<T>&, int);                         \
    template Tensor4<T> resize_up_grad<T>(ResizeKind, const Tensor4<T>&, const Dims4&, int);      \
    template Tensor4<T> downscale_bicubic<T>(const Tensor4<T>&, int);                             \
    template T l1_loss<T>(const Tensor4<T>&, const Tensor4<T>&);                                  \
    template Tensor4<T> l1_loss_grad<T>(const Tensor4<T>&, const Tensor4<T>&, T);                 \
    template Tensor4<T> global_avg_pool<T>(const Tensor4<T>&);                                    \
    template Tensor4<T> global_avg_pool_grad<T>(const Tensor4<T>&, const Dims4&);                 \
    template Tensor4<T> scale_channels<T>(const Tensor4<T>&, const Tensor4<T>&);                  \
    template Tensor4<T> scale_channels_grad_scale<T>(const Tensor4<T>&, const Tensor4<T>&);       \
    template T sum<T>(const Tensor4<T>&);

MREN_INSTANTIATE_OPS(float)
MREN_INSTANTIATE_OPS(double)

#undef MREN_INSTANTIATE_OPS

} // namespace mren::ops
