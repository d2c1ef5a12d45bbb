#pragma once

#include <vector>

#include "mren/tensor.hpp"

// Pure tensor kernels. Every function is a deterministic function of its
// inputs: reductions run in a fixed order (channel-major, kernel-row-major for
// convolutions) and any internal parallelism assigns each output element to
// exactly one thread.
namespace mren::ops {

template <class T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* bias,
                  const ConvSpec& spec);

template <class T>
Tensor4<T> conv2d_grad_input(const Tensor4<T>& dy, const Tensor4<T>& w, const Dims4& x_dims,
                             const ConvSpec& spec);

template <class T>
Tensor4<T> conv2d_grad_weight(const Tensor4<T>& dy, const Tensor4<T>& x, const ConvSpec& spec);

template <class T>
Tensor4<T> conv2d_grad_bias(const Tensor4<T>& dy);

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
template <class T>
Tensor4<T> gelu(const Tensor4<T>& x);

template <class T>
Tensor4<T> gelu_grad(const Tensor4<T>& x, const Tensor4<T>& dy);

template <class T>
Tensor4<T> sigmoid(const Tensor4<T>& x);

// Derivative expressed through the forward output y: dy * y * (1 - y).
template <class T>
Tensor4<T> sigmoid_grad(const Tensor4<T>& y, const Tensor4<T>& dy);

template <class T>
Tensor4<T> add(const Tensor4<T>& x, const Tensor4<T>& y);

template <class T>
Tensor4<T> mul(const Tensor4<T>& x, const Tensor4<T>& y);

// alpha*x + y
template <class T>
Tensor4<T> axpy(T alpha, const Tensor4<T>& x, const Tensor4<T>& y);

template <class T>
Tensor4<T> scale(T alpha, const Tensor4<T>& x);

template <class T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& parts);

// Channels [c0, c1) of x.
template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::int64_t c0, std::int64_t c1);

// Zero tensor of total_c channels with dy placed at channel offset c0.
template <class T>
Tensor4<T> pad_channels(const Tensor4<T>& dy, std::int64_t c0, std::int64_t total_c);

enum class ResizeKind { bilinear, bicubic };

// Integer upscale, half-pixel centers, edges clamped. Bicubic uses the Keys
// kernel with a = -0.5. scale == 1 returns a copy.
template <class T>
Tensor4<T> resize_up(ResizeKind kind, const Tensor4<T>& x, int scale);

// Transpose of the fixed linear map realized by resize_up.
template <class T>
Tensor4<T> resize_up_grad(ResizeKind kind, const Tensor4<T>& dy, const Dims4& x_dims, int scale);

// Antialiased integer downscale with the same Keys kernel, support widened by
// the scale factor, per-axis weights normalized. Spatial dims must divide.
template <class T>
Tensor4<T> downscale_bicubic(const Tensor4<T>& x, int scale);

// Mean absolute difference over all elements.
template <class T>
T l1_loss(const Tensor4<T>& pred, const Tensor4<T>& target);

// upstream * sign(pred - target) / count, with sign(0) = 0.
template <class T>
Tensor4<T> l1_loss_grad(const Tensor4<T>& pred, const Tensor4<T>& target, T upstream);

// (n,c,h,w) -> (n,c,1,1) spatial mean.
template <class T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x);

template <class T>
Tensor4<T> global_avg_pool_grad(const Tensor4<T>& dy, const Dims4& x_dims);

// x * s broadcast over the spatial axes; s has dims (n,c,1,1).
template <class T>
Tensor4<T> scale_channels(const Tensor4<T>& x, const Tensor4<T>& s);

// d(scale_channels)/ds: per-channel spatial sum of x*dy, dims (n,c,1,1).
template <class T>
Tensor4<T> scale_channels_grad_scale(const Tensor4<T>& dy, const Tensor4<T>& x);

template <class T>
T sum(const Tensor4<T>& x);

} // namespace mren::ops
