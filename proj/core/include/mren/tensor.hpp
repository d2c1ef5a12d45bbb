#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mren/error.hpp"

namespace mren {

// Shape of a dense NCHW tensor: (batch, channel, height, width).
struct Dims4 {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t count() const { return n * c * h * w; }
    bool operator==(const Dims4&) const = default;
    std::string str() const;
};

// Dense rank-4 tensor, flat row-major storage. T is float or double; the
// scalar type is the precision tag.
template <class T>
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Dims4 dims, T fill = T(0));
    Tensor4(Dims4 dims, std::vector<T> data);

    const Dims4& dims() const { return dims_; }
    std::int64_t count() const { return dims_.count(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
        return data_[((n * dims_.c + c) * dims_.h + y) * dims_.w + x];
    }
    T at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data_[((n * dims_.c + c) * dims_.h + y) * dims_.w + x];
    }

    void fill(T v);
    bool all_finite() const;

    template <class U>
    Tensor4<U> cast() const {
        Tensor4<U> out(dims_);
        for (std::int64_t i = 0; i < count(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    Dims4 dims_{};
    std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

// Stride-1, zero-padded ("same") convolution. groups is 1 for an ordinary
// convolution or in_channels for a depthwise one.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 3;
    int kw = 3;
    int groups = 1;
    bool bias = true;

    Dims4 weight_dims() const {
        return Dims4{out_channels, in_channels / groups, kh, kw};
    }
    Dims4 bias_dims() const { return Dims4{1, out_channels, 1, 1}; }
    void validate() const;
};

void check_same_dims(const Dims4& a, const Dims4& b, const char* op);

} // namespace mren
