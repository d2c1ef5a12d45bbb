#include "mren/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mren {

std::string Dims4::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

template <class T>
Tensor4<T>::Tensor4(Dims4 dims, T fill) : dims_(dims) {
    if (dims.n < 0 || dims.c < 0 || dims.h < 0 || dims.w < 0) {
        throw ShapeError("Tensor4: negative dimension " + dims.str());
    }
    data_.assign(static_cast<std::size_t>(dims.count()), fill);
}

template <class T>
Tensor4<T>::Tensor4(Dims4 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != dims.count()) {
        throw ShapeError("Tensor4: data length " + std::to_string(data_.size()) +
                         " does not match dims " + dims.str());
    }
}

template <class T>
void Tensor4<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <class T>
bool Tensor4<T>::all_finite() const {
    for (const T& v : data_) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

void ConvSpec::validate() const {
    auto ok_kernel = [](int k) { return k == 1 || k == 3 || k == 5; };
    if (in_channels <= 0 || out_channels <= 0) {
        throw ConfigError("ConvSpec: channel counts must be positive, got in=" +
                          std::to_string(in_channels) + " out=" + std::to_string(out_channels));
    }
    if (!ok_kernel(kh) || !ok_kernel(kw)) {
        throw ConfigError("ConvSpec: kernel must be 1, 3 or 5 per axis, got " +
                          std::to_string(kh) + "x" + std::to_string(kw));
    }
    if (groups != 1 && groups != in_channels) {
        throw ConfigError("ConvSpec: groups must be 1 or in_channels, got " + std::to_string(groups));
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
        throw ConfigError("ConvSpec: groups=" + std::to_string(groups) +
                          " must divide in_channels=" + std::to_string(in_channels) +
                          " and out_channels=" + std::to_string(out_channels));
    }
}

void check_same_dims(const Dims4& a, const Dims4& b, const char* op) {
    if (a.n != b.n) throw ShapeError(std::string(op) + ": batch axis mismatch " + a.str() + " vs " + b.str());
    if (a.c != b.c) throw ShapeError(std::string(op) + ": channel axis mismatch " + a.str() + " vs " + b.str());
    if (a.h != b.h) throw ShapeError(std::string(op) + ": height axis mismatch " + a.str() + " vs " + b.str());
    if (a.w != b.w) throw ShapeError(std::string(op) + ": width axis mismatch " + a.str() + " vs " + b.str());
}

template class Tensor4<float>;
template class Tensor4<double>;

} // namespace mren
