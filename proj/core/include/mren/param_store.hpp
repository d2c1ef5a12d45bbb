#pragma once

#include <deque>
#include <string>
#include <unordered_map>

#include "mren/tensor.hpp"

namespace mren {

// Named parameter with its gradient slot. grad_valid is set when the
// parameter is bound to a tape during a forward pass and cleared by
// zero_grads(); the optimizer refuses to step a parameter whose gradient
// was never produced.
template <class T>
struct ParamEntry {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> grad;
    bool grad_valid = false;

    ParamEntry(std::string n, Tensor4<T> v)
        : name(std::move(n)), value(std::move(v)), grad(value.dims(), T(0)) {}
};

// Ordered map of parameters; iteration follows insertion order so counts,
// serialization, and optimizer traversal are deterministic.
template <class T>
class ParamStore {
public:
    ParamEntry<T>& add(const std::string& name, Tensor4<T> value);
    ParamEntry<T>* find(const std::string& name);
    const ParamEntry<T>* find(const std::string& name) const;
    ParamEntry<T>& at(const std::string& name);
    const ParamEntry<T>& at(const std::string& name) const;

    void zero_grads();
    std::int64_t total_count() const;
    std::size_t size() const { return entries_.size(); }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::deque<ParamEntry<T>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamStoref = ParamStore<float>;
using ParamStored = ParamStore<double>;

} // namespace mren
