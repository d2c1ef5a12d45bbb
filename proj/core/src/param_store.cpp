#include "mren/param_store.hpp"

#include "mren/error.hpp"

namespace mren {

template <class T>
ParamEntry<T>& ParamStore<T>::add(const std::string& name, Tensor4<T> value) {
    if (index_.count(name) > 0) throw UsageError("duplicate parameter name '" + name + "'");
    entries_.emplace_back(name, std::move(value));
    index_[name] = entries_.size() - 1;
    return entries_.back();
}

template <class T>
ParamEntry<T>* ParamStore<T>::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

template <class T>
const ParamEntry<T>* ParamStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

template <class T>
ParamEntry<T>& ParamStore<T>::at(const std::string& name) {
    ParamEntry<T>* e = find(name);
    if (e == nullptr) throw UsageError("unknown parameter '" + name + "'");
    return *e;
}

template <class T>
const ParamEntry<T>& ParamStore<T>::at(const std::string& name) const {
    const ParamEntry<T>* e = find(name);
    if (e == nullptr) throw UsageError("unknown parameter '" + name + "'");
    return *e;
}

template <class T>
void ParamStore<T>::zero_grads() {
    for (auto& e : entries_) {
        e.grad.fill(T(0));
        e.grad_valid = false;
    }
}

template <class T>
std::int64_t ParamStore<T>::total_count() const {
    std::int64_t total = 0;
    for (const auto& e : entries_) total += e.value.count();
    return total;
}

template class ParamStore<float>;
template class ParamStore<double>;

} // namespace mren
