#include "blend/ad/params.hpp"

#include <stdexcept>

namespace blend::ad {

template <typename T>
ParamSet<T>::ParamSet(const ParamSet& other) {
    *this = other;
}

template <typename T>
ParamSet<T>& ParamSet<T>::operator=(const ParamSet& other) {
    if (this == &other) return *this;
    params_.clear();
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
    return *this;
}

template <typename T>
Parameter<T>& ParamSet<T>::add(std::string name, Shape shape) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(shape)));
    return *params_.back();
}

template <typename T>
Parameter<T>* ParamSet<T>::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

template <typename T>
const Parameter<T>* ParamSet<T>::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

template <typename T>
Parameter<T>& ParamSet<T>::get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter named " + name);
}

template <typename T>
const Parameter<T>& ParamSet<T>::get(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter named " + name);
}

template <typename T>
std::size_t ParamSet<T>::count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
    for (auto& p : params_) p->grad.fill(T{0});
}

template <typename T>
bool ParamSet<T>::same_layout(const ParamSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
        if (params_[i]->name != other[i].name) return false;
        if (params_[i]->value.shape() != other[i].value.shape()) return false;
    }
    return true;
}

template <typename T>
void ParamSet<T>::assign_values(const ParamSet& other) {
    if (!same_layout(other)) throw std::invalid_argument("assign_values: parameter layout differs");
    for (std::size_t i = 0; i < size(); ++i) params_[i]->value = other[i].value;
}

template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace blend::ad
