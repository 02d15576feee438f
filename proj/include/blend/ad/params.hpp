#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "blend/ad/tensor.hpp"

namespace blend::ad {

/// A named trainable tensor together with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter(std::string n, Shape shape)
        : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

/// Ordered collection of parameters. Addresses are stable for the lifetime of
/// the set, so graphs may hold raw pointers into it.
template <typename T>
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet& other);
    ParamSet& operator=(const ParamSet& other);
    ParamSet(ParamSet&&) noexcept = default;
    ParamSet& operator=(ParamSet&&) noexcept = default;

    Parameter<T>& add(std::string name, Shape shape);

    Parameter<T>& get(const std::string& name);
    const Parameter<T>& get(const std::string& name) const;
    Parameter<T>* find(const std::string& name);
    const Parameter<T>* find(const std::string& name) const;

    std::size_t size() const noexcept { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    /// Total number of scalar weights.
    std::size_t count() const;

    void zero_grad();
    /// Copies values from a set with identical names and shapes.
    void assign_values(const ParamSet& other);
    bool same_layout(const ParamSet& other) const;

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& p : params_) {
            auto& q = out.add(p->name, p->value.shape());
            q.value = p->value.template cast<U>();
        }
        return out;
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].name != b[i].name || !(a[i].value == b[i].value)) return false;
        }
        return true;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace blend::ad
