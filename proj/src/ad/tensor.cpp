#include "blend/ad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace blend::ad {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

DimensionError::DimensionError(const std::string& op, int axis, const std::string& detail)
    : std::invalid_argument(op + ": dimension mismatch on axis " + std::to_string(axis) + ": " +
                            detail),
      axis_(axis) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    values_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_numel(shape_) != values_.size()) {
        throw DimensionError("Tensor", -1,
                             "shape " + shape_str(shape_) + " holds " +
                                 std::to_string(shape_numel(shape_)) + " values, got " +
                                 std::to_string(values_.size()));
    }
}

template <typename T>
T Tensor<T>::item() const {
    if (values_.size() != 1) {
        throw DimensionError("item", -1, "tensor " + shape_str(shape_) + " is not a scalar");
    }
    return values_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
    std::fill(values_.begin(), values_.end(), v);
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
    if (shape_numel(shape) != values_.size()) {
        throw DimensionError("reshape", -1, shape_str(shape_) + " -> " + shape_str(shape));
    }
    shape_ = std::move(shape);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace blend::ad
