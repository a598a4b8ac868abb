#pragma once

#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ammu {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

inline Shape row_major_strides(const Shape& shape) {
    Shape strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

/// Dense row-major tensor over float or double. Treated as immutable once
/// filled: kernels take const refs and return fresh tensors.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        for (T& x : t.data_) x = value;
        return t;
    }

    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    const Shape& shape() const { return shape_; }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
        if (static_cast<int>(idx.size()) != rank()) {
            throw std::invalid_argument("index rank " + std::to_string(idx.size()) +
                                        " does not match tensor rank " + std::to_string(rank()));
        }
        Shape strides = row_major_strides(shape_);
        std::int64_t flat = 0;
        int axis = 0;
        for (std::int64_t i : idx) {
            if (i < 0 || i >= shape_[axis]) {
                throw std::out_of_range("index " + std::to_string(i) + " out of range for axis " +
                                        std::to_string(axis) + " of shape " + shape_str(shape_));
            }
            flat += i * strides[axis];
            ++axis;
        }
        return flat;
    }

    T at(std::initializer_list<std::int64_t> idx) const { return data_[flat_index(idx)]; }
    T& at(std::initializer_list<std::int64_t> idx) { return data_[flat_index(idx)]; }

  private:
    void validate_shape() const {
        for (std::int64_t d : shape_) {
            if (d <= 0) {
                throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor64 = Tensor<double>;
using Tensor32 = Tensor<float>;

}  // namespace ammu
