#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "fiberseg/errors.hpp"

namespace fiberseg {

// Row-major n-dimensional array. Used for image fields (2D), volumes (3D)
// and NN tensors (4D/5D, NCHW / NCDHW).
template <typename T>
class NdArray {
public:
    NdArray() = default;

    explicit NdArray(std::vector<int64_t> shape, T fill = T{})
        : shape_(std::move(shape)) {
        int64_t n = 1;
        for (int64_t e : shape_) {
            if (e < 1) throw ShapeMismatch("NdArray: extent must be >= 1");
            n *= e;
        }
        data_.assign(static_cast<size_t>(n), fill);
    }

    NdArray(std::vector<int64_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != size())
            throw ShapeMismatch("NdArray: data size does not match shape");
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }

    int64_t size() const {
        return std::accumulate(shape_.begin(), shape_.end(), int64_t{1},
                               std::multiplies<int64_t>());
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2D access (row, col)
    T& operator()(int64_t r, int64_t c) {
        return data_[static_cast<size_t>(r * shape_[1] + c)];
    }
    const T& operator()(int64_t r, int64_t c) const {
        return data_[static_cast<size_t>(r * shape_[1] + c)];
    }

    // 3D access (z, y, x)
    T& operator()(int64_t z, int64_t y, int64_t x) {
        return data_[static_cast<size_t>((z * shape_[1] + y) * shape_[2] + x)];
    }
    const T& operator()(int64_t z, int64_t y, int64_t x) const {
        return data_[static_cast<size_t>((z * shape_[1] + y) * shape_[2] + x)];
    }

    bool same_shape(const NdArray& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i)
            os << shape_[i] << (i + 1 < shape_.size() ? ", " : "");
        os << ")";
        return os.str();
    }

private:
    std::vector<int64_t> shape_;
    std::vector<T> data_;
};

using FloatArray = NdArray<float>;
using MaskArray = NdArray<uint8_t>;
using LabelArray = NdArray<int32_t>;

inline void require_same_shape(const std::vector<int64_t>& a,
                               const std::vector<int64_t>& b,
                               const char* what) {
    if (a != b) throw ShapeMismatch(std::string(what) + ": shapes differ");
}

}  // namespace fiberseg
