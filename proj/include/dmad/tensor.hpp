#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dmad/error.hpp"

namespace dmad {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return n;
}

/// Dense row-major N-d array. Float for training, double for gradient checks.
template <class S>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_numel(shape_), S(0));
    }

    TensorT(Shape shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_numel(shape_))
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static TensorT full(Shape shape, S v) {
        TensorT t(std::move(shape));
        for (S& x : t.data_) x = v;
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const Shape& shape() const { return shape_; }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](std::size_t i) { return data_[i]; }
    S operator[](std::size_t i) const { return data_[i]; }

    S& at(int i) { return data_[static_cast<std::size_t>(i)]; }
    S& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    S at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    S& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    S at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    /// Rows/cols view for operations over the last axis.
    int last_extent() const { return shape_.empty() ? 1 : shape_.back(); }
    int leading_rows() const {
        if (shape_.empty()) return 1;
        return static_cast<int>(size() / static_cast<std::size_t>(last_extent()));
    }

    template <class T>
    TensorT<T> cast() const {
        std::vector<T> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
        return TensorT<T>(shape_, std::move(out));
    }

    void fill(S v) {
        for (S& x : data_) x = v;
    }

private:
    void check_shape() const {
        for (int e : shape_)
            if (e < 1)
                throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

} // namespace dmad
