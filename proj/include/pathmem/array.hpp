#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pathmem/errors.hpp"

namespace pathmem {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

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

// Row-major dense array of 64-bit reals. Rank 0 is a scalar (size 1).
class DenseArray {
public:
    DenseArray() = default;

    explicit DenseArray(Shape shape)
        : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

    DenseArray(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (shape_size(shape_) != values_.size()) {
            throw DimensionError("DenseArray: shape " + shape_str(shape_) + " does not match " +
                                 std::to_string(values_.size()) + " values");
        }
    }

    static DenseArray scalar(double v) { return DenseArray(Shape{}, {v}); }

    static DenseArray full(Shape shape, double v) {
        DenseArray a(std::move(shape));
        for (double& x : a.values_) x = v;
        return a;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }

    std::size_t rows() const {
        if (rank() != 2) throw DimensionError("rows(): array " + shape_str(shape_) + " is not rank-2");
        return shape_[0];
    }
    std::size_t cols() const {
        if (rank() != 2) throw DimensionError("cols(): array " + shape_str(shape_) + " is not rank-2");
        return shape_[1];
    }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at2(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    double at2(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    bool same_shape(const DenseArray& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (double& x : values_) x = v;
    }

private:
    Shape shape_;
    std::vector<double> values_;
};

}  // namespace pathmem
