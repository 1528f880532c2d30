#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "tsda/common.hpp"

namespace tsda {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor. Rank is dynamic; indexing helpers cover the ranks
// the library actually uses (1..3).
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(static_cast<long>(data_.size()) == shape_numel(shape_),
                "tensor data size does not match shape " + shape_str(shape_));
    }
    Tensor(std::initializer_list<long> shape, std::initializer_list<T> data)
        : Tensor(Shape(shape), std::vector<T>(data)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    long dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    long numel() const { return static_cast<long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> flat() { return {data_.data(), data_.size()}; }
    std::span<const T> flat() const { return {data_.data(), data_.size()}; }

    T& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at(long i, long j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    const T& at(long i, long j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }

    T& at(long i, long j, long k) {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    const T& at(long i, long j, long k) const {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    Tensor reshaped(Shape s) const {
        require(shape_numel(s) == numel(), "reshape changes element count");
        Tensor out = *this;
        out.shape_ = std::move(s);
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape_ = shape_;
        out.data_.resize(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    friend class Tensor;

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() &&
           std::equal(a.flat().begin(), a.flat().end(), b.flat().begin());
}

}  // namespace tsda
