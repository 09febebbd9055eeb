#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "fcbswin/common.hpp"

namespace fcbswin {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major n-d array. The single value carrier for images,
/// features, weights and gradients.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check(static_cast<int64_t>(data.size()) == shape_numel(shape),
              "tensor data size does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    bool empty() const { return data.empty(); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    T& at(std::initializer_list<int64_t> idx) { return data[flat(idx)]; }
    const T& at(std::initializer_list<int64_t> idx) const { return data[flat(idx)]; }

    size_t flat(std::initializer_list<int64_t> idx) const {
        int64_t off = 0;
        size_t k = 0;
        for (int64_t i : idx) {
            off = off * shape[k] + i;
            ++k;
        }
        return static_cast<size_t>(off);
    }

    Tensor reshaped(Shape s) const {
        check(shape_numel(s) == numel(), "reshape numel mismatch");
        return Tensor(std::move(s), data);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    T max_abs() const {
        T m = 0;
        for (T v : data) m = std::max(m, std::abs(v));
        return m;
    }
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

}  // namespace fcbswin
