#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "octforge/common.hpp"

namespace octforge {

// Dense row-major n-d array, rank 1..4. The scalar type is a template
// parameter: float is the training mode, double the gradient-check mode.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
        validate_dims();
        data_.assign(numel_, T(0));
    }

    Tensor(std::vector<int> dims, std::vector<T> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        validate_dims();
        check_shape(size_t(numel_) == data_.size(),
                    "tensor data length " + std::to_string(data_.size()) +
                        " does not match dims product " + std::to_string(numel_));
    }

    static Tensor full(std::vector<int> dims, T value) {
        Tensor t(std::move(dims));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const std::vector<int>& dims() const { return dims_; }
    int rank() const { return int(dims_.size()); }
    int dim(int i) const { return dims_[size_t(i)]; }
    int64_t numel() const { return numel_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[size_t(i)]; }
    const T& operator[](int64_t i) const { return data_[size_t(i)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
        os << "]";
        return os.str();
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    T max_abs() const {
        T m = T(0);
        for (const T& v : data_) m = std::max(m, T(std::abs(double(v))));
        return m;
    }

    // Casts between the 32-bit and 64-bit modes.
    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = U(data_[i]);
        return Tensor<U>(dims_, std::move(out));
    }

private:
    void validate_dims() {
        check_shape(!dims_.empty() && dims_.size() <= 4,
                    "tensor rank must be 1..4, got " + std::to_string(dims_.size()));
        numel_ = 1;
        for (int d : dims_) {
            check_shape(d >= 1, "tensor extents must be positive");
            numel_ *= d;
        }
    }

    std::vector<int> dims_;
    std::vector<T> data_;
    int64_t numel_ = 0;
};

template <typename T>
inline void require_finite(const Tensor<T>& t, const std::string& where) {
    if (!t.all_finite())
        throw NumericError("non-finite values detected in " + where);
}

// Seeded uniform(-1,1) fill that rejects |x| < margin (keeps gradient-check
// inputs away from relu kinks).
template <typename T>
inline void fill_uniform_away_from_zero(Tensor<T>& t, Rng& rng, double margin = 1e-3) {
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = 0.0;
        do {
            v = rng.uniform(-1.0, 1.0);
        } while (std::abs(v) < margin);
        t[i] = T(v);
    }
}

} // namespace octforge
