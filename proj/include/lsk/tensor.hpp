#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lsk {

/// Raised whenever operand shapes do not line up. No op broadcasts implicitly.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Shape4 {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    constexpr std::size_t numel() const { return n * c * h * w; }
    constexpr std::size_t plane_size() const { return h * w; }

    friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

    std::string str() const {
        std::ostringstream os;
        os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
        return os.str();
    }
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw DimensionError(what);
}

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* op) {
    if (!(a == b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

/// Dense rank-4 array in n -> c -> h -> w row-major order.
template <typename T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;

    explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
        check_shape(shape_);
        data_.assign(shape_.numel(), fill);
    }

    Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
        : Tensor4(Shape4{n, c, h, w}, fill) {}

    Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        check_shape(shape_);
        if (data_.size() != shape_.numel()) {
            throw DimensionError("Tensor4: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_.str());
        }
    }

    const Shape4& shape() const { return shape_; }
    std::size_t n() const { return shape_.n; }
    std::size_t c() const { return shape_.c; }
    std::size_t h() const { return shape_.h; }
    std::size_t w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane_size() const { return shape_.plane_size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[index(n, c, h, w)];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[index(n, c, h, w)];
    }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    const std::vector<T>& values() const { return data_; }

    /// Contiguous h*w plane for (n, c).
    T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane_size(); }
    const T* plane(std::size_t n, std::size_t c) const {
        return data_.data() + (n * shape_.c + c) * shape_.plane_size();
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor4<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor4<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor4& a, const Tensor4& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static void check_shape(const Shape4& s) {
        if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
            throw DimensionError("Tensor4: every dimension must be >= 1, got " + s.str());
        }
    }

    Shape4 shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

/// Per-channel vector (biases, norm statistics).
template <typename T>
using Vec = std::vector<T>;

}  // namespace lsk
