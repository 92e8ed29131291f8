#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lsk/tensor.hpp"

namespace lsk {

enum class BinaryOp { add, mul };

template <typename T>
Tensor4<T> elementwise(const Tensor4<T>& a, const Tensor4<T>& b, BinaryOp op) {
    require_same_shape(a.shape(), b.shape(), op == BinaryOp::add ? "add" : "mul");
    Tensor4<T> out(a.shape());
    if (op == BinaryOp::add) {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    }
    return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    return elementwise(a, b, BinaryOp::add);
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
    return elementwise(a, b, BinaryOp::mul);
}

/// In-place a += b.
template <typename T>
void accumulate(Tensor4<T>& a, const Tensor4<T>& b) {
    require_same_shape(a.shape(), b.shape(), "accumulate");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

/// Gradients of a*b: (g*b, g*a). Addition needs no helper (both are g).
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> mul_backward(const Tensor4<T>& grad, const Tensor4<T>& a, const Tensor4<T>& b) {
    require_same_shape(grad.shape(), a.shape(), "mul_backward");
    require_same_shape(a.shape(), b.shape(), "mul_backward");
    return {mul(grad, b), mul(grad, a)};
}

template <typename T>
T sigmoid_scalar(T v) {
    // branch keeps exp() from overflowing for large |v|
    if (v >= T(0)) {
        const T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
    Tensor4<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
    return out;
}

/// Takes the forward output y = sigmoid(x).
template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& grad, const Tensor4<T>& y) {
    require_same_shape(grad.shape(), y.shape(), "sigmoid_backward");
    Tensor4<T> out(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad[i] * y[i] * (T(1) - y[i]);
    return out;
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <typename T>
T gelu_scalar(T v) {
    const T u = T(kGeluSqrt2OverPi) * (v + T(kGeluCubic) * v * v * v);
    return T(0.5) * v * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad_scalar(T v) {
    const T u = T(kGeluSqrt2OverPi) * (v + T(kGeluCubic) * v * v * v);
    const T t = std::tanh(u);
    const T du = T(kGeluSqrt2OverPi) * (T(1) + T(3 * kGeluCubic) * v * v);
    return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
}

template <typename T>
Tensor4<T> gelu(const Tensor4<T>& x) {
    Tensor4<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_scalar(x[i]);
    return out;
}

/// Takes the forward input x.
template <typename T>
Tensor4<T> gelu_backward(const Tensor4<T>& grad, const Tensor4<T>& x) {
    require_same_shape(grad.shape(), x.shape(), "gelu_backward");
    Tensor4<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = grad[i] * gelu_grad_scalar(x[i]);
    return out;
}

template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts) {
    require(!parts.empty(), "concat_channels: empty input list");
    const Shape4 first = parts.front().shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p.n() == first.n && p.h() == first.h && p.w() == first.w,
                "concat_channels: " + p.shape().str() + " incompatible with " + first.str());
        total += p.c();
    }
    Tensor4<T> out(first.n, total, first.h, first.w);
    const std::size_t hw = first.plane_size();
    for (std::size_t n = 0; n < first.n; ++n) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const T* src = p.plane(n, 0);
            std::copy(src, src + p.c() * hw, out.plane(n, offset));
            offset += p.c();
        }
    }
    return out;
}

template <typename T>
Tensor4<T> concat_channels(const std::vector<Tensor4<T>>& parts) {
    return concat_channels(std::span<const Tensor4<T>>(parts));
}

/// Channels [begin, begin + count) of x.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::size_t begin, std::size_t count) {
    require(count >= 1 && begin + count <= x.c(),
            "slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                ") outside " + std::to_string(x.c()) + " channels");
    Tensor4<T> out(x.n(), count, x.h(), x.w());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        const T* src = x.plane(n, begin);
        std::copy(src, src + count * hw, out.plane(n, 0));
    }
    return out;
}

/// Inverse of concat_channels; also its backward.
template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& x, std::span<const std::size_t> sizes) {
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    require(total == x.c(), "split_channels: sizes sum to " + std::to_string(total) + ", tensor has " +
                                std::to_string(x.c()) + " channels");
    std::vector<Tensor4<T>> out;
    out.reserve(sizes.size());
    std::size_t offset = 0;
    for (auto s : sizes) {
        out.push_back(slice_channels(x, offset, s));
        offset += s;
    }
    return out;
}

/// x (n,c,h,w) weighted by a single-channel map m (n,1,h,w).
template <typename T>
Tensor4<T> scale_spatial(const Tensor4<T>& x, const Tensor4<T>& m) {
    require(m.c() == 1 && m.n() == x.n() && m.h() == x.h() && m.w() == x.w(),
            "scale_spatial: map " + m.shape().str() + " incompatible with " + x.shape().str());
    Tensor4<T> out(x.shape());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        const T* mp = m.plane(n, 0);
        for (std::size_t c = 0; c < x.c(); ++c) {
            const T* src = x.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] * mp[p];
        }
    }
    return out;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> scale_spatial_backward(const Tensor4<T>& grad, const Tensor4<T>& x,
                                                         const Tensor4<T>& m) {
    require_same_shape(grad.shape(), x.shape(), "scale_spatial_backward");
    Tensor4<T> gx = scale_spatial(grad, m);
    Tensor4<T> gm(m.shape());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        T* gmp = gm.plane(n, 0);
        for (std::size_t c = 0; c < x.c(); ++c) {
            const T* src = x.plane(n, c);
            const T* gp = grad.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) gmp[p] += gp[p] * src[p];
        }
    }
    return {std::move(gx), std::move(gm)};
}

/// x (n,c,h,w) weighted by per-(sample, channel) factors s (n,c,1,1).
template <typename T>
Tensor4<T> scale_channels(const Tensor4<T>& x, const Tensor4<T>& s) {
    require(s.n() == x.n() && s.c() == x.c() && s.h() == 1 && s.w() == 1,
            "scale_channels: factors " + s.shape().str() + " incompatible with " + x.shape().str());
    Tensor4<T> out(x.shape());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        for (std::size_t c = 0; c < x.c(); ++c) {
            const T f = s(n, c, 0, 0);
            const T* src = x.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] * f;
        }
    }
    return out;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> scale_channels_backward(const Tensor4<T>& grad, const Tensor4<T>& x,
                                                          const Tensor4<T>& s) {
    require_same_shape(grad.shape(), x.shape(), "scale_channels_backward");
    Tensor4<T> gx = scale_channels(grad, s);
    Tensor4<T> gs(s.shape());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        for (std::size_t c = 0; c < x.c(); ++c) {
            const T* src = x.plane(n, c);
            const T* gp = grad.plane(n, c);
            T acc = T(0);
            for (std::size_t p = 0; p < hw; ++p) acc += gp[p] * src[p];
            gs(n, c, 0, 0) = acc;
        }
    }
    return {std::move(gx), std::move(gs)};
}

/// Per-channel scale vector (layer scale): y[n,c,...] = x[n,c,...] * gamma[c].
template <typename T>
Tensor4<T> scale_by_channel_vector(const Tensor4<T>& x, const Vec<T>& gamma) {
    require(gamma.size() == x.c(), "scale_by_channel_vector: length " + std::to_string(gamma.size()) +
                                       " does not match channels " + std::to_string(x.c()));
    Tensor4<T> out(x.shape());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        for (std::size_t c = 0; c < x.c(); ++c) {
            const T* src = x.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] * gamma[c];
        }
    }
    return out;
}

template <typename T>
std::pair<Tensor4<T>, Vec<T>> scale_by_channel_vector_backward(const Tensor4<T>& grad, const Tensor4<T>& x,
                                                               const Vec<T>& gamma) {
    require_same_shape(grad.shape(), x.shape(), "scale_by_channel_vector_backward");
    Tensor4<T> gx = scale_by_channel_vector(grad, gamma);
    Vec<T> gg(gamma.size(), T(0));
    const std::size_t hw = x.plane_size();
    for (std::size_t c = 0; c < x.c(); ++c) {
        T acc = T(0);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c);
            const T* gp = grad.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) acc += gp[p] * src[p];
        }
        gg[c] = acc;
    }
    return {std::move(gx), std::move(gg)};
}

}  // namespace lsk
