#pragma once

#include <cstddef>
#include <string>

#include "lsk/tensor.hpp"

namespace lsk {

enum class PoolKind { avg, max };

inline const char* to_string(PoolKind k) { return k == PoolKind::avg ? "avg" : "max"; }

/// Reduces across channels: (n,c,h,w) -> (n,1,h,w).
template <typename T>
Tensor4<T> channel_pool(const Tensor4<T>& x, PoolKind mode) {
    Tensor4<T> out(x.n(), 1, x.h(), x.w());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        T* dst = out.plane(n, 0);
        const T* first = x.plane(n, 0);
        for (std::size_t p = 0; p < hw; ++p) dst[p] = first[p];
        for (std::size_t c = 1; c < x.c(); ++c) {
            const T* src = x.plane(n, c);
            if (mode == PoolKind::avg) {
                for (std::size_t p = 0; p < hw; ++p) dst[p] += src[p];
            } else {
                for (std::size_t p = 0; p < hw; ++p) {
                    if (src[p] > dst[p]) dst[p] = src[p];
                }
            }
        }
        if (mode == PoolKind::avg) {
            const T count = static_cast<T>(x.c());
            for (std::size_t p = 0; p < hw; ++p) dst[p] /= count;
        }
    }
    return out;
}

/// Max routes the whole gradient to the lowest channel index attaining the maximum.
template <typename T>
Tensor4<T> channel_pool_backward(const Tensor4<T>& grad, const Tensor4<T>& x, PoolKind mode) {
    require_same_shape(grad.shape(), Shape4{x.n(), 1, x.h(), x.w()}, "channel_pool_backward");
    Tensor4<T> gx(x.shape());
    const std::size_t hw = x.plane_size();
    for (std::size_t n = 0; n < x.n(); ++n) {
        const T* g = grad.plane(n, 0);
        if (mode == PoolKind::avg) {
            const T inv = T(1) / static_cast<T>(x.c());
            for (std::size_t c = 0; c < x.c(); ++c) {
                T* dst = gx.plane(n, c);
                for (std::size_t p = 0; p < hw; ++p) dst[p] = g[p] * inv;
            }
        } else {
            for (std::size_t p = 0; p < hw; ++p) {
                std::size_t best = 0;
                T best_v = x.plane(n, 0)[p];
                for (std::size_t c = 1; c < x.c(); ++c) {
                    const T v = x.plane(n, c)[p];
                    if (v > best_v) {
                        best_v = v;
                        best = c;
                    }
                }
                gx.plane(n, best)[p] = g[p];
            }
        }
    }
    return gx;
}

/// Spatial mean per channel: (n,c,h,w) -> (n,c,1,1).
template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
    Tensor4<T> out(x.n(), x.c(), 1, 1);
    const std::size_t hw = x.plane_size();
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t n = 0; n < x.n(); ++n) {
        for (std::size_t c = 0; c < x.c(); ++c) {
            const T* src = x.plane(n, c);
            T acc = T(0);
            for (std::size_t p = 0; p < hw; ++p) acc += src[p];
            out(n, c, 0, 0) = acc * inv;
        }
    }
    return out;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& grad, const Shape4& input_shape) {
    require_same_shape(grad.shape(), Shape4{input_shape.n, input_shape.c, 1, 1}, "global_avg_pool_backward");
    Tensor4<T> gx(input_shape);
    const std::size_t hw = input_shape.plane_size();
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t n = 0; n < input_shape.n; ++n) {
        for (std::size_t c = 0; c < input_shape.c; ++c) {
            const T g = grad(n, c, 0, 0) * inv;
            T* dst = gx.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) dst[p] = g;
        }
    }
    return gx;
}

}  // namespace lsk
