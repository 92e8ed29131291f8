#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "lsk/tensor.hpp"

namespace lsk {

template <typename T>
struct NormGrads {
    Tensor4<T> grad_x;
    Vec<T> grad_scale;
    Vec<T> grad_shift;
};

namespace detail {
template <typename T>
void check_norm_vectors(std::size_t c, const Vec<T>& scale, const Vec<T>& shift, const char* op) {
    require(scale.size() == c && shift.size() == c,
            std::string(op) + ": per-channel parameters must have length " + std::to_string(c));
}
}  // namespace detail

/// Inference-style normalization with stored statistics:
/// y = scale * (x - mean) / sqrt(var + eps) + shift.
template <typename T>
Tensor4<T> affine_channel_norm(const Tensor4<T>& x, const Vec<T>& scale, const Vec<T>& shift, const Vec<T>& mean,
                               const Vec<T>& var, T eps) {
    detail::check_norm_vectors(x.c(), scale, shift, "affine_channel_norm");
    detail::check_norm_vectors(x.c(), mean, var, "affine_channel_norm");
    Tensor4<T> out(x.shape());
    const std::size_t hw = x.plane_size();
    for (std::size_t c = 0; c < x.c(); ++c) {
        const T inv_std = T(1) / std::sqrt(var[c] + eps);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) dst[p] = scale[c] * ((src[p] - mean[c]) * inv_std) + shift[c];
        }
    }
    return out;
}

template <typename T>
NormGrads<T> affine_channel_norm_backward(const Tensor4<T>& grad, const Tensor4<T>& x, const Vec<T>& scale,
                                          const Vec<T>& mean, const Vec<T>& var, T eps) {
    require_same_shape(grad.shape(), x.shape(), "affine_channel_norm_backward");
    detail::check_norm_vectors(x.c(), scale, mean, "affine_channel_norm_backward");
    NormGrads<T> g{Tensor4<T>(x.shape()), Vec<T>(x.c(), T(0)), Vec<T>(x.c(), T(0))};
    const std::size_t hw = x.plane_size();
    for (std::size_t c = 0; c < x.c(); ++c) {
        const T inv_std = T(1) / std::sqrt(var[c] + eps);
        T gs = T(0), gb = T(0);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c);
            const T* gp = grad.plane(n, c);
            T* gx = g.grad_x.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) {
                gx[p] = gp[p] * scale[c] * inv_std;
                gs += gp[p] * (src[p] - mean[c]) * inv_std;
                gb += gp[p];
            }
        }
        g.grad_scale[c] = gs;
        g.grad_shift[c] = gb;
    }
    return g;
}

/// Saved state of a batch-statistics normalization (training mode).
template <typename T>
struct BatchNormState {
    Tensor4<T> x_hat;
    Vec<T> mean;
    Vec<T> var;  // biased
    Vec<T> inv_std;
};

template <typename T>
std::pair<Tensor4<T>, BatchNormState<T>> batch_norm_train(const Tensor4<T>& x, const Vec<T>& scale,
                                                          const Vec<T>& shift, T eps) {
    detail::check_norm_vectors(x.c(), scale, shift, "batch_norm_train");
    const std::size_t hw = x.plane_size();
    const T count = static_cast<T>(x.n() * hw);
    BatchNormState<T> st{Tensor4<T>(x.shape()), Vec<T>(x.c()), Vec<T>(x.c()), Vec<T>(x.c())};
    Tensor4<T> out(x.shape());
    for (std::size_t c = 0; c < x.c(); ++c) {
        T sum = T(0);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) sum += src[p];
        }
        const T mean = sum / count;
        T sq = T(0);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) sq += (src[p] - mean) * (src[p] - mean);
        }
        const T var = sq / count;
        const T inv_std = T(1) / std::sqrt(var + eps);
        st.mean[c] = mean;
        st.var[c] = var;
        st.inv_std[c] = inv_std;
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c);
            T* xh = st.x_hat.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) {
                xh[p] = (src[p] - mean) * inv_std;
                dst[p] = scale[c] * xh[p] + shift[c];
            }
        }
    }
    return {std::move(out), std::move(st)};
}

template <typename T>
NormGrads<T> batch_norm_train_backward(const Tensor4<T>& grad, const BatchNormState<T>& st, const Vec<T>& scale) {
    const Tensor4<T>& xh = st.x_hat;
    require_same_shape(grad.shape(), xh.shape(), "batch_norm_train_backward");
    require(scale.size() == xh.c(), "batch_norm_train_backward: scale length mismatch");
    NormGrads<T> g{Tensor4<T>(xh.shape()), Vec<T>(xh.c(), T(0)), Vec<T>(xh.c(), T(0))};
    const std::size_t hw = xh.plane_size();
    const T count = static_cast<T>(xh.n() * hw);
    for (std::size_t c = 0; c < xh.c(); ++c) {
        T sum_g = T(0), sum_gx = T(0);
        for (std::size_t n = 0; n < xh.n(); ++n) {
            const T* gp = grad.plane(n, c);
            const T* xp = xh.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) {
                sum_g += gp[p];
                sum_gx += gp[p] * xp[p];
            }
        }
        g.grad_shift[c] = sum_g;
        g.grad_scale[c] = sum_gx;
        const T k = scale[c] * st.inv_std[c] / count;
        for (std::size_t n = 0; n < xh.n(); ++n) {
            const T* gp = grad.plane(n, c);
            const T* xp = xh.plane(n, c);
            T* gx = g.grad_x.plane(n, c);
            for (std::size_t p = 0; p < hw; ++p) gx[p] = k * (count * gp[p] - sum_g - xp[p] * sum_gx);
        }
    }
    return g;
}

}  // namespace lsk
