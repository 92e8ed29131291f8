#pragma once

#include <cstddef>
#include <string>

#include "lsk/parallel.hpp"
#include "lsk/tensor.hpp"

namespace lsk {

/// Single-layer convolution geometry. Depth-wise layers always use the
/// "same" rule padding = dilation * (kernel - 1) / 2.
struct ConvSpec {
    std::size_t kernel = 1;
    std::size_t dilation = 1;
    std::size_t padding = 0;
    std::size_t stride = 1;

    static ConvSpec same(std::size_t kernel, std::size_t dilation = 1) {
        return ConvSpec{kernel, dilation, dilation * (kernel - 1) / 2, 1};
    }

    /// Span of the dilated kernel in input pixels.
    std::size_t extent() const { return dilation * (kernel - 1) + 1; }

    std::size_t out_size(std::size_t in) const {
        const std::size_t padded = in + 2 * padding;
        require(padded >= extent(), "conv: input " + std::to_string(in) + " smaller than kernel extent " +
                                        std::to_string(extent()));
        return (padded - extent()) / stride + 1;
    }

    bool is_same() const { return stride == 1 && kernel % 2 == 1 && padding == dilation * (kernel - 1) / 2; }
};

template <typename T>
struct ConvGrads {
    Tensor4<T> grad_x;
    Tensor4<T> grad_weight;
    Vec<T> grad_bias;
};

namespace detail {

inline void check_conv_spec(const ConvSpec& spec, const char* op) {
    require(spec.kernel >= 1 && spec.kernel % 2 == 1,
            std::string(op) + ": kernel must be odd and positive, got " + std::to_string(spec.kernel));
    require(spec.dilation >= 1, std::string(op) + ": dilation must be >= 1");
    require(spec.stride >= 1, std::string(op) + ": stride must be >= 1");
}

template <typename T>
void check_depthwise(const Tensor4<T>& x, const Tensor4<T>& weights, const Vec<T>& bias, const ConvSpec& spec) {
    check_conv_spec(spec, "depthwise_conv");
    require(spec.is_same(), "depthwise_conv: padding " + std::to_string(spec.padding) +
                                " violates the same rule for kernel " + std::to_string(spec.kernel) +
                                ", dilation " + std::to_string(spec.dilation));
    const Shape4 expect{x.c(), 1, spec.kernel, spec.kernel};
    require(weights.shape() == expect,
            "depthwise_conv: weights " + weights.shape().str() + " expected " + expect.str());
    require(bias.size() == x.c(), "depthwise_conv: bias length " + std::to_string(bias.size()) +
                                      " does not match channels " + std::to_string(x.c()));
}

}  // namespace detail

/// Per-channel convolution with zero padding; output shape equals input shape.
template <typename T>
Tensor4<T> depthwise_conv(const Tensor4<T>& x, const Tensor4<T>& weights, const Vec<T>& bias, const ConvSpec& spec) {
    detail::check_depthwise(x, weights, bias, spec);
    Tensor4<T> out(x.shape());
    const auto H = static_cast<std::ptrdiff_t>(x.h());
    const auto W = static_cast<std::ptrdiff_t>(x.w());
    const auto K = static_cast<std::ptrdiff_t>(spec.kernel);
    const auto D = static_cast<std::ptrdiff_t>(spec.dilation);
    const auto P = static_cast<std::ptrdiff_t>(spec.padding);
    const std::size_t C = x.c();

    parallel_for(x.n() * C, [&](std::size_t nc) {
        const std::size_t n = nc / C, c = nc % C;
        const T* in = x.plane(n, c);
        const T* k = weights.plane(c, 0);
        T* o = out.plane(n, c);
        for (std::ptrdiff_t y = 0; y < H; ++y) {
            for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
                T acc = T(0);
                for (std::ptrdiff_t i = 0; i < K; ++i) {
                    const std::ptrdiff_t iy = y - P + i * D;
                    if (iy < 0 || iy >= H) continue;
                    for (std::ptrdiff_t j = 0; j < K; ++j) {
                        const std::ptrdiff_t ix = xx - P + j * D;
                        if (ix < 0 || ix >= W) continue;
                        acc += k[i * K + j] * in[iy * W + ix];
                    }
                }
                o[y * W + xx] = acc + bias[c];
            }
        }
    }, x.plane_size() * spec.kernel * spec.kernel);
    return out;
}

template <typename T>
ConvGrads<T> depthwise_conv_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x, const Tensor4<T>& weights,
                                     const ConvSpec& spec) {
    detail::check_depthwise(x, weights, Vec<T>(x.c()), spec);
    require_same_shape(grad_out.shape(), x.shape(), "depthwise_conv_backward");
    ConvGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(weights.shape()), Vec<T>(x.c(), T(0))};
    const auto H = static_cast<std::ptrdiff_t>(x.h());
    const auto W = static_cast<std::ptrdiff_t>(x.w());
    const auto K = static_cast<std::ptrdiff_t>(spec.kernel);
    const auto D = static_cast<std::ptrdiff_t>(spec.dilation);
    const auto P = static_cast<std::ptrdiff_t>(spec.padding);

    parallel_for(x.c(), [&](std::size_t c) {
        T* gw = g.grad_weight.plane(c, 0);
        const T* k = weights.plane(c, 0);
        T gb = T(0);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* in = x.plane(n, c);
            const T* go = grad_out.plane(n, c);
            T* gx = g.grad_x.plane(n, c);
            for (std::ptrdiff_t y = 0; y < H; ++y) {
                for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
                    const T gv = go[y * W + xx];
                    gb += gv;
                    for (std::ptrdiff_t i = 0; i < K; ++i) {
                        const std::ptrdiff_t iy = y - P + i * D;
                        if (iy < 0 || iy >= H) continue;
                        for (std::ptrdiff_t j = 0; j < K; ++j) {
                            const std::ptrdiff_t ix = xx - P + j * D;
                            if (ix < 0 || ix >= W) continue;
                            gw[i * K + j] += gv * in[iy * W + ix];
                            gx[iy * W + ix] += gv * k[i * K + j];
                        }
                    }
                }
            }
        }
        g.grad_bias[c] = gb;
    }, x.n() * x.plane_size() * spec.kernel * spec.kernel);
    return g;
}

namespace detail {
template <typename T>
void check_pointwise(const Tensor4<T>& x, const Tensor4<T>& weights, const Vec<T>& bias) {
    require(weights.h() == 1 && weights.w() == 1,
            "pointwise_conv: weights must be (c_out, c_in, 1, 1), got " + weights.shape().str());
    require(weights.c() == x.c(), "pointwise_conv: weights expect " + std::to_string(weights.c()) +
                                      " input channels, tensor has " + std::to_string(x.c()));
    require(bias.size() == weights.n(), "pointwise_conv: bias length " + std::to_string(bias.size()) +
                                            " does not match c_out " + std::to_string(weights.n()));
}
}  // namespace detail

/// 1x1 convolution: per-pixel channel mixing. Weights are (c_out, c_in, 1, 1).
template <typename T>
Tensor4<T> pointwise_conv(const Tensor4<T>& x, const Tensor4<T>& weights, const Vec<T>& bias) {
    detail::check_pointwise(x, weights, bias);
    const std::size_t cout = weights.n(), cin = x.c(), hw = x.plane_size();
    Tensor4<T> out(x.n(), cout, x.h(), x.w());
    parallel_for(x.n() * cout, [&](std::size_t no) {
        const std::size_t n = no / cout, o = no % cout;
        T* dst = out.plane(n, o);
        for (std::size_t p = 0; p < hw; ++p) dst[p] = T(0);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T wv = weights[o * cin + ci];
            const T* src = x.plane(n, ci);
            for (std::size_t p = 0; p < hw; ++p) dst[p] += wv * src[p];
        }
        for (std::size_t p = 0; p < hw; ++p) dst[p] += bias[o];
    }, cin * hw);
    return out;
}

template <typename T>
ConvGrads<T> pointwise_conv_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x, const Tensor4<T>& weights) {
    detail::check_pointwise(x, weights, Vec<T>(weights.n()));
    const std::size_t cout = weights.n(), cin = x.c(), hw = x.plane_size();
    require_same_shape(grad_out.shape(), Shape4{x.n(), cout, x.h(), x.w()}, "pointwise_conv_backward");
    ConvGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(weights.shape()), Vec<T>(cout, T(0))};

    parallel_for(x.n() * cin, [&](std::size_t nc) {
        const std::size_t n = nc / cin, ci = nc % cin;
        T* gx = g.grad_x.plane(n, ci);
        for (std::size_t o = 0; o < cout; ++o) {
            const T wv = weights[o * cin + ci];
            const T* go = grad_out.plane(n, o);
            for (std::size_t p = 0; p < hw; ++p) gx[p] += wv * go[p];
        }
    }, cout * hw);

    parallel_for(cout, [&](std::size_t o) {
        T gb = T(0);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* go = grad_out.plane(n, o);
            for (std::size_t p = 0; p < hw; ++p) gb += go[p];
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* src = x.plane(n, ci);
                T acc = T(0);
                for (std::size_t p = 0; p < hw; ++p) acc += go[p] * src[p];
                g.grad_weight[o * cin + ci] += acc;
            }
        }
        g.grad_bias[o] = gb;
    }, x.n() * cin * hw);
    return g;
}

namespace detail {
template <typename T>
void check_conv2d(const Tensor4<T>& x, const Tensor4<T>& weights, const Vec<T>& bias, const ConvSpec& spec) {
    check_conv_spec(spec, "conv2d");
    require(weights.h() == spec.kernel && weights.w() == spec.kernel,
            "conv2d: weights " + weights.shape().str() + " do not match kernel " + std::to_string(spec.kernel));
    require(weights.c() == x.c(), "conv2d: weights expect " + std::to_string(weights.c()) +
                                      " input channels, tensor has " + std::to_string(x.c()));
    require(bias.size() == weights.n(), "conv2d: bias length " + std::to_string(bias.size()) +
                                            " does not match c_out " + std::to_string(weights.n()));
}
}  // namespace detail

/// Dense (all-to-all channel) convolution with stride, zero padding and
/// dilation. Weights are (c_out, c_in, k, k). Used for the stem, the
/// downsamplers and the 2->N selection convolution.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weights, const Vec<T>& bias, const ConvSpec& spec) {
    detail::check_conv2d(x, weights, bias, spec);
    const std::size_t oh = spec.out_size(x.h()), ow = spec.out_size(x.w());
    const std::size_t cout = weights.n(), cin = x.c();
    Tensor4<T> out(x.n(), cout, oh, ow);
    const auto H = static_cast<std::ptrdiff_t>(x.h());
    const auto W = static_cast<std::ptrdiff_t>(x.w());
    const auto K = static_cast<std::ptrdiff_t>(spec.kernel);
    const auto D = static_cast<std::ptrdiff_t>(spec.dilation);
    const auto P = static_cast<std::ptrdiff_t>(spec.padding);
    const auto S = static_cast<std::ptrdiff_t>(spec.stride);

    parallel_for(x.n() * cout, [&](std::size_t no) {
        const std::size_t n = no / cout, o = no % cout;
        T* dst = out.plane(n, o);
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                T acc = T(0);
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const T* in = x.plane(n, ci);
                    const T* k = weights.plane(o, ci);
                    for (std::ptrdiff_t i = 0; i < K; ++i) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * S - P + i * D;
                        if (iy < 0 || iy >= H) continue;
                        for (std::ptrdiff_t j = 0; j < K; ++j) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx) * S - P + j * D;
                            if (ix < 0 || ix >= W) continue;
                            acc += k[i * K + j] * in[iy * W + ix];
                        }
                    }
                }
                dst[y * ow + xx] = acc + bias[o];
            }
        }
    }, oh * ow * cin * spec.kernel * spec.kernel);
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x, const Tensor4<T>& weights,
                             const ConvSpec& spec) {
    detail::check_conv2d(x, weights, Vec<T>(weights.n()), spec);
    const std::size_t oh = spec.out_size(x.h()), ow = spec.out_size(x.w());
    const std::size_t cout = weights.n(), cin = x.c();
    require_same_shape(grad_out.shape(), Shape4{x.n(), cout, oh, ow}, "conv2d_backward");
    ConvGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(weights.shape()), Vec<T>(cout, T(0))};
    const auto H = static_cast<std::ptrdiff_t>(x.h());
    const auto W = static_cast<std::ptrdiff_t>(x.w());
    const auto K = static_cast<std::ptrdiff_t>(spec.kernel);
    const auto D = static_cast<std::ptrdiff_t>(spec.dilation);
    const auto P = static_cast<std::ptrdiff_t>(spec.padding);
    const auto S = static_cast<std::ptrdiff_t>(spec.stride);

    parallel_for(x.n() * cin, [&](std::size_t nc) {
        const std::size_t n = nc / cin, ci = nc % cin;
        T* gx = g.grad_x.plane(n, ci);
        for (std::size_t o = 0; o < cout; ++o) {
            const T* go = grad_out.plane(n, o);
            const T* k = weights.plane(o, ci);
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    const T gv = go[y * ow + xx];
                    for (std::ptrdiff_t i = 0; i < K; ++i) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * S - P + i * D;
                        if (iy < 0 || iy >= H) continue;
                        for (std::ptrdiff_t j = 0; j < K; ++j) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx) * S - P + j * D;
                            if (ix < 0 || ix >= W) continue;
                            gx[iy * W + ix] += gv * k[i * K + j];
                        }
                    }
                }
            }
        }
    }, cout * oh * ow * spec.kernel * spec.kernel);

    parallel_for(cout, [&](std::size_t o) {
        T gb = T(0);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* go = grad_out.plane(n, o);
            for (std::size_t p = 0; p < oh * ow; ++p) gb += go[p];
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* in = x.plane(n, ci);
                T* gw = g.grad_weight.plane(o, ci);
                for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                        const T gv = go[y * ow + xx];
                        for (std::ptrdiff_t i = 0; i < K; ++i) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * S - P + i * D;
                            if (iy < 0 || iy >= H) continue;
                            for (std::ptrdiff_t j = 0; j < K; ++j) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx) * S - P + j * D;
                                if (ix < 0 || ix >= W) continue;
                                gw[i * K + j] += gv * in[iy * W + ix];
                            }
                        }
                    }
                }
            }
        }
        g.grad_bias[o] = gb;
    }, x.n() * cin * oh * ow * spec.kernel * spec.kernel);
    return g;
}

}  // namespace lsk
