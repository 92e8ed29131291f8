#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lsk/config.hpp"
#include "lsk/ops.hpp"
#include "lsk/params.hpp"
#include "lsk/plan.hpp"

namespace lsk {

/// All learnable tensors of one module. Selection parameters exist only for
/// the mode the module was built for: `select` in spatial mode, `squeeze`
/// and `excite` in channel mode.
template <typename T>
struct LskModuleParams {
    LskModuleConfig config;
    std::vector<ConvParams<T>> dw;      // (c, 1, k_i, k_i)
    std::vector<ConvParams<T>> mixers;  // (c_mid, c, 1, 1)
    ConvParams<T> select;               // (N, |pooling|, q, q)
    ConvParams<T> squeeze;              // (hidden, c_mid, 1, 1)
    ConvParams<T> excite;               // (N * c_mid, hidden, 1, 1)
    ConvParams<T> fusion;               // (c, c_mid, 1, 1)

    LskModuleParams() = default;

    explicit LskModuleParams(LskModuleConfig cfg) : config(std::move(cfg)) {
        config.validate();
        const std::size_t c = config.channels, m = config.branch_channels, N = config.branches();
        for (const auto& st : config.plan.stages) {
            dw.emplace_back(Shape4{c, 1, st.k, st.k});
            mixers.emplace_back(Shape4{m, c, 1, 1});
        }
        if (config.mode == SelectionMode::spatial) {
            const std::size_t q = config.selection_kernel;
            select = ConvParams<T>(Shape4{N, config.pooling.size(), q, q});
        } else if (config.mode == SelectionMode::channel) {
            squeeze = ConvParams<T>(Shape4{config.hidden(), m, 1, 1});
            excite = ConvParams<T>(Shape4{N * m, config.hidden(), 1, 1});
        }
        fusion = ConvParams<T>(Shape4{c, m, 1, 1});
    }
};

namespace detail {
template <typename P, typename Fn>
void visit_lsk(P& p, Fn& fn, const std::string& prefix) {
    for (std::size_t i = 0; i < p.dw.size(); ++i) visit_conv(p.dw[i], prefix + "dw" + std::to_string(i), fn);
    for (std::size_t i = 0; i < p.mixers.size(); ++i) visit_conv(p.mixers[i], prefix + "mix" + std::to_string(i), fn);
    if (p.config.mode == SelectionMode::spatial) visit_conv(p.select, prefix + "select", fn);
    if (p.config.mode == SelectionMode::channel) {
        visit_conv(p.squeeze, prefix + "squeeze", fn);
        visit_conv(p.excite, prefix + "excite", fn);
    }
    visit_conv(p.fusion, prefix + "fusion", fn);
}
}  // namespace detail

template <typename T, typename Fn>
void visit(LskModuleParams<T>& p, Fn& fn, const std::string& prefix = "") {
    detail::visit_lsk(p, fn, prefix);
}

template <typename T, typename Fn>
void visit(const LskModuleParams<T>& p, Fn& fn, const std::string& prefix = "") {
    detail::visit_lsk(p, fn, prefix);
}

template <typename T>
LskModuleParams<T> init_lsk_module(const LskModuleConfig& cfg, std::mt19937_64& rng) {
    LskModuleParams<T> p(cfg);
    for (auto& c : p.dw) init_conv(c, rng);
    for (auto& c : p.mixers) init_conv(c, rng);
    if (cfg.mode == SelectionMode::spatial) init_conv(p.select, rng);
    if (cfg.mode == SelectionMode::channel) {
        init_conv(p.squeeze, rng);
        init_conv(p.excite, rng);
    }
    init_conv(p.fusion, rng);
    return p;
}

/// Same layout as `p`, every value zero. Used as a gradient accumulator.
template <typename T>
LskModuleParams<T> zeros_like(const LskModuleParams<T>& p) {
    return LskModuleParams<T>(p.config);
}

/// Intermediate values kept for the backward pass.
template <typename T>
struct LskTape {
    SelectionMode mode = SelectionMode::spatial;
    PoolingSet pooling;
    Tensor4<T> x;
    std::vector<Tensor4<T>> u;      // outputs of the depth-wise stages
    std::vector<Tensor4<T>> mixed;  // per-branch 1x1 outputs
    Tensor4<T> concat;              // channel concat of mixed
    Tensor4<T> descriptors;         // pooled maps, one channel per pooling kind
    Tensor4<T> masks;               // (n, N, h, w) sigmoid masks
    Tensor4<T> pooled;              // channel mode: sum of branch GAPs (n, c_mid, 1, 1)
    Tensor4<T> hidden_pre;          // channel mode: bottleneck pre-activation
    Tensor4<T> hidden;
    Tensor4<T> branch_weights;      // channel mode: (n, N*c_mid, 1, 1) softmax across branches
    Tensor4<T> fused_in;            // weighted branch sum fed to the fusion conv
    Tensor4<T> attention;           // S
};

template <typename T>
struct LskOutput {
    Tensor4<T> y;
    std::optional<Tensor4<T>> masks;  // (n, N, h, w), spatial mode only
};

namespace detail {

template <typename T>
void check_lsk_inputs(const Tensor4<T>& x, const LskModuleParams<T>& p, SelectionMode mode,
                      const PoolingSet& pooling) {
    require(x.c() == p.config.channels, "lsk_forward: input has " + std::to_string(x.c()) +
                                            " channels, module expects " + std::to_string(p.config.channels));
    require(!p.dw.empty() && p.dw.size() == p.mixers.size(), "lsk_forward: inconsistent branch parameters");
    if (mode == SelectionMode::spatial) {
        validate_pooling(pooling);
        require(!p.select.weight.empty(), "lsk_forward: module has no spatial selection parameters");
        require(p.select.weight.c() == pooling.size(),
                "lsk_forward: selection conv expects " + std::to_string(p.select.weight.c()) +
                    " descriptors, pooling set provides " + std::to_string(pooling.size()));
    } else if (mode == SelectionMode::channel) {
        require(!p.squeeze.weight.empty() && !p.excite.weight.empty(),
                "lsk_forward: module has no channel selection parameters");
    }
}

// Softmax across branches for each (sample, channel): logits laid out as
// branch-major blocks of c_mid channels.
template <typename T>
Tensor4<T> branch_softmax(const Tensor4<T>& logits, std::size_t branches) {
    Tensor4<T> out(logits.shape());
    const std::size_t m = logits.c() / branches;
    for (std::size_t n = 0; n < logits.n(); ++n) {
        for (std::size_t j = 0; j < m; ++j) {
            T mx = logits(n, j, 0, 0);
            for (std::size_t i = 1; i < branches; ++i) mx = std::max(mx, logits(n, i * m + j, 0, 0));
            T sum = T(0);
            for (std::size_t i = 0; i < branches; ++i) {
                const T e = std::exp(logits(n, i * m + j, 0, 0) - mx);
                out(n, i * m + j, 0, 0) = e;
                sum += e;
            }
            for (std::size_t i = 0; i < branches; ++i) out(n, i * m + j, 0, 0) /= sum;
        }
    }
    return out;
}

template <typename T>
Tensor4<T> branch_softmax_backward(const Tensor4<T>& grad, const Tensor4<T>& probs, std::size_t branches) {
    Tensor4<T> out(probs.shape());
    const std::size_t m = probs.c() / branches;
    for (std::size_t n = 0; n < probs.n(); ++n) {
        for (std::size_t j = 0; j < m; ++j) {
            T dot = T(0);
            for (std::size_t i = 0; i < branches; ++i) dot += grad(n, i * m + j, 0, 0) * probs(n, i * m + j, 0, 0);
            for (std::size_t i = 0; i < branches; ++i) {
                const std::size_t c = i * m + j;
                out(n, c, 0, 0) = probs(n, c, 0, 0) * (grad(n, c, 0, 0) - dot);
            }
        }
    }
    return out;
}

}  // namespace detail

/// Decompose -> mix -> select -> fuse -> gate. When `tape` is given it is
/// filled with everything lsk_backward needs.
template <typename T>
LskOutput<T> lsk_forward(const Tensor4<T>& x, const LskModuleParams<T>& p, SelectionMode mode,
                         const PoolingSet& pooling, LskTape<T>* tape = nullptr) {
    detail::check_lsk_inputs(x, p, mode, pooling);
    const auto& plan = p.config.plan;
    const std::size_t N = plan.size();

    std::vector<Tensor4<T>> u;
    std::vector<Tensor4<T>> mixed;
    u.reserve(N);
    mixed.reserve(N);
    for (std::size_t i = 0; i < N; ++i) {
        const Tensor4<T>& prev = i == 0 ? x : u.back();
        u.push_back(depthwise_conv(prev, p.dw[i].weight, p.dw[i].bias, ConvSpec::same(plan.stages[i].k,
                                                                                      plan.stages[i].d)));
        mixed.push_back(pointwise_conv(u.back(), p.mixers[i].weight, p.mixers[i].bias));
    }

    LskOutput<T> out;
    Tensor4<T> fused_in;
    if (mode == SelectionMode::spatial) {
        Tensor4<T> concat = concat_channels(mixed);
        std::vector<Tensor4<T>> desc;
        for (auto kind : pooling) desc.push_back(channel_pool(concat, kind));
        Tensor4<T> descriptors = concat_channels(desc);
        const std::size_t q = p.select.weight.h();
        Tensor4<T> masks = sigmoid(conv2d(descriptors, p.select.weight, p.select.bias, ConvSpec::same(q)));
        fused_in = scale_spatial(mixed[0], slice_channels(masks, 0, 1));
        for (std::size_t i = 1; i < N; ++i) accumulate(fused_in, scale_spatial(mixed[i], slice_channels(masks, i, 1)));
        if (tape) {
            tape->concat = std::move(concat);
            tape->descriptors = std::move(descriptors);
            tape->masks = masks;
        }
        out.masks = std::move(masks);
    } else if (mode == SelectionMode::channel) {
        Tensor4<T> pooled = global_avg_pool(mixed[0]);
        for (std::size_t i = 1; i < N; ++i) accumulate(pooled, global_avg_pool(mixed[i]));
        Tensor4<T> hidden_pre = pointwise_conv(pooled, p.squeeze.weight, p.squeeze.bias);
        Tensor4<T> hidden = gelu(hidden_pre);
        Tensor4<T> weights = detail::branch_softmax(pointwise_conv(hidden, p.excite.weight, p.excite.bias), N);
        const std::size_t m = p.config.branch_channels;
        fused_in = scale_channels(mixed[0], slice_channels(weights, 0, m));
        for (std::size_t i = 1; i < N; ++i) {
            accumulate(fused_in, scale_channels(mixed[i], slice_channels(weights, i * m, m)));
        }
        if (tape) {
            tape->pooled = std::move(pooled);
            tape->hidden_pre = std::move(hidden_pre);
            tape->hidden = std::move(hidden);
            tape->branch_weights = std::move(weights);
        }
    } else {
        fused_in = mixed[0];
        for (std::size_t i = 1; i < N; ++i) accumulate(fused_in, mixed[i]);
    }

    Tensor4<T> attention = pointwise_conv(fused_in, p.fusion.weight, p.fusion.bias);
    out.y = mul(x, attention);

    if (tape) {
        tape->mode = mode;
        tape->pooling = pooling;
        tape->x = x;
        tape->u = std::move(u);
        tape->mixed = std::move(mixed);
        tape->fused_in = std::move(fused_in);
        tape->attention = std::move(attention);
    }
    return out;
}

template <typename T>
LskOutput<T> lsk_forward(const Tensor4<T>& x, const LskModuleParams<T>& p, LskTape<T>* tape = nullptr) {
    return lsk_forward(x, p, p.config.mode, p.config.pooling, tape);
}

template <typename T>
struct LskGrads {
    Tensor4<T> grad_x;
    LskModuleParams<T> params;
};

template <typename T>
LskGrads<T> lsk_backward(const Tensor4<T>& grad_y, const LskTape<T>& tape, const LskModuleParams<T>& p) {
    require(!tape.x.empty(), "lsk_backward: empty tape");
    require_same_shape(grad_y.shape(), tape.x.shape(), "lsk_backward");
    require(tape.u.size() == p.dw.size(), "lsk_backward: tape does not match module parameters");
    const auto& plan = p.config.plan;
    const std::size_t N = plan.size();
    LskGrads<T> g{Tensor4<T>(tape.x.shape()), zeros_like(p)};

    // Y = X * S
    auto [gx_gate, g_attention] = mul_backward(grad_y, tape.x, tape.attention);
    g.grad_x = std::move(gx_gate);

    auto gf = pointwise_conv_backward(g_attention, tape.fused_in, p.fusion.weight);
    g.params.fusion.weight = std::move(gf.grad_weight);
    g.params.fusion.bias = std::move(gf.grad_bias);
    const Tensor4<T>& g_fused = gf.grad_x;

    std::vector<Tensor4<T>> g_mixed;
    g_mixed.reserve(N);
    if (tape.mode == SelectionMode::spatial) {
        Tensor4<T> g_masks(tape.masks.shape());
        for (std::size_t i = 0; i < N; ++i) {
            auto [gm_branch, gmask] = scale_spatial_backward(g_fused, tape.mixed[i], slice_channels(tape.masks, i, 1));
            g_mixed.push_back(std::move(gm_branch));
            for (std::size_t n = 0; n < gmask.n(); ++n) {
                std::copy(gmask.plane(n, 0), gmask.plane(n, 0) + gmask.plane_size(), g_masks.plane(n, i));
            }
        }
        const Tensor4<T> g_logits = sigmoid_backward(g_masks, tape.masks);
        const std::size_t q = p.select.weight.h();
        auto gs = conv2d_backward(g_logits, tape.descriptors, p.select.weight, ConvSpec::same(q));
        g.params.select.weight = std::move(gs.grad_weight);
        g.params.select.bias = std::move(gs.grad_bias);
        Tensor4<T> g_concat(tape.concat.shape());
        for (std::size_t k = 0; k < tape.pooling.size(); ++k) {
            accumulate(g_concat, channel_pool_backward(slice_channels(gs.grad_x, k, 1), tape.concat, tape.pooling[k]));
        }
        std::vector<std::size_t> sizes(N, p.config.branch_channels);
        auto parts = split_channels(g_concat, std::span<const std::size_t>(sizes));
        for (std::size_t i = 0; i < N; ++i) accumulate(g_mixed[i], parts[i]);
    } else if (tape.mode == SelectionMode::channel) {
        const std::size_t m = p.config.branch_channels;
        Tensor4<T> g_weights(tape.branch_weights.shape());
        for (std::size_t i = 0; i < N; ++i) {
            auto [gm_branch, gw] = scale_channels_backward(g_fused, tape.mixed[i],
                                                           slice_channels(tape.branch_weights, i * m, m));
            g_mixed.push_back(std::move(gm_branch));
            for (std::size_t n = 0; n < gw.n(); ++n) {
                for (std::size_t j = 0; j < m; ++j) g_weights(n, i * m + j, 0, 0) = gw(n, j, 0, 0);
            }
        }
        const Tensor4<T> g_logits = detail::branch_softmax_backward(g_weights, tape.branch_weights, N);
        auto ge = pointwise_conv_backward(g_logits, tape.hidden, p.excite.weight);
        g.params.excite.weight = std::move(ge.grad_weight);
        g.params.excite.bias = std::move(ge.grad_bias);
        const Tensor4<T> g_hidden_pre = gelu_backward(ge.grad_x, tape.hidden_pre);
        auto gq = pointwise_conv_backward(g_hidden_pre, tape.pooled, p.squeeze.weight);
        g.params.squeeze.weight = std::move(gq.grad_weight);
        g.params.squeeze.bias = std::move(gq.grad_bias);
        for (std::size_t i = 0; i < N; ++i) {
            accumulate(g_mixed[i], global_avg_pool_backward(gq.grad_x, tape.mixed[i].shape()));
        }
    } else {
        for (std::size_t i = 0; i < N; ++i) g_mixed.push_back(g_fused);
    }

    // Branch mixers and the depth-wise chain, last stage first.
    Tensor4<T> g_u(tape.u.back().shape());
    for (std::size_t r = 0; r < N; ++r) {
        const std::size_t i = N - 1 - r;
        auto gm = pointwise_conv_backward(g_mixed[i], tape.u[i], p.mixers[i].weight);
        g.params.mixers[i].weight = std::move(gm.grad_weight);
        g.params.mixers[i].bias = std::move(gm.grad_bias);
        accumulate(g_u, gm.grad_x);
        const Tensor4<T>& input = i == 0 ? tape.x : tape.u[i - 1];
        auto gd = depthwise_conv_backward(g_u, input, p.dw[i].weight, ConvSpec::same(plan.stages[i].k, plan.stages[i].d));
        g.params.dw[i].weight = std::move(gd.grad_weight);
        g.params.dw[i].bias = std::move(gd.grad_bias);
        g_u = std::move(gd.grad_x);
    }
    accumulate(g.grad_x, g_u);
    return g;
}

}  // namespace lsk
