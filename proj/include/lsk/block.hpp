#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>

#include "lsk/lsk_module.hpp"
#include "lsk/norm_layer.hpp"

namespace lsk {

/// One LSK block:
///   y1 = x  + ls1 * proj_out(lsk(gelu(proj_in(norm1(x)))))
///   y  = y1 + ls2 * fc2(gelu(dw3(fc1(norm2(y1)))))
template <typename T>
struct LskBlockParams {
    NormParams<T> norm1;
    ConvParams<T> proj_in;   // (c, c, 1, 1)
    LskModuleParams<T> lsk;
    ConvParams<T> proj_out;  // (c, c, 1, 1)
    Vec<T> layer_scale1;
    NormParams<T> norm2;
    ConvParams<T> fc1;       // (hidden, c, 1, 1)
    ConvParams<T> ffn_dw;    // (hidden, 1, 3, 3)
    ConvParams<T> fc2;       // (c, hidden, 1, 1)
    Vec<T> layer_scale2;

    LskBlockParams() = default;

    /// Zero weights, unit norms, zero layer scales.
    LskBlockParams(const LskModuleConfig& cfg, std::size_t hidden)
        : norm1(cfg.channels),
          proj_in(Shape4{cfg.channels, cfg.channels, 1, 1}),
          lsk(cfg),
          proj_out(Shape4{cfg.channels, cfg.channels, 1, 1}),
          layer_scale1(cfg.channels, T(0)),
          norm2(cfg.channels),
          fc1(Shape4{hidden, cfg.channels, 1, 1}),
          ffn_dw(Shape4{hidden, 1, 3, 3}),
          fc2(Shape4{cfg.channels, hidden, 1, 1}),
          layer_scale2(cfg.channels, T(0)) {
        require(hidden >= 1, "LskBlockParams: FFN hidden width must be >= 1");
    }

    std::size_t channels() const { return lsk.config.channels; }
    std::size_t hidden() const { return fc1.weight.n(); }
};

namespace detail {
template <typename P, typename Fn>
void visit_block(P& p, Fn& fn, const std::string& prefix) {
    visit_norm(p.norm1, prefix + "norm1", fn);
    visit_conv(p.proj_in, prefix + "proj_in", fn);
    visit(p.lsk, fn, prefix + "lsk.");
    visit_conv(p.proj_out, prefix + "proj_out", fn);
    visit_vector(p.layer_scale1, prefix + "layer_scale1", fn);
    visit_norm(p.norm2, prefix + "norm2", fn);
    visit_conv(p.fc1, prefix + "ffn.fc1", fn);
    visit_conv(p.ffn_dw, prefix + "ffn.dw", fn);
    visit_conv(p.fc2, prefix + "ffn.fc2", fn);
    visit_vector(p.layer_scale2, prefix + "layer_scale2", fn);
}
}  // namespace detail

template <typename T, typename Fn>
void visit(LskBlockParams<T>& p, Fn& fn, const std::string& prefix = "") {
    detail::visit_block(p, fn, prefix);
}

template <typename T, typename Fn>
void visit(const LskBlockParams<T>& p, Fn& fn, const std::string& prefix = "") {
    detail::visit_block(p, fn, prefix);
}

template <typename T>
LskBlockParams<T> init_block(const LskModuleConfig& cfg, std::size_t hidden, T layer_scale, std::mt19937_64& rng) {
    LskBlockParams<T> p(cfg, hidden);
    init_conv(p.proj_in, rng);
    p.lsk = init_lsk_module<T>(cfg, rng);
    init_conv(p.proj_out, rng);
    init_conv(p.fc1, rng);
    init_conv(p.ffn_dw, rng);
    init_conv(p.fc2, rng);
    std::fill(p.layer_scale1.begin(), p.layer_scale1.end(), layer_scale);
    std::fill(p.layer_scale2.begin(), p.layer_scale2.end(), layer_scale);
    return p;
}

template <typename T>
LskBlockParams<T> zeros_like(const LskBlockParams<T>& p) {
    LskBlockParams<T> z(p.lsk.config, p.hidden());
    z.norm1 = zero_norm<T>(p.channels());
    z.norm2 = zero_norm<T>(p.channels());
    return z;
}

template <typename T>
struct BlockTape {
    NormTape<T> norm1;
    Tensor4<T> n1, a;
    LskTape<T> lsk;
    Tensor4<T> l, o, y1;
    NormTape<T> norm2;
    Tensor4<T> n2, f1, f2, f3, f4;
};

template <typename T>
struct BlockOutput {
    Tensor4<T> y;
    std::optional<Tensor4<T>> masks;
};

template <typename T>
BlockOutput<T> block_forward(const Tensor4<T>& x, const LskBlockParams<T>& p, NormMode norm_mode = NormMode::stored,
                             BlockTape<T>* tape = nullptr) {
    require(x.c() == p.channels(), "block_forward: input has " + std::to_string(x.c()) + " channels, block expects " +
                                       std::to_string(p.channels()));
    BlockTape<T> local;
    BlockTape<T>& t = tape ? *tape : local;
    const bool keep = tape != nullptr;

    Tensor4<T> n1 = norm_forward(x, p.norm1, norm_mode, keep ? &t.norm1 : nullptr);
    Tensor4<T> a = pointwise_conv(n1, p.proj_in.weight, p.proj_in.bias);
    auto lo = lsk_forward(gelu(a), p.lsk, keep ? &t.lsk : nullptr);
    Tensor4<T> o = pointwise_conv(lo.y, p.proj_out.weight, p.proj_out.bias);
    Tensor4<T> y1 = add(x, scale_by_channel_vector(o, p.layer_scale1));

    Tensor4<T> n2 = norm_forward(y1, p.norm2, norm_mode, keep ? &t.norm2 : nullptr);
    Tensor4<T> f1 = pointwise_conv(n2, p.fc1.weight, p.fc1.bias);
    Tensor4<T> f2 = depthwise_conv(f1, p.ffn_dw.weight, p.ffn_dw.bias, ConvSpec::same(3));
    Tensor4<T> f3 = gelu(f2);
    Tensor4<T> f4 = pointwise_conv(f3, p.fc2.weight, p.fc2.bias);
    BlockOutput<T> out{add(y1, scale_by_channel_vector(f4, p.layer_scale2)), std::move(lo.masks)};

    if (keep) {
        t.n1 = std::move(n1);
        t.a = std::move(a);
        t.l = std::move(lo.y);
        t.o = std::move(o);
        t.y1 = std::move(y1);
        t.n2 = std::move(n2);
        t.f1 = std::move(f1);
        t.f2 = std::move(f2);
        t.f3 = std::move(f3);
        t.f4 = std::move(f4);
    }
    return out;
}

template <typename T>
struct BlockGrads {
    Tensor4<T> grad_x;
    LskBlockParams<T> params;
};

template <typename T>
BlockGrads<T> block_backward(const Tensor4<T>& grad_y, const BlockTape<T>& t, const LskBlockParams<T>& p) {
    require(!t.y1.empty(), "block_backward: empty tape");
    require_same_shape(grad_y.shape(), t.y1.shape(), "block_backward");
    BlockGrads<T> g{Tensor4<T>(), zeros_like(p)};

    // FFN sub-block
    auto [g_f4, g_ls2] = scale_by_channel_vector_backward(grad_y, t.f4, p.layer_scale2);
    g.params.layer_scale2 = std::move(g_ls2);
    auto g_fc2 = pointwise_conv_backward(g_f4, t.f3, p.fc2.weight);
    g.params.fc2.weight = std::move(g_fc2.grad_weight);
    g.params.fc2.bias = std::move(g_fc2.grad_bias);
    auto g_dw = depthwise_conv_backward(gelu_backward(g_fc2.grad_x, t.f2), t.f1, p.ffn_dw.weight, ConvSpec::same(3));
    g.params.ffn_dw.weight = std::move(g_dw.grad_weight);
    g.params.ffn_dw.bias = std::move(g_dw.grad_bias);
    auto g_fc1 = pointwise_conv_backward(g_dw.grad_x, t.n2, p.fc1.weight);
    g.params.fc1.weight = std::move(g_fc1.grad_weight);
    g.params.fc1.bias = std::move(g_fc1.grad_bias);
    Tensor4<T> g_y1 = grad_y;
    accumulate(g_y1, norm_backward(g_fc1.grad_x, t.norm2, p.norm2, g.params.norm2));

    // LK selection sub-block
    auto [g_o, g_ls1] = scale_by_channel_vector_backward(g_y1, t.o, p.layer_scale1);
    g.params.layer_scale1 = std::move(g_ls1);
    auto g_proj_out = pointwise_conv_backward(g_o, t.l, p.proj_out.weight);
    g.params.proj_out.weight = std::move(g_proj_out.grad_weight);
    g.params.proj_out.bias = std::move(g_proj_out.grad_bias);
    auto g_lsk = lsk_backward(g_proj_out.grad_x, t.lsk, p.lsk);
    g.params.lsk = std::move(g_lsk.params);
    auto g_proj_in = pointwise_conv_backward(gelu_backward(g_lsk.grad_x, t.a), t.n1, p.proj_in.weight);
    g.params.proj_in.weight = std::move(g_proj_in.grad_weight);
    g.params.proj_in.bias = std::move(g_proj_in.grad_bias);
    g.grad_x = std::move(g_y1);
    accumulate(g.grad_x, norm_backward(g_proj_in.grad_x, t.norm1, p.norm1, g.params.norm1));
    return g;
}

}  // namespace lsk
