#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lsk/block.hpp"
#include "lsk/config.hpp"
#include "lsk/cost.hpp"

namespace lsk {

template <typename T>
struct StageParams {
    ConvParams<T> down;    // stem (stage 1) or stride-2 downsampler
    NormParams<T> down_norm;
    std::vector<LskBlockParams<T>> blocks;
    NormParams<T> norm;
};

template <typename T>
struct BackboneParams {
    BackboneConfig config;
    std::array<StageParams<T>, 4> stages;

    BackboneParams() = default;

    /// Zero weights in the layout `cfg` describes.
    explicit BackboneParams(BackboneConfig cfg) : config(std::move(cfg)) {
        config.validate();
        std::size_t c_prev = config.in_channels;
        for (std::size_t s = 0; s < 4; ++s) {
            const std::size_t c = config.channels[s], k = s == 0 ? stem_spec().kernel : downsample_spec().kernel;
            auto& st = stages[s];
            st.down = ConvParams<T>(Shape4{c, c_prev, k, k});
            st.down_norm = NormParams<T>(c);
            for (std::size_t b = 0; b < config.depths[s]; ++b)
                st.blocks.emplace_back(config.lsk_config(s), config.ffn_hidden(s));
            st.norm = NormParams<T>(c);
            c_prev = c;
        }
    }
};

namespace detail {
template <typename P, typename Fn>
void visit_backbone(P& p, Fn& fn) {
    for (std::size_t s = 0; s < 4; ++s) {
        auto& st = p.stages[s];
        const std::string stage = "stage" + std::to_string(s + 1) + ".";
        const std::string down = s == 0 ? "stem." : stage + "downsample.";
        visit_conv(st.down, down + "conv", fn);
        visit_norm(st.down_norm, down + "norm", fn);
        for (std::size_t b = 0; b < st.blocks.size(); ++b)
            visit(st.blocks[b], fn, stage + "block" + std::to_string(b) + ".");
        visit_norm(st.norm, stage + "norm", fn);
    }
}
}  // namespace detail

template <typename T, typename Fn>
void visit(BackboneParams<T>& p, Fn& fn) {
    detail::visit_backbone(p, fn);
}

template <typename T, typename Fn>
void visit(const BackboneParams<T>& p, Fn& fn) {
    detail::visit_backbone(p, fn);
}

/// Name -> shape for every tensor a backbone of this configuration stores.
inline std::map<std::string, std::vector<std::size_t>> expected_tensor_shapes(const BackboneConfig& cfg) {
    std::map<std::string, std::vector<std::size_t>> out;
    const BackboneParams<float> layout(cfg);
    auto fn = [&](const std::string& name, const std::vector<std::size_t>& shape, std::span<const float>, SlotKind) {
        out[name] = shape;
    };
    visit(layout, fn);
    return out;
}

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
    BackboneParams<T> p(cfg);
    for (std::size_t s = 0; s < 4; ++s) {
        auto& st = p.stages[s];
        init_conv(st.down, rng);
        for (auto& b : st.blocks) b = init_block<T>(cfg.lsk_config(s), cfg.ffn_hidden(s), T(cfg.layer_scale_init), rng);
    }
    return p;
}

template <typename T>
BackboneParams<T> zeros_like(const BackboneParams<T>& p) {
    BackboneParams<T> z(p.config);
    for (auto& st : z.stages) {
        st.down_norm = zero_norm<T>(st.down_norm.channels());
        st.norm = zero_norm<T>(st.norm.channels());
        for (auto& b : st.blocks) b = zeros_like(b);
    }
    return z;
}

/// Masks of one block, keyed B_<stage>_<depth> (both 1-based).
template <typename T>
struct MaskEntry {
    std::size_t stage = 0;
    std::size_t depth = 0;
    Tensor4<T> masks;              // (n, N, h, w)
    std::vector<std::size_t> rf;   // RF_n per mask channel

    std::string key() const { return "B_" + std::to_string(stage) + "_" + std::to_string(depth); }
};

template <typename T>
struct ActivationRecord {
    std::vector<MaskEntry<T>> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    const MaskEntry<T>* find(const std::string& key) const {
        for (const auto& e : entries)
            if (e.key() == key) return &e;
        return nullptr;
    }
};

template <typename T>
struct StageTape {
    Tensor4<T> input;
    NormTape<T> down_norm;
    std::vector<BlockTape<T>> blocks;
    NormTape<T> norm;
};

template <typename T>
struct BackboneTape {
    std::array<StageTape<T>, 4> stages;
};

template <typename T>
struct BackboneOutput {
    std::array<Tensor4<T>, 4> features;
    ActivationRecord<T> masks;
};

template <typename T>
BackboneOutput<T> backbone_forward(const Tensor4<T>& x, const BackboneParams<T>& p,
                                   NormMode norm_mode = NormMode::stored, BackboneTape<T>* tape = nullptr) {
    const auto& cfg = p.config;
    require(x.c() == cfg.in_channels, "backbone_forward: input has " + std::to_string(x.c()) + " channels, expected " +
                                          std::to_string(cfg.in_channels));
    require(x.h() % 32 == 0 && x.w() % 32 == 0,
            "backbone_forward: spatial size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                " is not divisible by 32");
    BackboneOutput<T> out;
    Tensor4<T> z = x;
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& st = p.stages[s];
        StageTape<T>* tp = tape ? &tape->stages[s] : nullptr;
        if (tp) tp->input = z;
        z = conv2d(z, st.down.weight, st.down.bias, s == 0 ? stem_spec() : downsample_spec());
        z = norm_forward(z, st.down_norm, norm_mode, tp ? &tp->down_norm : nullptr);
        if (tp) tp->blocks.assign(st.blocks.size(), BlockTape<T>{});
        for (std::size_t b = 0; b < st.blocks.size(); ++b) {
            auto bo = block_forward(z, st.blocks[b], norm_mode, tp ? &tp->blocks[b] : nullptr);
            z = std::move(bo.y);
            if (bo.masks) out.masks.entries.push_back({s + 1, b + 1, std::move(*bo.masks), cfg.plan.rf_per_stage});
        }
        z = norm_forward(z, st.norm, norm_mode, tp ? &tp->norm : nullptr);
        out.features[s] = z;
    }
    return out;
}

template <typename T>
struct BackboneGrads {
    Tensor4<T> grad_x;
    BackboneParams<T> params;
};

/// grad_features[s] may be empty, meaning no loss on that stage's output.
template <typename T>
BackboneGrads<T> backbone_backward(const std::array<Tensor4<T>, 4>& grad_features, const BackboneTape<T>& tape,
                                   const BackboneParams<T>& p) {
    BackboneGrads<T> g{Tensor4<T>(), zeros_like(p)};
    Tensor4<T> carry;  // gradient arriving from the next stage's downsampler
    for (std::size_t r = 0; r < 4; ++r) {
        const std::size_t s = 3 - r;
        const auto& st = p.stages[s];
        const auto& tp = tape.stages[s];
        auto& gs = g.params.stages[s];
        require(tp.blocks.size() == st.blocks.size(), "backbone_backward: tape does not match parameters");
        Tensor4<T> gz;
        if (!grad_features[s].empty()) gz = grad_features[s];
        if (!carry.empty()) {
            if (gz.empty()) gz = std::move(carry);
            else accumulate(gz, carry);
        }
        if (gz.empty()) {
            // nothing downstream depends on this stage or the ones before it
            continue;
        }
        gz = norm_backward(gz, tp.norm, st.norm, gs.norm);
        for (std::size_t rb = 0; rb < st.blocks.size(); ++rb) {
            const std::size_t b = st.blocks.size() - 1 - rb;
            auto bg = block_backward(gz, tp.blocks[b], st.blocks[b]);
            gs.blocks[b] = std::move(bg.params);
            gz = std::move(bg.grad_x);
        }
        gz = norm_backward(gz, tp.down_norm, st.down_norm, gs.down_norm);
        auto cg = conv2d_backward(gz, tp.input, st.down.weight, s == 0 ? stem_spec() : downsample_spec());
        gs.down.weight = std::move(cg.grad_weight);
        gs.down.bias = std::move(cg.grad_bias);
        carry = std::move(cg.grad_x);
    }
    g.grad_x = carry.empty() ? Tensor4<T>(tape.stages[0].input.shape()) : std::move(carry);
    return g;
}

}  // namespace lsk
