#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsk/plan.hpp"
#include "lsk/pooling.hpp"
#include "lsk/tensor.hpp"

namespace lsk {

/// How the N decomposed-kernel branches are combined.
///   spatial: per-pixel sigmoid masks from pooled channel descriptors
///   channel: per-channel softmax weights across branches (SKNet style)
///   none:    plain unweighted sum
enum class SelectionMode { spatial, channel, none };

inline const char* to_string(SelectionMode m) {
    switch (m) {
        case SelectionMode::spatial: return "spatial";
        case SelectionMode::channel: return "channel";
        case SelectionMode::none: return "none";
    }
    return "?";
}

inline SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "spatial") return SelectionMode::spatial;
    if (s == "channel") return SelectionMode::channel;
    if (s == "none") return SelectionMode::none;
    throw std::invalid_argument("unknown selection mode '" + s + "'");
}

/// Ordered pooling descriptor set; avg precedes max when both are present.
using PoolingSet = std::vector<PoolKind>;

inline PoolingSet default_pooling() { return {PoolKind::avg, PoolKind::max}; }

inline void validate_pooling(const PoolingSet& pooling) {
    require(!pooling.empty(), "pooling set must not be empty");
    require(pooling.size() <= 2, "pooling set has at most two entries");
    if (pooling.size() == 2) {
        require(pooling[0] == PoolKind::avg && pooling[1] == PoolKind::max,
                "pooling set must list avg before max without duplicates");
    }
}

inline PoolingSet parse_pooling(const std::string& s) {
    bool avg = false, max = false;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find(',', start), s.size());
        const std::string tok = s.substr(start, end - start);
        if (tok == "avg") avg = true;
        else if (tok == "max") max = true;
        else throw std::invalid_argument("unknown pooling kind '" + tok + "'");
        start = end + 1;
    }
    PoolingSet out;
    if (avg) out.push_back(PoolKind::avg);
    if (max) out.push_back(PoolKind::max);
    return out;
}

struct LskModuleConfig {
    DecompositionPlan plan = default_plan();
    std::size_t channels = 1;
    std::size_t branch_channels = 1;  // c_mid
    std::size_t selection_kernel = 7;
    SelectionMode mode = SelectionMode::spatial;
    PoolingSet pooling = default_pooling();
    std::size_t channel_hidden = 0;  // bottleneck width for channel mode; 0 = derived

    std::size_t branches() const { return plan.size(); }

    std::size_t hidden() const {
        return channel_hidden ? channel_hidden : std::max<std::size_t>(branch_channels / 4, 4);
    }

    void validate() const {
        require(!plan.stages.empty(), "LskModuleConfig: plan has no stages");
        require(channels >= 1 && branch_channels >= 1, "LskModuleConfig: channel counts must be >= 1");
        require(selection_kernel % 2 == 1, "LskModuleConfig: selection kernel must be odd");
        validate_pooling(pooling);
    }

    /// Half-width branches, the reference setting.
    static LskModuleConfig with_channels(std::size_t c, DecompositionPlan plan = default_plan()) {
        LskModuleConfig cfg;
        cfg.plan = std::move(plan);
        cfg.channels = c;
        cfg.branch_channels = std::max<std::size_t>(c / 2, 1);
        return cfg;
    }
};

/// Four-stage pyramid: stem (stride 4) then stages at strides 4, 8, 16, 32.
struct BackboneConfig {
    std::string name = "custom";
    std::array<std::size_t, 4> channels{32, 64, 160, 256};
    std::array<std::size_t, 4> depths{3, 3, 5, 2};
    std::array<double, 4> ffn_ratios{8.0, 8.0, 4.0, 4.0};
    DecompositionPlan plan = default_plan();
    SelectionMode mode = SelectionMode::spatial;
    PoolingSet pooling = default_pooling();
    std::size_t selection_kernel = 7;
    std::size_t in_channels = 3;
    double layer_scale_init = 1e-2;

    static BackboneConfig lsknet_t() {
        BackboneConfig c;
        c.name = "LSKNet-T";
        c.channels = {32, 64, 160, 256};
        c.depths = {3, 3, 5, 2};
        return c;
    }

    static BackboneConfig lsknet_s() {
        BackboneConfig c;
        c.name = "LSKNet-S";
        c.channels = {64, 128, 320, 512};
        c.depths = {2, 2, 4, 2};
        return c;
    }

    void validate() const {
        for (std::size_t i = 0; i < 4; ++i) {
            require(channels[i] >= 1, "BackboneConfig: stage channels must be positive");
            require(depths[i] >= 1, "BackboneConfig: stage depths must be positive");
            require(ffn_ratios[i] > 0, "BackboneConfig: FFN ratios must be positive");
        }
        require(in_channels >= 1, "BackboneConfig: input channels must be positive");
        require(!plan.stages.empty(), "BackboneConfig: empty decomposition plan");
        require(selection_kernel % 2 == 1, "BackboneConfig: selection kernel must be odd");
        validate_pooling(pooling);
    }

    std::size_t total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }

    std::size_t ffn_hidden(std::size_t stage) const {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ffn_ratios[stage] * channels[stage])));
    }

    /// LSK module settings for blocks of `stage` (0-based).
    LskModuleConfig lsk_config(std::size_t stage) const {
        LskModuleConfig m = LskModuleConfig::with_channels(channels[stage], plan);
        m.selection_kernel = selection_kernel;
        m.mode = mode;
        m.pooling = pooling;
        return m;
    }
};

/// "T" / "S" (also accepts the full preset names).
inline BackboneConfig backbone_preset(const std::string& variant) {
    if (variant == "T" || variant == "t" || variant == "LSKNet-T") return BackboneConfig::lsknet_t();
    if (variant == "S" || variant == "s" || variant == "LSKNet-S") return BackboneConfig::lsknet_s();
    throw std::invalid_argument("unknown variant '" + variant + "' (expected T or S)");
}

}  // namespace lsk
