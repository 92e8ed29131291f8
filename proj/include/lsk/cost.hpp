#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lsk/config.hpp"
#include "lsk/conv.hpp"
#include "lsk/plan.hpp"

namespace lsk {

/// Parameter and operation counts for one component, with children.
///   macs:  multiply-accumulates of convolutions and norms (bias = 1 MAC per output)
///   flops: 2 per MAC, plus 2 per element for activations, pooling and gating
struct CostReport {
    std::string name;
    std::int64_t params = 0;
    std::int64_t macs = 0;
    std::int64_t flops = 0;
    std::vector<CostReport> breakdown;
    std::vector<std::pair<std::string, std::string>> conventions;

    CostReport& add(CostReport child) {
        params += child.params;
        macs += child.macs;
        flops += child.flops;
        breakdown.push_back(std::move(child));
        return *this;
    }

    const CostReport* find(const std::string& child) const {
        for (const auto& c : breakdown)
            if (c.name == child) return &c;
        return nullptr;
    }

    /// True when every node's totals equal the sum of its children.
    bool consistent() const {
        if (breakdown.empty()) return params >= 0 && macs >= 0 && flops >= 0;
        std::int64_t p = 0, m = 0, f = 0;
        for (const auto& c : breakdown) {
            if (!c.consistent()) return false;
            p += c.params;
            m += c.macs;
            f += c.flops;
        }
        return p == params && m == macs && f == flops;
    }
};

namespace detail {
inline std::int64_t i64(std::size_t v) { return static_cast<std::int64_t>(v); }

inline CostReport conv_leaf(std::string name, std::int64_t params, std::size_t out_h, std::size_t out_w) {
    CostReport r;
    r.name = std::move(name);
    r.params = params;
    r.macs = params * i64(out_h) * i64(out_w);
    r.flops = 2 * r.macs;
    return r;
}
}  // namespace detail

/// params = c k^2 (+c); dilation does not change cost.
inline CostReport cost_depthwise(std::size_t c, const ConvSpec& spec, std::size_t h, std::size_t w,
                                 bool include_bias = true, std::string name = "depthwise") {
    const std::int64_t params = detail::i64(c * spec.kernel * spec.kernel + (include_bias ? c : 0));
    return detail::conv_leaf(std::move(name), params, h, w);
}

inline CostReport cost_pointwise(std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w,
                                 bool include_bias = true, std::string name = "pointwise") {
    const std::int64_t params = detail::i64(c_in * c_out + (include_bias ? c_out : 0));
    return detail::conv_leaf(std::move(name), params, h, w);
}

/// Dense conv; (h, w) is the input size, cost is taken at the output size.
inline CostReport cost_conv(std::size_t c_in, std::size_t c_out, const ConvSpec& spec, std::size_t h,
                            std::size_t w, bool include_bias = true, std::string name = "conv") {
    const std::int64_t params = detail::i64(c_out * c_in * spec.kernel * spec.kernel + (include_bias ? c_out : 0));
    return detail::conv_leaf(std::move(name), params, spec.out_size(h), spec.out_size(w));
}

/// Per-channel affine norm: 2c params, one MAC per element.
inline CostReport cost_norm(std::size_t c, std::size_t h, std::size_t w, std::string name = "norm") {
    CostReport r;
    r.name = std::move(name);
    r.params = detail::i64(2 * c);
    r.macs = detail::i64(c * h * w);
    r.flops = 2 * r.macs;
    return r;
}

/// Activations, pooling, gating, residual adds: 2 FLOPs per element.
inline CostReport cost_elementwise(std::string name, std::size_t elements, std::size_t params = 0) {
    CostReport r;
    r.name = std::move(name);
    r.params = detail::i64(params);
    r.flops = 2 * detail::i64(elements);
    return r;
}

inline std::vector<std::pair<std::string, std::string>> cost_conventions() {
    return {
        {"flop_unit", "1 multiply-accumulate = 2 FLOPs"},
        {"bias", "counted as 1 MAC per output element"},
        {"norm", "per-channel affine: 2 params per channel, 1 MAC per element; running statistics excluded"},
        {"elementwise", "activations, pooling, gating, layer scale, residual adds: 2 FLOPs per element, 0 MACs"},
        {"dilation", "does not change cost"},
        {"mask_reduction", "selection masks summed at each block's own resolution"},
        {"published_flops", "published backbone FLOP figures count multiply-accumulates; compare them with `macs`"},
    };
}

struct PlanCostOptions {
    std::size_t selection_kernel = 7;
    std::size_t pooling = 2;  // descriptor channels entering the selection conv
    SelectionMode mode = SelectionMode::spatial;
    std::size_t channel_hidden = 0;  // 0 = max(c_mid / 4, 4)
    bool include_bias = true;
};

/// One LSK module at (h, w): depth-wise chain, mixers, selection, fusion, gate.
/// c_mid = 0 drops every component that lives in the branch width.
inline CostReport cost_plan(const DecompositionPlan& plan, std::size_t c, std::size_t c_mid, std::size_t h,
                            std::size_t w, const PlanCostOptions& opt = {}) {
    const bool b = opt.include_bias;
    const std::size_t N = plan.size(), hw = h * w;
    CostReport r;
    r.name = "lsk[" + plan.str() + "]";
    r.conventions = cost_conventions();
    for (std::size_t i = 0; i < N; ++i) {
        r.add(cost_depthwise(c, ConvSpec::same(plan.stages[i].k, plan.stages[i].d), h, w, b, "dw" + std::to_string(i)));
    }
    if (c_mid == 0) return r;
    for (std::size_t i = 0; i < N; ++i) r.add(cost_pointwise(c, c_mid, h, w, b, "mix" + std::to_string(i)));
    if (opt.mode == SelectionMode::spatial) {
        r.add(cost_elementwise("pool", opt.pooling * N * c_mid * hw));
        CostReport sel = detail::conv_leaf(
            "select", detail::i64(N * opt.pooling * opt.selection_kernel * opt.selection_kernel + (b ? N : 0)), h, w);
        r.add(std::move(sel));
        r.add(cost_elementwise("sigmoid", N * hw));
        r.add(cost_elementwise("weighted_sum", N * c_mid * hw));
    } else if (opt.mode == SelectionMode::channel) {
        const std::size_t hidden = opt.channel_hidden ? opt.channel_hidden : std::max<std::size_t>(c_mid / 4, 4);
        r.add(cost_elementwise("gap", N * c_mid * hw));
        r.add(cost_pointwise(c_mid, hidden, 1, 1, b, "squeeze"));
        r.add(cost_elementwise("gelu", hidden));
        r.add(cost_pointwise(hidden, N * c_mid, 1, 1, b, "excite"));
        r.add(cost_elementwise("softmax", N * c_mid));
        r.add(cost_elementwise("weighted_sum", N * c_mid * hw));
    } else {
        r.add(cost_elementwise("sum", (N - 1) * c_mid * hw));
    }
    r.add(cost_pointwise(c_mid, c, h, w, b, "fusion"));
    r.add(cost_elementwise("gate", c * hw));
    return r;
}

/// LK-selection sub-block plus FFN sub-block, both residual.
inline CostReport cost_block(const BackboneConfig& cfg, std::size_t stage, std::size_t h, std::size_t w,
                             std::string name = "block") {
    const std::size_t c = cfg.channels[stage], hidden = cfg.ffn_hidden(stage), e = c * h * w;
    const auto m = cfg.lsk_config(stage);
    PlanCostOptions opt;
    opt.selection_kernel = m.selection_kernel;
    opt.pooling = m.pooling.size();
    opt.mode = m.mode;
    CostReport r;
    r.name = std::move(name);
    r.add(cost_norm(c, h, w, "norm1"));
    r.add(cost_pointwise(c, c, h, w, true, "proj_in"));
    r.add(cost_elementwise("gelu", e));
    CostReport lsk = cost_plan(m.plan, c, m.branch_channels, h, w, opt);
    lsk.name = "lsk";
    lsk.conventions.clear();
    r.add(std::move(lsk));
    r.add(cost_pointwise(c, c, h, w, true, "proj_out"));
    r.add(cost_elementwise("layer_scale1", e, c));
    r.add(cost_elementwise("residual1", e));
    r.add(cost_norm(c, h, w, "norm2"));
    r.add(cost_pointwise(c, hidden, h, w, true, "fc1"));
    r.add(cost_depthwise(hidden, ConvSpec::same(3), h, w, true, "ffn_dw"));
    r.add(cost_elementwise("ffn_gelu", hidden * h * w));
    r.add(cost_pointwise(hidden, c, h, w, true, "fc2"));
    r.add(cost_elementwise("layer_scale2", e, c));
    r.add(cost_elementwise("residual2", e));
    return r;
}

inline ConvSpec stem_spec() { return ConvSpec{7, 1, 3, 4}; }
inline ConvSpec downsample_spec() { return ConvSpec{3, 1, 1, 2}; }

/// Whole backbone at input size (h, w); no classification head.
inline CostReport cost_backbone(const BackboneConfig& cfg, std::size_t h, std::size_t w) {
    cfg.validate();
    CostReport r;
    r.name = cfg.name;
    r.conventions = cost_conventions();
    r.conventions.emplace_back("stem", "7x7 stride-4 dense conv + norm (counted)");
    r.conventions.emplace_back("downsample", "3x3 stride-2 dense conv + norm before stages 2-4 (counted)");
    r.conventions.emplace_back("ffn_ratios", std::to_string(cfg.ffn_ratios[0]) + "," + std::to_string(cfg.ffn_ratios[1]) +
                                                 "," + std::to_string(cfg.ffn_ratios[2]) + "," +
                                                 std::to_string(cfg.ffn_ratios[3]));
    r.conventions.emplace_back("head", "not included");

    std::size_t ch = h, cw = w, c_prev = cfg.in_channels;
    for (std::size_t s = 0; s < 4; ++s) {
        CostReport stage;
        stage.name = "stage" + std::to_string(s + 1);
        const ConvSpec spec = s == 0 ? stem_spec() : downsample_spec();
        CostReport down;
        down.name = s == 0 ? "stem" : "downsample";
        down.add(cost_conv(c_prev, cfg.channels[s], spec, ch, cw, true, "conv"));
        ch = spec.out_size(ch);
        cw = spec.out_size(cw);
        down.add(cost_norm(cfg.channels[s], ch, cw, "norm"));
        stage.add(std::move(down));
        for (std::size_t b = 0; b < cfg.depths[s]; ++b) stage.add(cost_block(cfg, s, ch, cw, "block" + std::to_string(b)));
        stage.add(cost_norm(cfg.channels[s], ch, cw, "norm"));
        r.add(std::move(stage));
        c_prev = cfg.channels[s];
    }
    return r;
}

/// Indented table, children down to `depth` levels.
inline void write_cost_text(std::ostream& os, const CostReport& r, int depth = 2, int indent = 0) {
    std::ostringstream line;
    line << std::string(static_cast<std::size_t>(indent) * 2, ' ') << r.name;
    std::string label = line.str();
    if (label.size() < 32) label.resize(32, ' ');
    os << label << "  params " << r.params << "  macs " << r.macs << "  flops " << r.flops << '\n';
    if (depth > 0)
        for (const auto& c : r.breakdown) write_cost_text(os, c, depth - 1, indent + 1);
    if (indent == 0 && !r.conventions.empty()) {
        os << "conventions:\n";
        for (const auto& [k, v] : r.conventions) os << "  " << k << ": " << v << '\n';
    }
}

/// One `key=value` record per component, dotted path as `component`; stable order.
inline void write_cost_kv(std::ostream& os, const CostReport& r, const std::string& path = "") {
    const std::string me = path.empty() ? r.name : path + "." + r.name;
    os << "component=" << me << " params=" << r.params << " macs=" << r.macs << " flops=" << r.flops << '\n';
    for (const auto& c : r.breakdown) write_cost_kv(os, c, me);
    if (path.empty())
        for (const auto& [k, v] : r.conventions) os << "convention." << k << "=" << v << '\n';
}

}  // namespace lsk
