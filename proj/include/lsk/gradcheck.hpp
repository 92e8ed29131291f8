#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lsk/backbone.hpp"

namespace lsk {

/// Worst relative error |a - f| / max(|a|, |f|, 1e-8) over every checked scalar.
struct GradCheckReport {
    std::string op;
    double max_rel_error = 0;
    std::string worst_slot;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

struct GradCheckOptions {
    std::uint64_t seed = 0;
    double step = 1e-4;
    bool perturb_backward = false;  // corrupt the analytic gradient (mutation check)
};

inline constexpr double kGradCheckTolerance = 1e-4;

namespace gc_detail {

using TensorD = Tensor4<double>;

struct Slot {
    std::string name;
    std::span<double> values;
    std::vector<double> analytic;
    std::size_t stride = 1;
};

inline void check(GradCheckReport& r, std::vector<Slot> slots, const std::function<double()>& loss,
                  const GradCheckOptions& opt) {
    for (auto& s : slots) {
        require(s.values.size() == s.analytic.size(), "gradcheck: " + r.op + "." + s.name + " gradient size mismatch");
        for (std::size_t i = 0; i < s.values.size(); i += s.stride) {
            double a = s.analytic[i];
            if (opt.perturb_backward) a = a * 1.01 + 1e-3;
            const double orig = s.values[i];
            s.values[i] = orig + opt.step;
            const double lp = loss();
            s.values[i] = orig - opt.step;
            const double lm = loss();
            s.values[i] = orig;
            const double numeric = (lp - lm) / (2 * opt.step);
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            ++r.checked;
            if (err > r.max_rel_error || r.worst_slot.empty()) {
                r.max_rel_error = std::max(err, r.max_rel_error);
                r.worst_slot = s.name;
                r.worst_index = i;
            }
        }
    }
}

inline double dot(const TensorD& a, const TensorD& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.span()[i] * b.span()[i];
    return s;
}

inline std::vector<double> to_vec(const TensorD& t) { return {t.span().begin(), t.span().end()}; }

/// Slots for every trainable tensor of `p`, paired with the same tensor in `g`.
template <typename P>
std::vector<Slot> param_slots(P& p, const P& g, const std::string& prefix = "") {
    std::vector<std::vector<double>> grads;
    auto collect = [&](const std::string&, const std::vector<std::size_t>&, std::span<const double> s, SlotKind) {
        grads.emplace_back(s.begin(), s.end());
    };
    visit(g, collect);
    std::vector<Slot> out;
    std::size_t i = 0;
    auto pair = [&](const std::string& name, const std::vector<std::size_t>&, std::span<double> s, SlotKind kind) {
        auto& gv = grads.at(i++);
        if (kind == SlotKind::parameter) out.push_back({prefix + name, s, std::move(gv)});
    };
    visit(p, pair);
    return out;
}

/// Randomizes every trainable slot except norm scales, which stay near 1.
template <typename P>
void randomize(P& p, std::mt19937_64& rng, double bound = 0.5) {
    auto fn = [&](const std::string& name, const std::vector<std::size_t>&, std::span<double> s, SlotKind kind) {
        if (kind != SlotKind::parameter) return;
        const bool norm_scale = name.ends_with("norm.weight") || name.ends_with("norm1.weight") ||
                                name.ends_with("norm2.weight");
        if (norm_scale) fill_uniform(s, 0.5, 1.5, rng);
        else fill_uniform(s, -bound, bound, rng);
    };
    visit(p, fn);
}

inline GradCheckReport unary_op(const std::string& name, const GradCheckOptions& opt,
                                const std::function<TensorD(const TensorD&)>& fwd,
                                const std::function<TensorD(const TensorD&, const TensorD&, const TensorD&)>& bwd,
                                double lo = -2, double hi = 2, Shape4 shape = {2, 3, 4, 5}) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = name;
    TensorD x = random_tensor<double>(shape, rng, lo, hi);
    const TensorD y = fwd(x);
    const TensorD g = random_tensor<double>(y.shape(), rng);
    check(r, {{"x", x.span(), to_vec(bwd(g, x, y))}}, [&] { return dot(fwd(x), g); }, opt);
    return r;
}

inline GradCheckReport conv_op(const std::string& name, const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = name;
    TensorD x, w;
    ConvSpec spec;
    if (name == "depthwise_conv") {
        spec = ConvSpec::same(3, 2);
        x = random_tensor<double>({2, 3, 6, 5}, rng);
        w = random_tensor<double>({3, 1, 3, 3}, rng);
    } else if (name == "pointwise_conv") {
        spec = ConvSpec::same(1);
        x = random_tensor<double>({2, 4, 3, 5}, rng);
        w = random_tensor<double>({5, 4, 1, 1}, rng);
    } else {
        spec = ConvSpec{3, 1, 1, 2};
        x = random_tensor<double>({2, 3, 6, 6}, rng);
        w = random_tensor<double>({4, 3, 3, 3}, rng);
    }
    Vec<double> b(w.n());
    fill_uniform(std::span<double>(b), -1, 1, rng);
    auto fwd = [&]() -> TensorD {
        if (name == "depthwise_conv") return depthwise_conv(x, w, b, spec);
        if (name == "pointwise_conv") return pointwise_conv(x, w, b);
        return conv2d(x, w, b, spec);
    };
    const TensorD g = random_tensor<double>(fwd().shape(), rng);
    ConvGrads<double> cg;
    if (name == "depthwise_conv") cg = depthwise_conv_backward(g, x, w, spec);
    else if (name == "pointwise_conv") cg = pointwise_conv_backward(g, x, w);
    else cg = conv2d_backward(g, x, w, spec);
    check(r, {{"x", x.span(), to_vec(cg.grad_x)}, {"weight", w.span(), to_vec(cg.grad_weight)}, {"bias", b, cg.grad_bias}},
          [&] { return dot(fwd(), g); }, opt);
    return r;
}

inline GradCheckReport binary_op(const std::string& name, const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = name;
    TensorD x = random_tensor<double>({2, 3, 4, 5}, rng);
    const Shape4 other = name == "mul"             ? x.shape()
                         : name == "scale_spatial" ? Shape4{2, 1, 4, 5}
                                                   : Shape4{2, 3, 1, 1};
    TensorD m = random_tensor<double>(other, rng);
    auto fwd = [&]() -> TensorD {
        if (name == "mul") return mul(x, m);
        if (name == "scale_spatial") return scale_spatial(x, m);
        return scale_channels(x, m);
    };
    const TensorD g = random_tensor<double>(x.shape(), rng);
    std::pair<TensorD, TensorD> gr;
    if (name == "mul") gr = mul_backward(g, x, m);
    else if (name == "scale_spatial") gr = scale_spatial_backward(g, x, m);
    else gr = scale_channels_backward(g, x, m);
    check(r, {{"a", x.span(), to_vec(gr.first)}, {"b", m.span(), to_vec(gr.second)}}, [&] { return dot(fwd(), g); },
          opt);
    return r;
}

inline GradCheckReport layer_scale_op(const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = "layer_scale";
    TensorD x = random_tensor<double>({2, 3, 4, 5}, rng);
    Vec<double> gamma(3);
    fill_uniform(std::span<double>(gamma), -1, 1, rng);
    const TensorD g = random_tensor<double>(x.shape(), rng);
    auto [gx, gg] = scale_by_channel_vector_backward(g, x, gamma);
    check(r, {{"x", x.span(), to_vec(gx)}, {"gamma", gamma, gg}},
          [&] { return dot(scale_by_channel_vector(x, gamma), g); }, opt);
    return r;
}

inline GradCheckReport norm_op(NormMode mode, const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = mode == NormMode::stored ? "norm_stored" : "norm_batch";
    TensorD x = random_tensor<double>({3, 2, 3, 4}, rng);
    NormParams<double> p(2);
    fill_uniform(std::span<double>(p.scale), 0.5, 1.5, rng);
    fill_uniform(std::span<double>(p.shift), -1, 1, rng);
    fill_uniform(std::span<double>(p.mean), -0.5, 0.5, rng);
    fill_uniform(std::span<double>(p.var), 0.5, 2, rng);
    const TensorD g = random_tensor<double>(x.shape(), rng);
    NormTape<double> tape;
    norm_forward(x, p, mode, &tape);
    NormParams<double> grads = zero_norm<double>(2);
    const TensorD gx = norm_backward(g, tape, p, grads);
    check(r, {{"x", x.span(), to_vec(gx)}, {"scale", p.scale, grads.scale}, {"shift", p.shift, grads.shift}},
          [&] { return dot(norm_forward(x, p, mode), g); }, opt);
    return r;
}

inline GradCheckReport lsk_op(SelectionMode mode, const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = std::string("lsk_") + to_string(mode);
    LskModuleConfig cfg;
    cfg.plan = validate_plan({{3, 1}, {3, 2}});
    cfg.channels = 4;
    cfg.branch_channels = 2;
    cfg.selection_kernel = 3;
    cfg.mode = mode;
    auto p = init_lsk_module<double>(cfg, rng);
    randomize(p, rng);
    TensorD x = random_tensor<double>({2, 4, 5, 6}, rng);
    const TensorD g = random_tensor<double>(x.shape(), rng);
    LskTape<double> tape;
    lsk_forward(x, p, &tape);
    auto grads = lsk_backward(g, tape, p);
    auto slots = param_slots(p, grads.params);
    slots.insert(slots.begin(), Slot{"x", x.span(), to_vec(grads.grad_x)});
    check(r, std::move(slots), [&] { return dot(lsk_forward(x, p).y, g); }, opt);
    return r;
}

inline GradCheckReport block_op(NormMode mode, const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = mode == NormMode::stored ? "block" : "block_batch";
    LskModuleConfig cfg;
    cfg.plan = validate_plan({{3, 1}, {3, 2}});
    cfg.channels = 4;
    cfg.branch_channels = 2;
    cfg.selection_kernel = 3;
    auto p = init_block<double>(cfg, 6, 0.5, rng);
    randomize(p, rng);
    TensorD x = random_tensor<double>({2, 4, 5, 5}, rng);
    const TensorD g = random_tensor<double>(x.shape(), rng);
    BlockTape<double> tape;
    block_forward(x, p, mode, &tape);
    auto grads = block_backward(g, tape, p);
    auto slots = param_slots(p, grads.params);
    slots.insert(slots.begin(), Slot{"x", x.span(), to_vec(grads.grad_x)});
    check(r, std::move(slots), [&] { return dot(block_forward(x, p, mode).y, g); }, opt);
    return r;
}

inline BackboneConfig gradcheck_backbone_config() {
    BackboneConfig c;
    c.name = "gradcheck";
    c.channels = {2, 3, 2, 2};
    c.depths = {1, 1, 1, 1};
    c.ffn_ratios = {1.5, 1, 1, 1.5};
    c.plan = validate_plan({{3, 1}, {3, 2}});
    c.selection_kernel = 3;
    return c;
}

inline GradCheckReport backbone_op(const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradCheckReport r;
    r.op = "backbone";
    auto p = init_backbone<double>(gradcheck_backbone_config(), rng);
    randomize(p, rng);
    TensorD x = random_tensor<double>({1, 3, 32, 32}, rng, 0, 1);
    BackboneTape<double> tape;
    auto out = backbone_forward(x, p, NormMode::stored, &tape);
    // upstream kept small so the summed loss stays O(0.1) and roundoff in the
    // differences stays below the 1e-8 floor
    std::array<TensorD, 4> g;
    for (std::size_t s = 1; s < 4; ++s) g[s] = random_tensor<double>(out.features[s].shape(), rng, -0.02, 0.02);
    auto grads = backbone_backward(g, tape, p);
    auto slots = param_slots(p, grads.params);
    slots.insert(slots.begin(), Slot{"x", x.span(), to_vec(grads.grad_x), 37});
    check(r, std::move(slots),
          [&] {
              auto o = backbone_forward(x, p, NormMode::stored);
              double l = 0;
              for (std::size_t s = 1; s < 4; ++s) l += dot(o.features[s], g[s]);
              return l;
          },
          opt);
    return r;
}

}  // namespace gc_detail

struct GradCheckOp {
    std::string name;
    std::function<GradCheckReport(const GradCheckOptions&)> run;
};

/// Every backward in the library, each checked against central differences in double.
inline const std::vector<GradCheckOp>& gradcheck_registry() {
    using namespace gc_detail;
    static const std::vector<GradCheckOp> ops = {
        {"depthwise_conv", [](const auto& o) { return conv_op("depthwise_conv", o); }},
        {"pointwise_conv", [](const auto& o) { return conv_op("pointwise_conv", o); }},
        {"conv2d", [](const auto& o) { return conv_op("conv2d", o); }},
        {"mul", [](const auto& o) { return binary_op("mul", o); }},
        {"scale_spatial", [](const auto& o) { return binary_op("scale_spatial", o); }},
        {"scale_channels", [](const auto& o) { return binary_op("scale_channels", o); }},
        {"layer_scale", [](const auto& o) { return layer_scale_op(o); }},
        {"sigmoid",
         [](const auto& o) {
             return unary_op("sigmoid", o, [](const TensorD& x) { return sigmoid(x); },
                             [](const TensorD& g, const TensorD&, const TensorD& y) { return sigmoid_backward(g, y); },
                             -4, 4);
         }},
        {"gelu",
         [](const auto& o) {
             return unary_op("gelu", o, [](const TensorD& x) { return gelu(x); },
                             [](const TensorD& g, const TensorD& x, const TensorD&) { return gelu_backward(g, x); });
         }},
        {"channel_pool_avg",
         [](const auto& o) {
             return unary_op("channel_pool_avg", o, [](const TensorD& x) { return channel_pool(x, PoolKind::avg); },
                             [](const TensorD& g, const TensorD& x, const TensorD&) {
                                 return channel_pool_backward(g, x, PoolKind::avg);
                             });
         }},
        {"channel_pool_max",
         [](const auto& o) {
             return unary_op("channel_pool_max", o, [](const TensorD& x) { return channel_pool(x, PoolKind::max); },
                             [](const TensorD& g, const TensorD& x, const TensorD&) {
                                 return channel_pool_backward(g, x, PoolKind::max);
                             });
         }},
        {"global_avg_pool",
         [](const auto& o) {
             return unary_op("global_avg_pool", o, [](const TensorD& x) { return global_avg_pool(x); },
                             [](const TensorD& g, const TensorD& x, const TensorD&) {
                                 return global_avg_pool_backward(g, x.shape());
                             });
         }},
        {"branch_softmax",
         [](const auto& o) {
             return unary_op(
                 "branch_softmax", o, [](const TensorD& x) { return detail::branch_softmax(x, 3); },
                 [](const TensorD& g, const TensorD&, const TensorD& y) { return detail::branch_softmax_backward(g, y, 3); },
                 -2, 2, Shape4{2, 6, 1, 1});
         }},
        {"norm_stored", [](const auto& o) { return norm_op(NormMode::stored, o); }},
        {"norm_batch", [](const auto& o) { return norm_op(NormMode::batch, o); }},
        {"lsk_spatial", [](const auto& o) { return lsk_op(SelectionMode::spatial, o); }},
        {"lsk_channel", [](const auto& o) { return lsk_op(SelectionMode::channel, o); }},
        {"lsk_none", [](const auto& o) { return lsk_op(SelectionMode::none, o); }},
        {"block", [](const auto& o) { return block_op(NormMode::stored, o); }},
        {"block_batch", [](const auto& o) { return block_op(NormMode::batch, o); }},
        {"backbone", [](const auto& o) { return backbone_op(o); }},
    };
    return ops;
}

inline const GradCheckOp* find_gradcheck_op(const std::string& name) {
    for (const auto& op : gradcheck_registry())
        if (op.name == name) return &op;
    return nullptr;
}

}  // namespace lsk
