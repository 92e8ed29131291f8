#pragma once

// Shared helpers for tests that need randomized parameter sets and flat
// views of them for finite differences.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "lsk/lsk_module.hpp"
#include "oracles.hpp"

namespace fixtures {

/// Pointers to every trainable scalar, in visit order.
template <typename P>
std::vector<double*> param_pointers(P& p) {
    std::vector<double*> out;
    auto fn = [&](const std::string&, const std::vector<std::size_t>&, std::span<double> s, lsk::SlotKind kind) {
        if (kind != lsk::SlotKind::parameter) return;
        for (auto& v : s) out.push_back(&v);
    };
    visit(p, fn);
    return out;
}

template <typename P>
std::vector<double> flatten(const P& p) {
    std::vector<double> out;
    auto fn = [&](const std::string&, const std::vector<std::size_t>&, std::span<const double> s, lsk::SlotKind kind) {
        if (kind != lsk::SlotKind::parameter) return;
        out.insert(out.end(), s.begin(), s.end());
    };
    visit(p, fn);
    return out;
}

/// Module with fan-in weights and non-zero biases, so every path carries signal.
template <typename T>
lsk::LskModuleParams<T> random_lsk(const lsk::LskModuleConfig& cfg, std::mt19937_64& rng, double bias = 0.3) {
    auto p = lsk::init_lsk_module<T>(cfg, rng);
    auto fn = [&](const std::string& name, const std::vector<std::size_t>&, std::span<T> s, lsk::SlotKind) {
        if (name.ends_with(".bias")) lsk::fill_uniform(s, -bias, bias, rng);
    };
    visit(p, fn);
    return p;
}

inline oracle::LskWeights to_oracle(const lsk::LskModuleParams<double>& p) {
    oracle::LskWeights w;
    for (std::size_t i = 0; i < p.dw.size(); ++i) {
        w.k.push_back(static_cast<long>(p.config.plan.stages[i].k));
        w.d.push_back(static_cast<long>(p.config.plan.stages[i].d));
        w.dw_w.push_back(p.dw[i].weight);
        w.dw_b.push_back(p.dw[i].bias);
        w.mix_w.push_back(p.mixers[i].weight);
        w.mix_b.push_back(p.mixers[i].bias);
    }
    w.sel_w = p.select.weight;
    w.sel_b = p.select.bias;
    w.fuse_w = p.fusion.weight;
    w.fuse_b = p.fusion.bias;
    w.use_avg = false;
    w.use_max = false;
    for (auto k : p.config.pooling) (k == lsk::PoolKind::avg ? w.use_avg : w.use_max) = true;
    return w;
}

inline lsk::LskModuleConfig small_config(std::size_t c, std::size_t m, lsk::DecompositionPlan plan,
                                         lsk::SelectionMode mode = lsk::SelectionMode::spatial,
                                         std::size_t q = 3) {
    lsk::LskModuleConfig cfg;
    cfg.plan = std::move(plan);
    cfg.channels = c;
    cfg.branch_channels = m;
    cfg.mode = mode;
    cfg.selection_kernel = q;
    return cfg;
}

}  // namespace fixtures
