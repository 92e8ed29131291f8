#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "lsk/cost.hpp"
#include "lsk/plan.hpp"

namespace lsk {

/// Channel widths at which candidate plans are priced for ranking.
struct PlanSearchOptions {
    std::size_t channels = 64;
    std::size_t branch_channels = 32;
    PlanCostOptions cost{};
};

/// Module parameter count used to rank plans (independent of resolution).
inline std::int64_t plan_rank_cost(const DecompositionPlan& plan, const PlanSearchOptions& opt = {}) {
    return cost_plan(plan, opt.channels, opt.branch_channels, 1, 1, opt.cost).params;
}

namespace detail {
inline void extend_plans(std::vector<KernelSpec>& prefix, std::size_t rf, std::size_t target, std::size_t max_stages,
                         std::size_t max_k, std::vector<DecompositionPlan>& out) {
    if (rf == target) out.push_back(validate_plan(prefix));
    if (prefix.size() == max_stages) return;
    const KernelSpec last = prefix.back();
    for (std::size_t k = last.k; k <= max_k; k += 2) {
        // d ranges over (d_prev, RF_prev]; stop once the RF overshoots the target
        for (std::size_t d = last.d + 1; d <= rf; ++d) {
            const std::size_t next = rf + d * (k - 1);
            if (next > target) break;
            prefix.push_back({k, d});
            extend_plans(prefix, next, target, max_stages, max_k, out);
            prefix.pop_back();
        }
    }
}
}  // namespace detail

/// Every valid plan with final RF exactly `target_rf`, at most `max_stages`
/// stages and kernels no larger than `max_k`, cheapest first; ties are
/// ordered lexicographically by their (k, d) sequence. No plan reaches an
/// RF below 3, so such targets yield an empty list.
inline std::vector<DecompositionPlan> enumerate_plans(std::size_t target_rf, std::size_t max_stages, std::size_t max_k,
                                                      const PlanSearchOptions& opt = {}) {
    std::vector<DecompositionPlan> out;
    if (target_rf < 3 || max_stages == 0) return out;
    std::vector<KernelSpec> prefix;
    for (std::size_t k = 3; k <= std::min(max_k, target_rf); k += 2) {
        prefix.push_back({k, 1});
        detail::extend_plans(prefix, k, target_rf, max_stages, max_k, out);
        prefix.pop_back();
    }
    std::vector<std::pair<std::int64_t, DecompositionPlan>> ranked;
    ranked.reserve(out.size());
    for (auto& p : out) ranked.emplace_back(plan_rank_cost(p, opt), std::move(p));
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second.stages < b.second.stages;
    });
    out.clear();
    for (auto& [cost, p] : ranked) out.push_back(std::move(p));
    return out;
}

}  // namespace lsk
