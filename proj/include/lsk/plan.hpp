#pragma once

#include <cstddef>
#include <initializer_list>
#include <regex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsk {

/// One depth-wise stage of a decomposed large kernel.
struct KernelSpec {
    std::size_t k = 3;
    std::size_t d = 1;

    friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
    friend auto operator<=>(const KernelSpec&, const KernelSpec&) = default;
};

enum class PlanViolation {
    empty,
    even_kernel,
    kernel_too_small,
    kernel_decreasing,
    first_dilation_not_one,
    dilation_not_increasing,
    dilation_exceeds_rf,
};

class PlanError : public std::invalid_argument {
public:
    PlanError(PlanViolation v, const std::string& what) : std::invalid_argument(what), violation_(v) {}
    PlanViolation violation() const { return violation_; }

private:
    PlanViolation violation_;
};

/// Sequence of depth-wise stages with growing kernel and dilation. Stage i
/// convolves the output of stage i-1; rf_per_stage[i] is the theoretical
/// receptive field after stage i.
struct DecompositionPlan {
    std::vector<KernelSpec> stages;
    std::vector<std::size_t> rf_per_stage;

    std::size_t size() const { return stages.size(); }
    std::size_t final_rf() const { return rf_per_stage.empty() ? 0 : rf_per_stage.back(); }

    /// "(5,1)->(7,3)"
    std::string str() const {
        std::string s;
        for (std::size_t i = 0; i < stages.size(); ++i) {
            if (i) s += "->";
            s += "(" + std::to_string(stages[i].k) + "," + std::to_string(stages[i].d) + ")";
        }
        return s;
    }

    friend bool operator==(const DecompositionPlan&, const DecompositionPlan&) = default;
};

/// RF_1 = k_1, RF_i = d_i (k_i - 1) + RF_{i-1}. Throws PlanError when the
/// sequence breaks k_{i-1} <= k_i, d_1 = 1, or d_{i-1} < d_i <= RF_{i-1}.
inline DecompositionPlan validate_plan(std::span<const KernelSpec> stages) {
    if (stages.empty()) throw PlanError(PlanViolation::empty, "validate_plan: empty stage list");
    DecompositionPlan plan;
    plan.stages.assign(stages.begin(), stages.end());
    plan.rf_per_stage.reserve(stages.size());
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto [k, d] = stages[i];
        const std::string tag = std::to_string(i + 1);
        if (k < 3) {
            throw PlanError(PlanViolation::kernel_too_small, "k_" + tag + " = " + std::to_string(k) + " < 3");
        }
        if (k % 2 == 0) {
            throw PlanError(PlanViolation::even_kernel, "k_" + tag + " = " + std::to_string(k) + " is even");
        }
        if (i == 0) {
            if (d != 1) {
                throw PlanError(PlanViolation::first_dilation_not_one, "d_1 = " + std::to_string(d) + " must be 1");
            }
            plan.rf_per_stage.push_back(k);
            continue;
        }
        const auto prev = stages[i - 1];
        const std::size_t prev_rf = plan.rf_per_stage.back();
        const std::string ptag = std::to_string(i);
        if (prev.k > k) {
            throw PlanError(PlanViolation::kernel_decreasing, "k_" + ptag + " = " + std::to_string(prev.k) +
                                                                  " > k_" + tag + " = " + std::to_string(k));
        }
        if (d <= prev.d) {
            throw PlanError(PlanViolation::dilation_not_increasing, "d_" + tag + " = " + std::to_string(d) +
                                                                        " <= d_" + ptag + " = " +
                                                                        std::to_string(prev.d));
        }
        if (d > prev_rf) {
            throw PlanError(PlanViolation::dilation_exceeds_rf, "d_" + tag + " = " + std::to_string(d) + " > RF_" +
                                                                    ptag + " = " + std::to_string(prev_rf));
        }
        plan.rf_per_stage.push_back(d * (k - 1) + prev_rf);
    }
    return plan;
}

inline DecompositionPlan validate_plan(std::initializer_list<KernelSpec> stages) {
    return validate_plan(std::span<const KernelSpec>(stages.begin(), stages.size()));
}

inline DecompositionPlan validate_plan(const std::vector<KernelSpec>& stages) {
    return validate_plan(std::span<const KernelSpec>(stages));
}

/// Parses "(5,1)->(7,3)" (whitespace allowed) and validates the result.
inline DecompositionPlan parse_plan(const std::string& text) {
    static const std::regex stage(R"(\s*\(\s*(\d{1,6})\s*,\s*(\d{1,6})\s*\)\s*)");
    std::vector<KernelSpec> stages;
    std::size_t pos = 0;
    while (true) {
        std::smatch m;
        const std::string rest = text.substr(pos);
        if (!std::regex_search(rest, m, stage, std::regex_constants::match_continuous))
            throw std::invalid_argument("cannot parse plan '" + text + "': expected (k,d) at offset " +
                                        std::to_string(pos));
        stages.push_back({std::stoul(m[1].str()), std::stoul(m[2].str())});
        pos += static_cast<std::size_t>(m.length(0));
        if (pos == text.size()) break;
        if (text.compare(pos, 2, "->") != 0)
            throw std::invalid_argument("cannot parse plan '" + text + "': expected -> at offset " + std::to_string(pos));
        pos += 2;
    }
    return validate_plan(stages);
}

/// The decomposition used by the released backbones.
inline DecompositionPlan default_plan() { return validate_plan({{5, 1}, {7, 3}}); }

}  // namespace lsk
