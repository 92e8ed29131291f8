#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lsk/tensor.hpp"

namespace lsk {

/// Trainable tensors versus stored statistics (saved, never updated by descent).
enum class SlotKind { parameter, buffer };

template <typename T>
struct ConvParams {
    Tensor4<T> weight;
    Vec<T> bias;

    ConvParams() = default;
    ConvParams(Shape4 weight_shape) : weight(weight_shape), bias(weight_shape.n, T(0)) {}
};

template <typename T>
struct NormParams {
    Vec<T> scale;
    Vec<T> shift;
    Vec<T> mean;
    Vec<T> var;

    NormParams() = default;
    explicit NormParams(std::size_t c) : scale(c, T(1)), shift(c, T(0)), mean(c, T(0)), var(c, T(1)) {}
    std::size_t channels() const { return scale.size(); }
};

inline constexpr double kNormEps = 1e-5;

template <typename T>
std::vector<std::size_t> dims_of(const Tensor4<T>& t) {
    return {t.n(), t.c(), t.h(), t.w()};
}

// Visitors receive (name, shape, span, kind). The span is const when the
// visited object is const.

template <typename Conv, typename Fn>
void visit_conv(Conv& p, const std::string& name, Fn& fn) {
    fn(name + ".weight", dims_of(p.weight), p.weight.span(), SlotKind::parameter);
    fn(name + ".bias", std::vector<std::size_t>{p.bias.size()}, std::span(p.bias), SlotKind::parameter);
}

template <typename Norm, typename Fn>
void visit_norm(Norm& p, const std::string& name, Fn& fn) {
    const std::vector<std::size_t> shape{p.scale.size()};
    fn(name + ".weight", shape, std::span(p.scale), SlotKind::parameter);
    fn(name + ".bias", shape, std::span(p.shift), SlotKind::parameter);
    fn(name + ".running_mean", shape, std::span(p.mean), SlotKind::buffer);
    fn(name + ".running_var", shape, std::span(p.var), SlotKind::buffer);
}

template <typename V, typename Fn>
void visit_vector(V& v, const std::string& name, Fn& fn) {
    fn(name, std::vector<std::size_t>{v.size()}, std::span(v), SlotKind::parameter);
}

/// Number of trainable scalars reachable through visit(params, fn).
template <typename P>
std::size_t count_parameters(const P& params) {
    std::size_t total = 0;
    auto fn = [&](const std::string&, const std::vector<std::size_t>&, auto span, SlotKind kind) {
        if (kind == SlotKind::parameter) total += span.size();
    };
    visit(params, fn);
    return total;
}

/// p -= lr * g over every trainable slot. Both objects must share a layout.
template <typename P, typename T>
void apply_gradient_step(P& params, const P& grads, T lr) {
    std::vector<std::span<const T>> gspans;
    auto collect = [&](const std::string&, const std::vector<std::size_t>&, std::span<const T> s, SlotKind) {
        gspans.push_back(s);
    };
    visit(grads, collect);
    std::size_t i = 0;
    auto step = [&](const std::string& name, const std::vector<std::size_t>&, std::span<T> s, SlotKind kind) {
        const auto g = gspans.at(i++);
        require(g.size() == s.size(), "apply_gradient_step: layout mismatch at " + name);
        if (kind != SlotKind::parameter) return;
        for (std::size_t k = 0; k < s.size(); ++k) s[k] -= lr * g[k];
    };
    visit(params, step);
}

/// Zero-mean uniform fill with bound 1/sqrt(fan_in).
template <typename T>
void fill_fan_in_uniform(std::span<T> values, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : values) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(std::span<T> values, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : values) v = static_cast<T>(dist(rng));
}

template <typename T>
Tensor4<T> random_tensor(Shape4 shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor4<T> t(shape);
    fill_uniform(t.span(), lo, hi, rng);
    return t;
}

/// Weight init: fan-in scaled uniform, zero bias.
template <typename T>
void init_conv(ConvParams<T>& p, std::mt19937_64& rng) {
    fill_fan_in_uniform(p.weight.span(), p.weight.c() * p.weight.h() * p.weight.w(), rng);
    std::fill(p.bias.begin(), p.bias.end(), T(0));
}

}  // namespace lsk
