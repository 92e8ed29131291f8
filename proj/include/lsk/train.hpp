#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsk/backbone.hpp"

namespace lsk {

class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(std::size_t step)
        : std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step)), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// What gets trained in front of the linear head.
///   head:     head only, features from a frozen LSK module (convex)
///   module:   LSK module + head
///   backbone: tiny four-stage backbone (batch-statistic norms) + head
enum class ToyScope { head, module, backbone };

inline ToyScope parse_toy_scope(const std::string& s) {
    if (s == "head") return ToyScope::head;
    if (s == "module") return ToyScope::module;
    if (s == "backbone") return ToyScope::backbone;
    throw std::invalid_argument("unknown training scope '" + s + "'");
}

struct ToyTrainConfig {
    ToyScope scope = ToyScope::module;
    std::size_t samples = 8;
    std::size_t steps = 500;
    double lr = 0.3;
    std::uint64_t seed = 0;
    std::size_t channels = 4;  // module scope
    std::size_t size = 8;      // module scope spatial size
};

/// Inputs in [-1, 1], targets in [-1, 1].
template <typename T>
struct ToyDataset {
    Tensor4<T> x;
    std::vector<T> y;
};

template <typename T>
ToyDataset<T> make_toy_dataset(const ToyTrainConfig& cfg, std::size_t channels, std::size_t size, std::mt19937_64& rng) {
    require(cfg.samples >= 1 && cfg.samples <= 16, "toy dataset holds 1 to 16 samples");
    ToyDataset<T> d{random_tensor<T>({cfg.samples, channels, size, size}, rng), std::vector<T>(cfg.samples)};
    fill_uniform(std::span<T>(d.y), -1.0, 1.0, rng);
    return d;
}

inline BackboneConfig toy_backbone_config() {
    BackboneConfig c;
    c.name = "toy";
    c.channels = {4, 4, 8, 8};
    c.depths = {1, 1, 1, 1};
    c.ffn_ratios = {2, 2, 2, 2};
    c.plan = validate_plan({{3, 1}, {3, 2}});
    c.selection_kernel = 3;
    c.layer_scale_init = 0.1;
    return c;
}

/// pred[n] = w . gap(f)[n] + b
template <typename T>
struct LinearHead {
    Vec<T> w;
    T b = T(0);
};

template <typename T>
struct ToyTrainResult {
    std::vector<double> losses;  // loss before each step, then the final loss
    double final_loss() const { return losses.back(); }
};

namespace detail {

template <typename T>
std::vector<T> head_forward(const Tensor4<T>& pooled, const LinearHead<T>& h) {
    std::vector<T> pred(pooled.n(), h.b);
    for (std::size_t n = 0; n < pooled.n(); ++n)
        for (std::size_t c = 0; c < pooled.c(); ++c) pred[n] += h.w[c] * pooled(n, c, 0, 0);
    return pred;
}

template <typename T>
double mse(const std::vector<T>& pred, const std::vector<T>& y) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (double(pred[i]) - double(y[i])) * (double(pred[i]) - double(y[i]));
    return s / static_cast<double>(y.size());
}

// Updates the head in place and returns the gradient w.r.t. pooled features.
template <typename T>
Tensor4<T> head_step(const Tensor4<T>& pooled, const std::vector<T>& pred, const std::vector<T>& y, LinearHead<T>& h,
                     T lr) {
    Tensor4<T> g_pooled(pooled.shape());
    Vec<T> gw(h.w.size(), T(0));
    T gb = T(0);
    const T scale = T(2) / static_cast<T>(y.size());
    for (std::size_t n = 0; n < pooled.n(); ++n) {
        const T d = scale * (pred[n] - y[n]);
        gb += d;
        for (std::size_t c = 0; c < pooled.c(); ++c) {
            gw[c] += d * pooled(n, c, 0, 0);
            g_pooled(n, c, 0, 0) = d * h.w[c];
        }
    }
    for (std::size_t c = 0; c < h.w.size(); ++c) h.w[c] -= lr * gw[c];
    h.b -= lr * gb;
    return g_pooled;
}

}  // namespace detail

/// Plain gradient descent on MSE. Throws TrainingDiverged on a non-finite loss.
template <typename T = float>
ToyTrainResult<T> toy_train(const ToyTrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    const T lr = static_cast<T>(cfg.lr);
    ToyTrainResult<T> result;
    auto record = [&](double loss, std::size_t step) {
        if (!std::isfinite(loss)) throw TrainingDiverged(step);
        result.losses.push_back(loss);
    };

    if (cfg.scope == ToyScope::backbone) {
        const BackboneConfig bc = toy_backbone_config();
        auto params = init_backbone<T>(bc, rng);
        const auto data = make_toy_dataset<T>(cfg, 3, 32, rng);
        LinearHead<T> head{Vec<T>(bc.channels[3]), T(0)};
        fill_fan_in_uniform(std::span<T>(head.w), head.w.size(), rng);
        for (std::size_t step = 0;; ++step) {
            BackboneTape<T> tape;
            auto out = backbone_forward(data.x, params, NormMode::batch, &tape);
            const Tensor4<T> pooled = global_avg_pool(out.features[3]);
            const auto pred = detail::head_forward(pooled, head);
            record(detail::mse(pred, data.y), step);
            if (step == cfg.steps) break;
            const Tensor4<T> g_pooled = detail::head_step(pooled, pred, data.y, head, lr);
            std::array<Tensor4<T>, 4> g;
            g[3] = global_avg_pool_backward(g_pooled, out.features[3].shape());
            auto grads = backbone_backward(g, tape, params);
            apply_gradient_step(params, grads.params, lr);
        }
        return result;
    }

    LskModuleConfig mc = LskModuleConfig::with_channels(cfg.channels, validate_plan({{3, 1}, {3, 2}}));
    mc.selection_kernel = 3;
    auto params = init_lsk_module<T>(mc, rng);
    const auto data = make_toy_dataset<T>(cfg, cfg.channels, cfg.size, rng);
    LinearHead<T> head{Vec<T>(cfg.channels), T(0)};
    fill_fan_in_uniform(std::span<T>(head.w), head.w.size(), rng);
    for (std::size_t step = 0;; ++step) {
        LskTape<T> tape;
        auto out = lsk_forward(data.x, params, cfg.scope == ToyScope::module ? &tape : nullptr);
        const Tensor4<T> pooled = global_avg_pool(out.y);
        const auto pred = detail::head_forward(pooled, head);
        record(detail::mse(pred, data.y), step);
        if (step == cfg.steps) break;
        const Tensor4<T> g_pooled = detail::head_step(pooled, pred, data.y, head, lr);
        if (cfg.scope == ToyScope::module) {
            auto grads = lsk_backward(global_avg_pool_backward(g_pooled, out.y.shape()), tape, params);
            apply_gradient_step(params, grads.params, lr);
        }
    }
    return result;
}

}  // namespace lsk
