#pragma once

#include <cstddef>

#include "lsk/norm.hpp"
#include "lsk/params.hpp"

namespace lsk {

/// stored: running statistics (inference). batch: statistics of the current batch.
enum class NormMode { stored, batch };

template <typename T>
struct NormTape {
    NormMode mode = NormMode::stored;
    Tensor4<T> x;               // stored mode input
    BatchNormState<T> batch;    // batch mode state
};

template <typename T>
Tensor4<T> norm_forward(const Tensor4<T>& x, const NormParams<T>& p, NormMode mode, NormTape<T>* tape = nullptr) {
    if (mode == NormMode::batch) {
        auto [y, st] = batch_norm_train(x, p.scale, p.shift, T(kNormEps));
        if (tape) {
            tape->mode = mode;
            tape->batch = std::move(st);
        }
        return y;
    }
    if (tape) {
        tape->mode = mode;
        tape->x = x;
    }
    return affine_channel_norm(x, p.scale, p.shift, p.mean, p.var, T(kNormEps));
}

/// All-zero parameter set of width c (gradient accumulator).
template <typename T>
NormParams<T> zero_norm(std::size_t c) {
    NormParams<T> z;
    z.scale.assign(c, T(0));
    z.shift.assign(c, T(0));
    z.mean.assign(c, T(0));
    z.var.assign(c, T(0));
    return z;
}

/// Returns grad_x; scale/shift gradients land in `grads`.
template <typename T>
Tensor4<T> norm_backward(const Tensor4<T>& grad, const NormTape<T>& tape, const NormParams<T>& p, NormParams<T>& grads) {
    NormGrads<T> g = tape.mode == NormMode::batch
                         ? batch_norm_train_backward(grad, tape.batch, p.scale)
                         : affine_channel_norm_backward(grad, tape.x, p.scale, p.mean, p.var, T(kNormEps));
    grads.scale = std::move(g.grad_scale);
    grads.shift = std::move(g.grad_shift);
    return std::move(g.grad_x);
}

}  // namespace lsk
