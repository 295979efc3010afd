#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pedro/tensor.hpp"

namespace pedro {

// Central-difference check of analytic gradients. `loss_fn` must rebuild the
// graph from scratch on every call (parameter values are mutated in place).
// Returns the worst relative error over every element of every parameter.
template <typename S>
S grad_check(const std::function<Tensor<S>()>& loss_fn, std::vector<Tensor<S>> params,
             S step = static_cast<S>(1e-5)) {
    for (auto& p : params) p.zero_grad();
    Tensor<S> loss = loss_fn();
    loss.backward();

    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    S worst = 0;
    NoGradGuard ng;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].data();
        for (std::size_t k = 0; k < vals.size(); ++k) {
            const S orig = vals[k];
            vals[k] = orig + step;
            const S up = loss_fn().item();
            vals[k] = orig - step;
            const S down = loss_fn().item();
            vals[k] = orig;
            const S numeric = (up - down) / (S(2) * step);
            const S a = analytic[pi][k];
            const S denom = std::max({std::abs(a), std::abs(numeric), static_cast<S>(1e-8)});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace pedro
