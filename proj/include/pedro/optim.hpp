#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pedro/tensor.hpp"

namespace pedro {

// AdamW with bias correction and decoupled weight decay. Gradients are read,
// never modified; zeroing between steps is the caller's job (or zero_grad()).
template <typename S>
class AdamW {
  public:
    AdamW(std::vector<Tensor<S>> params, S lr, S beta1 = static_cast<S>(0.9),
          S beta2 = static_cast<S>(0.999), S eps = static_cast<S>(1e-8),
          S weight_decay = S(0))
        : params_(std::move(params)),
          lr_(lr),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps),
          weight_decay_(weight_decay) {
        if (params_.empty()) throw std::invalid_argument("AdamW: no parameters");
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), S(0));
            v_[i].assign(params_[i].numel(), S(0));
        }
    }

    void set_lr(S lr) { lr_ = lr; }
    S lr() const { return lr_; }
    long step_count() const { return t_; }
    const std::vector<Tensor<S>>& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
        const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad())
                throw std::runtime_error("AdamW: parameter has no gradient; run backward first");
            auto& val = p.data();
            auto& g = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < val.size(); ++k) {
                m[k] = beta1_ * m[k] + (S(1) - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (S(1) - beta2_) * g[k] * g[k];
                const S mhat = m[k] / bc1;
                const S vhat = v[k] / bc2;
                val[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * val[k]);
            }
        }
    }

  private:
    std::vector<Tensor<S>> params_;
    std::vector<std::vector<S>> m_;
    std::vector<std::vector<S>> v_;
    S lr_, beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
};

}  // namespace pedro
