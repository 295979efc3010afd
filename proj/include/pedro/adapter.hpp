#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pedro/tensor.hpp"

namespace pedro {

enum class Phase { train, prefill, decode };

// Hook surface the backbone exposes to fine-tuning methods. Defaults leave
// every representation untouched, so a backbone driven through a default
// adapter is bit-identical to one driven with no adapter at all.
//
// Hook order inside one attention block:
//   project_q/project_v (replaceable projections)
//   modify_q_proj/modify_k_proj  (post-projection, pre-rotary; bias-style)
//   rotary
//   modify_q_rot/modify_k_rot    (post-rotary, per-channel scaling)
//   modify_v                     (value rows as cached)
// and inside one FFN block:
//   modify_g (gate pre-activation), modify_u (up projection),
//   modify_ffn_inner (gated product before the down projection).
template <typename S>
class Adapter {
  public:
    virtual ~Adapter() = default;
    virtual std::string kind() const = 0;

    // Called once per request before prefill (and per training forward);
    // prompt-conditioned adapters rebuild their per-request state.
    virtual void begin_request(int prompt_len) { (void)prompt_len; }

    void set_phase(Phase p) { phase_ = p; }
    Phase phase() const { return phase_; }

    // Invocation counters for the bench harness; only adapter-specific work
    // counts (vector-generator runs, low-rank paths, elementwise mods).
    long prefill_invocations = 0;
    long decode_invocations = 0;
    void reset_counters() {
        prefill_invocations = 0;
        decode_invocations = 0;
    }

    // All trainable tensors under their checkpoint names.
    virtual std::vector<std::pair<std::string, Tensor<S>>> named_params() = 0;

    // Trainable activation coefficients, optimized on validation batches when
    // bi-level training is on; empty for adapters without learnable activations.
    virtual std::vector<Tensor<S>> activation_params() { return {}; }

    // Every trainable tensor not in activation_params().
    std::vector<Tensor<S>> main_params() {
        auto acts = activation_params();
        std::vector<Tensor<S>> out;
        for (auto& [name, t] : named_params()) {
            bool is_act = false;
            for (auto& a : acts)
                if (a.impl() == t.impl()) is_act = true;
            if (!is_act) out.push_back(t);
        }
        return out;
    }

    std::size_t param_bytes() {
        std::size_t n = 0;
        for (auto& [name, t] : named_params()) n += t.numel() * sizeof(S);
        return n;
    }

    // Per-request state bytes (PEDRO's cached adjustment vectors).
    virtual std::size_t state_bytes() const { return 0; }

    // Extra multiply-accumulates the adapter adds per generated token on the
    // decode path, beyond the frozen backbone's own work.
    virtual long long extra_macs_per_token() const { return 0; }

    // Layer input tap: the layer's post-norm attention input over the prompt
    // rows, available during training forwards and prefill.
    virtual void on_layer_input(int layer, const Tensor<S>& h_prompt) {
        (void)layer;
        (void)h_prompt;
    }

    virtual Tensor<S> project_q(int layer, const Tensor<S>& x, const Tensor<S>& w) {
        (void)layer;
        return matmul(x, w);
    }
    virtual Tensor<S> project_v(int layer, const Tensor<S>& x, const Tensor<S>& w) {
        (void)layer;
        return matmul(x, w);
    }

    virtual Tensor<S> modify_q_proj(int layer, Tensor<S> q) { (void)layer; return q; }
    virtual Tensor<S> modify_k_proj(int layer, Tensor<S> k) { (void)layer; return k; }
    virtual Tensor<S> modify_q_rot(int layer, Tensor<S> q) { (void)layer; return q; }
    virtual Tensor<S> modify_k_rot(int layer, Tensor<S> k) { (void)layer; return k; }
    virtual Tensor<S> modify_v(int layer, Tensor<S> v) { (void)layer; return v; }
    virtual Tensor<S> modify_g(int layer, Tensor<S> g) { (void)layer; return g; }
    virtual Tensor<S> modify_u(int layer, Tensor<S> u) { (void)layer; return u; }
    virtual Tensor<S> modify_ffn_inner(int layer, Tensor<S> h) { (void)layer; return h; }

  protected:
    void count_invocation() {
        if (phase_ == Phase::prefill)
            ++prefill_invocations;
        else if (phase_ == Phase::decode)
            ++decode_invocations;
    }

  private:
    Phase phase_ = Phase::train;
};

}  // namespace pedro
