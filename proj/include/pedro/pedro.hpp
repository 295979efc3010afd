#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pedro/adapter.hpp"
#include "pedro/config.hpp"
#include "pedro/rational.hpp"
#include "pedro/rng.hpp"
#include "pedro/tensor.hpp"

namespace pedro {

// Which representations receive adjustment vectors. Attention targets are
// d_model wide, FFN targets d_ffn wide; split order is fixed: q, k, v, g, u.
struct TargetSet {
    bool q = false, k = false, v = false, g = false, u = false;

    static TargetSet parse(const std::string& s) {
        TargetSet t;
        if (s.empty()) throw std::invalid_argument("target set must be non-empty");
        for (char c : s) {
            switch (c) {
                case 'q': t.q = true; break;
                case 'k': t.k = true; break;
                case 'v': t.v = true; break;
                case 'g': t.g = true; break;
                case 'u': t.u = true; break;
                default:
                    throw std::invalid_argument(std::string("unknown target '") + c + "'");
            }
        }
        return t;
    }

    int attn_count() const { return (q ? 1 : 0) + (k ? 1 : 0) + (v ? 1 : 0); }
    int ffn_count() const { return (g ? 1 : 0) + (u ? 1 : 0); }
};

// Trainable parameters of one per-layer vector generator.
template <typename S>
struct VectorGenerator {
    Tensor<S> w_down;  // (d_model, r)
    Tensor<S> w_up;    // (r, out_dim)
    Tensor<S> b_up;    // (out_dim)
    ActivationUnit<S> act;
};

// Shape arithmetic for the tunable-parameter count; weights-only by default,
// flags add the up-projection bias and rational coefficients.
inline long long count_pedro_params(const ModelConfig& m, const PedroConfig& p,
                                    bool include_bias = false, bool include_act = false) {
    p.validate(m.n_layers);
    const TargetSet t = TargetSet::parse(p.targets);
    const long long out_dim = static_cast<long long>(t.attn_count()) * m.d_model +
                              static_cast<long long>(t.ffn_count()) * m.d_ffn;
    long long per_layer = static_cast<long long>(m.d_model) * p.r +
                          static_cast<long long>(p.r) * out_dim;
    if (include_bias) per_layer += out_dim;
    long long total = per_layer * m.n_layers;
    if (include_act && p.activation == VgActivation::rational)
        total += 12LL * m.n_layers;  // 7 numerator + 5 denominator coefficients
    return total;
}

// Prompt-conditioned adapter: each layer owns a vector generator that pools
// the layer's prompt hidden states, projects through a bottleneck of width r,
// and emits per-channel adjustment vectors. Vectors are produced once per
// request at prefill and reused for every decode step.
template <typename S>
class PedroAdapter : public Adapter<S> {
  public:
    PedroAdapter(const ModelConfig& m, const PedroConfig& p, unsigned long long seed)
        : mcfg_(m), pcfg_(p), targets_(TargetSet::parse(p.targets)) {
        m.validate();
        p.validate(m.n_layers);
        GaussianRng rng(seed);
        const int out = out_dim();
        vgs_.reserve(static_cast<std::size_t>(m.n_layers));
        for (int i = 0; i < m.n_layers; ++i) {
            VectorGenerator<S> vg;
            vg.w_down = Tensor<S>::randn({m.d_model, p.r}, rng, static_cast<S>(0.02))
                            .set_requires_grad(true);
            vg.w_up = Tensor<S>::zeros({p.r, out}).set_requires_grad(true);
            vg.b_up = Tensor<S>::ones({out}).set_requires_grad(true);
            vg.act = make_activation(i);
            vgs_.push_back(std::move(vg));
        }
        state_.resize(static_cast<std::size_t>(m.n_layers));
    }

    std::string kind() const override { return "pedro"; }

    void begin_request(int prompt_len) override {
        if (prompt_len < 1) throw std::invalid_argument("empty prompt");
        for (auto& s : state_) s = LayerVectors{};
    }

    void on_layer_input(int layer, const Tensor<S>& h_prompt) override {
        auto& st = state_.at(static_cast<std::size_t>(layer));
        if (st.ready)
            throw std::logic_error("adjustment vectors already generated for this request");
        if (h_prompt.ndim() != 2 || h_prompt.dim(1) != mcfg_.d_model)
            throw std::invalid_argument("vector generator: bad hidden-state shape");
        auto& vg = vgs_[static_cast<std::size_t>(layer)];
        Tensor<S> pooled = pool(h_prompt);
        Tensor<S> z = matmul(as_row(pooled), vg.w_down);
        Tensor<S> out = row(add_columns(matmul(vg.act(z), vg.w_up), vg.b_up), 0);
        int off = 0;
        const int d = mcfg_.d_model, f = mcfg_.d_ffn;
        if (targets_.q) { st.l_q = slice_vec(out, off, d); off += d; }
        if (targets_.k) { st.l_k = slice_vec(out, off, d); off += d; }
        if (targets_.v) { st.l_v = slice_vec(out, off, d); off += d; }
        if (targets_.g) { st.l_g = slice_vec(out, off, f); off += f; }
        if (targets_.u) { st.l_u = slice_vec(out, off, f); off += f; }
        st.ready = true;
        this->count_invocation();
    }

    Tensor<S> modify_q_rot(int layer, Tensor<S> q) override {
        if (!targets_.q) return q;
        return scale_columns(q, vectors(layer).l_q);
    }
    Tensor<S> modify_k_rot(int layer, Tensor<S> k) override {
        if (!targets_.k) return k;
        return scale_columns(k, vectors(layer).l_k);
    }
    Tensor<S> modify_v(int layer, Tensor<S> v) override {
        if (!targets_.v) return v;
        return scale_columns(v, vectors(layer).l_v);
    }
    Tensor<S> modify_g(int layer, Tensor<S> g) override {
        if (!targets_.g) return g;
        return scale_columns(g, vectors(layer).l_g);
    }
    Tensor<S> modify_u(int layer, Tensor<S> u) override {
        if (!targets_.u) return u;
        return scale_columns(u, vectors(layer).l_u);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() override {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (int i = 0; i < mcfg_.n_layers; ++i) {
            const std::string p = "vg." + std::to_string(i) + ".";
            auto& vg = vgs_[static_cast<std::size_t>(i)];
            out.emplace_back(p + "w_down", vg.w_down);
            out.emplace_back(p + "w_up", vg.w_up);
            out.emplace_back(p + "b_up", vg.b_up);
            if (vg.act.is_rational()) {
                out.emplace_back(p + "act.a", vg.act.rational_ref().a);
                out.emplace_back(p + "act.b", vg.act.rational_ref().b);
            }
        }
        return out;
    }

    std::vector<Tensor<S>> activation_params() override {
        std::vector<Tensor<S>> out;
        for (auto& vg : vgs_)
            for (auto& t : vg.act.trainable()) out.push_back(t);
        return out;
    }

    std::size_t state_bytes() const override {
        std::size_t n = 0;
        for (const auto& s : state_) {
            if (!s.ready) continue;
            for (const Tensor<S>* v : {&s.l_q, &s.l_k, &s.l_v, &s.l_g, &s.l_u})
                if (v->defined()) n += v->numel() * sizeof(S);
        }
        return n;
    }

    // Decode-path cost: one multiply per rescaled coordinate, no matmuls —
    // the generators themselves only run at prefill.
    long long extra_macs_per_token() const override {
        return static_cast<long long>(mcfg_.n_layers) * out_dim();
    }

    // Adjustment vectors for one layer of the current request (tested hooks).
    const Tensor<S>& layer_vector_q(int layer) { return vectors(layer).l_q; }
    const Tensor<S>& layer_vector_v(int layer) { return vectors(layer).l_v; }
    const Tensor<S>& layer_vector_u(int layer) { return vectors(layer).l_u; }

    std::vector<VectorGenerator<S>>& generators() { return vgs_; }
    const TargetSet& target_set() const { return targets_; }

    int out_dim() const {
        return targets_.attn_count() * mcfg_.d_model + targets_.ffn_count() * mcfg_.d_ffn;
    }

  private:
    struct LayerVectors {
        Tensor<S> l_q, l_k, l_v, l_g, l_u;
        bool ready = false;
    };

    ActivationUnit<S> make_activation(int layer) const {
        switch (pcfg_.activation) {
            case VgActivation::rational: {
                const RationalFit& fit = gelu_rational_fit();
                return ActivationUnit<S>::rational(
                    RationalActivation<S>::from_coeffs(fit.a, fit.b));
            }
            case VgActivation::relu: return ActivationUnit<S>::fixed("relu");
            case VgActivation::gelu: return ActivationUnit<S>::fixed("gelu");
            case VgActivation::mixed_relu_gelu:
                return layer < pcfg_.relu_layers ? ActivationUnit<S>::fixed("relu")
                                                 : ActivationUnit<S>::fixed("gelu");
        }
        throw std::logic_error("bad vg activation");
    }

    Tensor<S> pool(const Tensor<S>& h) const {
        const int rows = h.dim(0);
        if (rows < 1) throw std::invalid_argument("pool: empty prompt");
        switch (pcfg_.pooler) {
            case PoolerMode::last_token: return row(h, rows - 1);
            case PoolerMode::mean: return mean_rows(h);
            case PoolerMode::max: return max_rows(h);
        }
        throw std::logic_error("bad pooler mode");
    }

    LayerVectors& vectors(int layer) {
        auto& st = state_.at(static_cast<std::size_t>(layer));
        if (!st.ready)
            throw std::runtime_error(
                "adjustment vectors missing for layer " + std::to_string(layer) +
                "; prefill must run before decode");
        return st;
    }

    ModelConfig mcfg_;
    PedroConfig pcfg_;
    TargetSet targets_;
    std::vector<VectorGenerator<S>> vgs_;
    std::vector<LayerVectors> state_;
};

}  // namespace pedro
