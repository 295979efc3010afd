#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pedro/adapter.hpp"
#include "pedro/config.hpp"
#include "pedro/rng.hpp"
#include "pedro/tensor.hpp"

namespace pedro {

// Low-rank residual branches on the Q and V projections, kept unmerged so
// every forward pays the x·A·B detour. B starts at zero, so the adapter is
// output-identical to the frozen backbone at initialization.
template <typename S>
class LoraAdapter : public Adapter<S> {
  public:
    LoraAdapter(const ModelConfig& m, const LoraConfig& c, unsigned long long seed)
        : mcfg_(m), cfg_(c) {
        m.validate();
        if (c.rank < 1) throw std::invalid_argument("lora rank must be >= 1");
        GaussianRng rng(seed);
        const int d = m.d_model;
        layers_.reserve(static_cast<std::size_t>(m.n_layers));
        for (int i = 0; i < m.n_layers; ++i) {
            Layer l;
            l.q_a = Tensor<S>::randn({d, c.rank}, rng, static_cast<S>(0.02))
                        .set_requires_grad(true);
            l.q_b = Tensor<S>::zeros({c.rank, d}).set_requires_grad(true);
            l.v_a = Tensor<S>::randn({d, c.rank}, rng, static_cast<S>(0.02))
                        .set_requires_grad(true);
            l.v_b = Tensor<S>::zeros({c.rank, d}).set_requires_grad(true);
            layers_.push_back(std::move(l));
        }
    }

    std::string kind() const override { return "lora"; }

    Tensor<S> project_q(int layer, const Tensor<S>& x, const Tensor<S>& w) override {
        this->count_invocation();
        auto& l = layers_[static_cast<std::size_t>(layer)];
        return add(matmul(x, w), scale(matmul(matmul(x, l.q_a), l.q_b), scaling()));
    }

    Tensor<S> project_v(int layer, const Tensor<S>& x, const Tensor<S>& w) override {
        this->count_invocation();
        auto& l = layers_[static_cast<std::size_t>(layer)];
        return add(matmul(x, w), scale(matmul(matmul(x, l.v_a), l.v_b), scaling()));
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() override {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (int i = 0; i < mcfg_.n_layers; ++i) {
            const std::string p = "lora." + std::to_string(i) + ".";
            auto& l = layers_[static_cast<std::size_t>(i)];
            out.emplace_back(p + "q.a", l.q_a);
            out.emplace_back(p + "q.b", l.q_b);
            out.emplace_back(p + "v.a", l.v_a);
            out.emplace_back(p + "v.b", l.v_b);
        }
        return out;
    }

    // Low-rank detour cost: rank·(d_in + d_out) multiply-accumulates per
    // token per hooked projection.
    long long extra_macs_per_token() const override {
        return static_cast<long long>(mcfg_.n_layers) * 2 * cfg_.rank *
               (static_cast<long long>(mcfg_.d_model) + mcfg_.d_model);
    }

    S scaling() const {
        return static_cast<S>(cfg_.effective_alpha()) / static_cast<S>(cfg_.rank);
    }

  private:
    struct Layer {
        Tensor<S> q_a, q_b, v_a, v_b;
    };
    ModelConfig mcfg_;
    LoraConfig cfg_;
    std::vector<Layer> layers_;
};

inline long long count_lora_params(const ModelConfig& m, const LoraConfig& c) {
    if (c.rank < 1) throw std::invalid_argument("lora rank must be >= 1");
    return static_cast<long long>(m.n_layers) * 2 *
           (static_cast<long long>(m.d_model) * c.rank +
            static_cast<long long>(c.rank) * m.d_model);
}

// Learned elementwise rescaling of K, V, and the gated FFN product. The
// vectors start at one, so initialization leaves the backbone untouched;
// unlike the prompt-conditioned adapter the scales are input-independent.
template <typename S>
class Ia3Adapter : public Adapter<S> {
  public:
    explicit Ia3Adapter(const ModelConfig& m) : mcfg_(m) {
        m.validate();
        layers_.reserve(static_cast<std::size_t>(m.n_layers));
        for (int i = 0; i < m.n_layers; ++i) {
            Layer l;
            l.k = Tensor<S>::ones({m.d_model}).set_requires_grad(true);
            l.v = Tensor<S>::ones({m.d_model}).set_requires_grad(true);
            l.ff = Tensor<S>::ones({m.d_ffn}).set_requires_grad(true);
            layers_.push_back(std::move(l));
        }
    }

    std::string kind() const override { return "ia3"; }

    Tensor<S> modify_k_proj(int layer, Tensor<S> k) override {
        this->count_invocation();
        return scale_columns(k, layers_[static_cast<std::size_t>(layer)].k);
    }
    Tensor<S> modify_v(int layer, Tensor<S> v) override {
        this->count_invocation();
        return scale_columns(v, layers_[static_cast<std::size_t>(layer)].v);
    }
    Tensor<S> modify_ffn_inner(int layer, Tensor<S> h) override {
        this->count_invocation();
        return scale_columns(h, layers_[static_cast<std::size_t>(layer)].ff);
    }

    // One multiply per rescaled coordinate: K, V, and the FFN inner product.
    long long extra_macs_per_token() const override {
        return static_cast<long long>(mcfg_.n_layers) *
               (2LL * mcfg_.d_model + mcfg_.d_ffn);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() override {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (int i = 0; i < mcfg_.n_layers; ++i) {
            const std::string p = "ia3." + std::to_string(i) + ".";
            auto& l = layers_[static_cast<std::size_t>(i)];
            out.emplace_back(p + "k", l.k);
            out.emplace_back(p + "v", l.v);
            out.emplace_back(p + "ff", l.ff);
        }
        return out;
    }

  private:
    struct Layer {
        Tensor<S> k, v, ff;
    };
    ModelConfig mcfg_;
    std::vector<Layer> layers_;
};

inline long long count_ia3_params(const ModelConfig& m) {
    return static_cast<long long>(m.n_layers) * (2LL * m.d_model + m.d_ffn);
}

// Additive bias tuning on the Q, K, V projections and the gated FFN product.
// All biases start at zero.
template <typename S>
class BitfitAdapter : public Adapter<S> {
  public:
    explicit BitfitAdapter(const ModelConfig& m) : mcfg_(m) {
        m.validate();
        layers_.reserve(static_cast<std::size_t>(m.n_layers));
        for (int i = 0; i < m.n_layers; ++i) {
            Layer l;
            l.q = Tensor<S>::zeros({m.d_model}).set_requires_grad(true);
            l.k = Tensor<S>::zeros({m.d_model}).set_requires_grad(true);
            l.v = Tensor<S>::zeros({m.d_model}).set_requires_grad(true);
            l.ff = Tensor<S>::zeros({m.d_ffn}).set_requires_grad(true);
            layers_.push_back(std::move(l));
        }
    }

    std::string kind() const override { return "bitfit"; }

    Tensor<S> modify_q_proj(int layer, Tensor<S> q) override {
        this->count_invocation();
        return add_columns(q, layers_[static_cast<std::size_t>(layer)].q);
    }
    Tensor<S> modify_k_proj(int layer, Tensor<S> k) override {
        this->count_invocation();
        return add_columns(k, layers_[static_cast<std::size_t>(layer)].k);
    }
    Tensor<S> modify_v(int layer, Tensor<S> v) override {
        this->count_invocation();
        return add_columns(v, layers_[static_cast<std::size_t>(layer)].v);
    }
    Tensor<S> modify_ffn_inner(int layer, Tensor<S> h) override {
        this->count_invocation();
        return add_columns(h, layers_[static_cast<std::size_t>(layer)].ff);
    }

    // Bias adds, counted one op per adjusted coordinate.
    long long extra_macs_per_token() const override {
        return static_cast<long long>(mcfg_.n_layers) * (3LL * mcfg_.d_model + mcfg_.d_ffn);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() override {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (int i = 0; i < mcfg_.n_layers; ++i) {
            const std::string p = "bitfit." + std::to_string(i) + ".";
            auto& l = layers_[static_cast<std::size_t>(i)];
            out.emplace_back(p + "q", l.q);
            out.emplace_back(p + "k", l.k);
            out.emplace_back(p + "v", l.v);
            out.emplace_back(p + "ff", l.ff);
        }
        return out;
    }

  private:
    struct Layer {
        Tensor<S> q, k, v, ff;
    };
    ModelConfig mcfg_;
    std::vector<Layer> layers_;
};

inline long long count_bitfit_params(const ModelConfig& m) {
    return static_cast<long long>(m.n_layers) * (3LL * m.d_model + m.d_ffn);
}

}  // namespace pedro
