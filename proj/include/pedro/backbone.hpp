#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pedro/adapter.hpp"
#include "pedro/config.hpp"
#include "pedro/rng.hpp"
#include "pedro/tensor.hpp"

namespace pedro {

template <typename S>
struct TransformerLayer {
    Tensor<S> w_q, w_k, w_v, w_o;    // (d_model, d_model)
    Tensor<S> w_g, w_u;              // (d_model, d_ffn)
    Tensor<S> w_d;                   // (d_ffn, d_model)
    Tensor<S> norm_attn, norm_ffn;   // (d_model) rms gains
};

// Append-only per-request cache of post-hook K and V rows.
template <typename S>
struct KVCache {
    int n_layers = 0;
    int d_model = 0;
    int max_len = 0;
    int len = 0;  // tokens processed so far
    std::vector<std::vector<S>> k, v;  // per layer, row-major (len, d_model)
};

// Decoder-only transformer: pre-RMS-norm blocks, rotary positions on Q/K,
// gated FFN (gelu(G) ⊙ U)·W_D, causal attention scaled by 1/sqrt(d_model).
// Weights are frozen by default; adapters attach through the hook interface.
template <typename S>
class Backbone {
  public:
    Backbone(const ModelConfig& cfg, unsigned long long seed) : cfg_(cfg) {
        cfg_.validate();
        GaussianRng rng(seed);
        const S w_std = static_cast<S>(0.02);
        const int d = cfg_.d_model, f = cfg_.d_ffn, v = cfg_.vocab_size;
        tok_emb_ = Tensor<S>::randn({v, d}, rng, w_std);
        layers_.reserve(static_cast<std::size_t>(cfg_.n_layers));
        for (int i = 0; i < cfg_.n_layers; ++i) {
            TransformerLayer<S> L;
            L.w_q = Tensor<S>::randn({d, d}, rng, w_std);
            L.w_k = Tensor<S>::randn({d, d}, rng, w_std);
            L.w_v = Tensor<S>::randn({d, d}, rng, w_std);
            L.w_o = Tensor<S>::randn({d, d}, rng, w_std);
            L.norm_attn = Tensor<S>::ones({d});
            L.w_g = Tensor<S>::randn({d, f}, rng, w_std);
            L.w_u = Tensor<S>::randn({d, f}, rng, w_std);
            L.w_d = Tensor<S>::randn({f, d}, rng, w_std);
            L.norm_ffn = Tensor<S>::ones({d});
            layers_.push_back(std::move(L));
        }
        final_norm_ = Tensor<S>::ones({d});
        lm_head_ = Tensor<S>::randn({d, v}, rng, w_std);
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<TransformerLayer<S>>& layers() { return layers_; }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        out.emplace_back("backbone.tok_emb", tok_emb_);
        for (int i = 0; i < cfg_.n_layers; ++i) {
            const std::string p = "backbone.layers." + std::to_string(i) + ".";
            auto& L = layers_[static_cast<std::size_t>(i)];
            out.emplace_back(p + "w_q", L.w_q);
            out.emplace_back(p + "w_k", L.w_k);
            out.emplace_back(p + "w_v", L.w_v);
            out.emplace_back(p + "w_o", L.w_o);
            out.emplace_back(p + "norm_attn", L.norm_attn);
            out.emplace_back(p + "w_g", L.w_g);
            out.emplace_back(p + "w_u", L.w_u);
            out.emplace_back(p + "w_d", L.w_d);
            out.emplace_back(p + "norm_ffn", L.norm_ffn);
        }
        out.emplace_back("backbone.final_norm", final_norm_);
        out.emplace_back("backbone.lm_head", lm_head_);
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& [name, t] : named_params()) t.set_requires_grad(trainable);
    }

    std::size_t param_bytes() {
        std::size_t n = 0;
        for (auto& [name, t] : named_params()) n += t.numel() * sizeof(S);
        return n;
    }

    // Teacher-forced forward over a full token sequence. `prompt_len` marks
    // the prefix whose hidden states feed prompt-conditioned adapters.
    Tensor<S> forward(const std::vector<int>& tokens, int prompt_len, Adapter<S>* adapter) {
        const int l = static_cast<int>(tokens.size());
        if (l < 1) throw std::invalid_argument("forward: empty token sequence");
        if (l > cfg_.max_seq_len)
            throw std::invalid_argument("forward: sequence length " + std::to_string(l) +
                                        " exceeds max_seq_len " +
                                        std::to_string(cfg_.max_seq_len));
        if (prompt_len < 1 || prompt_len > l)
            throw std::invalid_argument("forward: prompt_len out of range");
        if (adapter) adapter->begin_request(prompt_len);
        Tensor<S> x = embedding(tok_emb_, tokens);
        for (int i = 0; i < cfg_.n_layers; ++i) {
            auto& L = layers_[static_cast<std::size_t>(i)];
            Tensor<S> hn = rms_norm(x, L.norm_attn, norm_eps());
            if (adapter)
                adapter->on_layer_input(i, prompt_len == l ? hn
                                                           : slice_rows(hn, 0, prompt_len));
            x = add(x, attention_block(hn, i, adapter, 0, nullptr));
            Tensor<S> fn = rms_norm(x, L.norm_ffn, norm_eps());
            x = add(x, ffn_block(fn, i, adapter));
        }
        x = rms_norm(x, final_norm_, norm_eps());
        return matmul(x, lm_head_);
    }

    KVCache<S> make_cache() const {
        KVCache<S> c;
        c.n_layers = cfg_.n_layers;
        c.d_model = cfg_.d_model;
        c.max_len = cfg_.max_seq_len;
        c.k.resize(static_cast<std::size_t>(cfg_.n_layers));
        c.v.resize(static_cast<std::size_t>(cfg_.n_layers));
        return c;
    }

    // Prompt pass: fills the cache, builds adapter state, returns the logits
    // row for the last prompt position.
    Tensor<S> prefill(const std::vector<int>& prompt, KVCache<S>& cache, Adapter<S>* adapter) {
        NoGradGuard ng;
        const int l = static_cast<int>(prompt.size());
        if (l < 1) throw std::invalid_argument("prefill: empty prompt");
        if (cache.len != 0) throw std::invalid_argument("prefill: cache already filled");
        if (l > cfg_.max_seq_len) throw std::invalid_argument("prefill: sequence overflow");
        if (adapter) {
            adapter->begin_request(l);
            adapter->set_phase(Phase::prefill);
        }
        Tensor<S> x = embedding(tok_emb_, prompt);
        for (int i = 0; i < cfg_.n_layers; ++i) {
            auto& L = layers_[static_cast<std::size_t>(i)];
            Tensor<S> hn = rms_norm(x, L.norm_attn, norm_eps());
            if (adapter) adapter->on_layer_input(i, hn);
            x = add(x, attention_block(hn, i, adapter, 0, &cache));
            Tensor<S> fn = rms_norm(x, L.norm_ffn, norm_eps());
            x = add(x, ffn_block(fn, i, adapter));
        }
        cache.len = l;
        Tensor<S> last = as_row(row(x, l - 1));
        last = rms_norm(last, final_norm_, norm_eps());
        Tensor<S> logits = row(matmul(last, lm_head_), 0);
        if (adapter) adapter->set_phase(Phase::train);
        return logits;
    }

    // One generation step: processes `token` at position cache.len, appends
    // its K/V rows, returns next-token logits.
    Tensor<S> decode_step(int token, KVCache<S>& cache, Adapter<S>* adapter) {
        NoGradGuard ng;
        if (cache.len < 1) throw std::invalid_argument("decode_step: prefill the cache first");
        if (cache.len + 1 > cfg_.max_seq_len)
            throw std::invalid_argument("decode_step: sequence overflow");
        if (adapter) adapter->set_phase(Phase::decode);
        const int pos = cache.len;
        Tensor<S> x = embedding(tok_emb_, {token});
        for (int i = 0; i < cfg_.n_layers; ++i) {
            auto& L = layers_[static_cast<std::size_t>(i)];
            Tensor<S> hn = rms_norm(x, L.norm_attn, norm_eps());
            x = add(x, attention_block(hn, i, adapter, pos, &cache));
            Tensor<S> fn = rms_norm(x, L.norm_ffn, norm_eps());
            x = add(x, ffn_block(fn, i, adapter));
        }
        cache.len = pos + 1;
        x = rms_norm(x, final_norm_, norm_eps());
        Tensor<S> logits = row(matmul(x, lm_head_), 0);
        if (adapter) adapter->set_phase(Phase::train);
        return logits;
    }

    // Generates exactly max_new tokens. beam == 1 is greedy argmax with ties
    // to the lowest token id; beam > 1 keeps the `beam` best prefixes by
    // summed token log-probability.
    std::vector<int> generate(const std::vector<int>& prompt, int max_new, int beam,
                              Adapter<S>* adapter) {
        if (beam < 1) throw std::invalid_argument("generate: beam must be >= 1");
        if (max_new < 1) throw std::invalid_argument("generate: max_new must be >= 1");
        if (static_cast<int>(prompt.size()) + max_new > cfg_.max_seq_len)
            throw std::invalid_argument("generate: prompt plus generation exceeds max_seq_len");
        NoGradGuard ng;
        KVCache<S> cache = make_cache();
        Tensor<S> logits = prefill(prompt, cache, adapter);

        if (beam == 1) {
            std::vector<int> out;
            int tok = argmax_index(logits);
            out.push_back(tok);
            for (int s = 1; s < max_new; ++s) {
                logits = decode_step(tok, cache, adapter);
                tok = argmax_index(logits);
                out.push_back(tok);
            }
            return out;
        }

        struct BeamState {
            KVCache<S> cache;
            std::vector<int> toks;
            double score;
        };
        const int width = std::min(beam, cfg_.vocab_size);
        auto lp0 = log_softmax_values(logits);
        std::vector<int> order = top_tokens(lp0, width);
        std::vector<BeamState> beams;
        for (int t : order) beams.push_back({cache, {t}, static_cast<double>(lp0[static_cast<std::size_t>(t)])});

        for (int s = 1; s < max_new; ++s) {
            struct Cand {
                int parent;
                int tok;
                double score;
            };
            std::vector<Cand> cands;
            for (int p = 0; p < static_cast<int>(beams.size()); ++p) {
                auto step_logits =
                    decode_step(beams[static_cast<std::size_t>(p)].toks.back(),
                                beams[static_cast<std::size_t>(p)].cache, adapter);
                auto lp = log_softmax_values(step_logits);
                for (int t : top_tokens(lp, width))
                    cands.push_back({p, t,
                                     beams[static_cast<std::size_t>(p)].score +
                                         static_cast<double>(lp[static_cast<std::size_t>(t)])});
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.parent != b.parent) return a.parent < b.parent;
                return a.tok < b.tok;
            });
            std::vector<BeamState> next;
            for (int c = 0; c < width && c < static_cast<int>(cands.size()); ++c) {
                const Cand& cd = cands[static_cast<std::size_t>(c)];
                BeamState bs;
                bs.cache = beams[static_cast<std::size_t>(cd.parent)].cache;
                bs.toks = beams[static_cast<std::size_t>(cd.parent)].toks;
                bs.toks.push_back(cd.tok);
                bs.score = cd.score;
                next.push_back(std::move(bs));
            }
            beams = std::move(next);
        }
        return beams.front().toks;  // sorted best-first at every step
    }

    static constexpr S norm_eps() { return static_cast<S>(1e-5); }

    std::size_t cache_bytes(int seq_len) const {
        return static_cast<std::size_t>(cfg_.n_layers) * 2u *
               static_cast<std::size_t>(seq_len) * static_cast<std::size_t>(cfg_.d_model) *
               sizeof(S);
    }

  private:
    static std::vector<int> top_tokens(const std::vector<S>& logp, int k) {
        std::vector<int> idx(logp.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (logp[static_cast<std::size_t>(a)] != logp[static_cast<std::size_t>(b)])
                return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(b)];
            return a < b;
        });
        idx.resize(static_cast<std::size_t>(std::min<std::size_t>(idx.size(),
                                                                  static_cast<std::size_t>(k))));
        return idx;
    }

    // Shared attention math. Uncached path (cache == nullptr): x covers the
    // whole sequence, first_pos == 0. Cached path: x is the new suffix; rows
    // are appended to the cache and scores run over every cached position.
    Tensor<S> attention_block(const Tensor<S>& x, int layer_idx, Adapter<S>* adapter,
                              int first_pos, KVCache<S>* cache) {
        auto& L = layers_[static_cast<std::size_t>(layer_idx)];
        const int d = cfg_.d_model, H = cfg_.n_heads, dh = cfg_.head_dim();
        Tensor<S> q = adapter ? adapter->project_q(layer_idx, x, L.w_q) : matmul(x, L.w_q);
        Tensor<S> k = matmul(x, L.w_k);
        Tensor<S> v = adapter ? adapter->project_v(layer_idx, x, L.w_v) : matmul(x, L.w_v);
        if (adapter) {
            q = adapter->modify_q_proj(layer_idx, q);
            k = adapter->modify_k_proj(layer_idx, k);
        }
        q = rotary(q, H, first_pos);
        k = rotary(k, H, first_pos);
        if (adapter) {
            q = adapter->modify_q_rot(layer_idx, q);
            k = adapter->modify_k_rot(layer_idx, k);
            v = adapter->modify_v(layer_idx, v);
        }

        Tensor<S> k_all = k, v_all = v;
        if (cache) {
            auto& ck = cache->k[static_cast<std::size_t>(layer_idx)];
            auto& cv = cache->v[static_cast<std::size_t>(layer_idx)];
            ck.insert(ck.end(), k.data().begin(), k.data().end());
            cv.insert(cv.end(), v.data().begin(), v.data().end());
            const int total = static_cast<int>(ck.size()) / d;
            k_all = Tensor<S>::from_data({total, d}, ck);
            v_all = Tensor<S>::from_data({total, d}, cv);
        }

        const S inv_scale = S(1) / std::sqrt(static_cast<S>(d));
        std::vector<Tensor<S>> heads;
        heads.reserve(static_cast<std::size_t>(H));
        for (int h = 0; h < H; ++h) {
            Tensor<S> qh = slice_cols(q, h * dh, dh);
            Tensor<S> kh = slice_cols(k_all, h * dh, dh);
            Tensor<S> vh = slice_cols(v_all, h * dh, dh);
            Tensor<S> scores = scale(matmul_nt(qh, kh), inv_scale);
            Tensor<S> probs = softmax_causal_rows(scores, first_pos);
            heads.push_back(matmul(probs, vh));
        }
        return matmul(concat_cols(heads), L.w_o);
    }

    Tensor<S> ffn_block(const Tensor<S>& x, int layer_idx, Adapter<S>* adapter) {
        auto& L = layers_[static_cast<std::size_t>(layer_idx)];
        Tensor<S> g = matmul(x, L.w_g);
        Tensor<S> u = matmul(x, L.w_u);
        if (adapter) {
            g = adapter->modify_g(layer_idx, g);
            u = adapter->modify_u(layer_idx, u);
        }
        Tensor<S> inner = mul(gelu(g), u);
        if (adapter) inner = adapter->modify_ffn_inner(layer_idx, inner);
        return matmul(inner, L.w_d);
    }

    ModelConfig cfg_;
    Tensor<S> tok_emb_;
    std::vector<TransformerLayer<S>> layers_;
    Tensor<S> final_norm_;
    Tensor<S> lm_head_;
};

}  // namespace pedro
