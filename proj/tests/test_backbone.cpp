#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "pedro/adapter.hpp"
#include "pedro/backbone.hpp"
#include "pedro/config.hpp"
#include "pedro/tensor.hpp"

using namespace pedro;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig m;
    m.vocab_size = 32;
    m.d_model = 64;
    m.n_heads = 2;
    m.d_ffn = 172;
    m.n_layers = 4;
    m.max_seq_len = 512;
    return m;
}

ModelConfig micro_cfg() {
    ModelConfig m;
    m.vocab_size = 11;
    m.d_model = 8;
    m.n_heads = 2;
    m.d_ffn = 12;
    m.n_layers = 2;
    m.max_seq_len = 64;
    return m;
}

// Loop-based reference forward pass, written independently of the tensor ops.
// Plain double matrices as vector<vector<double>>.
using Mat = std::vector<std::vector<double>>;

Mat get_mat(std::map<std::string, Tensor<double>>& params, const std::string& name,
            int rows, int cols) {
    const Tensor<double>& t = params.at(name);
    REQUIRE(t.dim(0) == rows);
    REQUIRE(t.dim(1) == cols);
    Mat m(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(cols)));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m[i][j] = t.at(i, j);
    return m;
}

std::vector<double> get_vec(std::map<std::string, Tensor<double>>& params,
                            const std::string& name, int n) {
    const Tensor<double>& t = params.at(name);
    REQUIRE(t.dim(0) == n);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[i] = t.at(i);
    return v;
}

Mat mat_mul(const Mat& a, const Mat& b) {
    const std::size_t m = a.size(), k = b.size(), n = b[0].size();
    Mat out(m, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a[i][kk] * b[kk][j];
            out[i][j] = acc;
        }
    return out;
}

Mat ref_rms_norm(const Mat& x, const std::vector<double>& gain, double eps) {
    Mat out = x;
    const std::size_t n = x[0].size();
    for (auto& r : out) {
        double ms = 0;
        for (double v : r) ms += v * v;
        ms /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (std::size_t j = 0; j < n; ++j) r[j] = r[j] * inv * gain[j];
    }
    return out;
}

void ref_rotary(Mat& x, int n_heads, int first_pos) {
    const int d = static_cast<int>(x[0].size());
    const int dh = d / n_heads;
    for (int i = 0; i < static_cast<int>(x.size()); ++i) {
        const int pos = first_pos + i;
        for (int h = 0; h < n_heads; ++h)
            for (int p = 0; p < dh / 2; ++p) {
                const double theta =
                    pos * std::pow(10000.0, -2.0 * p / static_cast<double>(dh));
                const double c = std::cos(theta), s = std::sin(theta);
                double& x0 = x[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + 2 * p)];
                double& x1 = x[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + 2 * p + 1)];
                const double a = x0, b = x1;
                x0 = c * a - s * b;
                x1 = s * a + c * b;
            }
    }
}

double ref_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// Full reference forward: embeddings, pre-norm attention + gated FFN blocks
// with residuals, final norm, LM head.
Mat ref_forward(Backbone<double>& model, const std::vector<int>& toks) {
    const ModelConfig& cfg = model.config();
    std::map<std::string, Tensor<double>> params;
    for (auto& [name, t] : model.named_params()) params.emplace(name, t);
    const int d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size;
    const int L = static_cast<int>(toks.size());
    const double eps = 1e-5;

    Mat emb = get_mat(params, "backbone.tok_emb", v, d);
    Mat x(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) x[static_cast<std::size_t>(i)] = emb[static_cast<std::size_t>(toks[static_cast<std::size_t>(i)])];

    for (int li = 0; li < cfg.n_layers; ++li) {
        const std::string p = "backbone.layers." + std::to_string(li) + ".";
        Mat wq = get_mat(params, p + "w_q", d, d), wk = get_mat(params, p + "w_k", d, d);
        Mat wv = get_mat(params, p + "w_v", d, d), wo = get_mat(params, p + "w_o", d, d);
        Mat wg = get_mat(params, p + "w_g", d, f), wu = get_mat(params, p + "w_u", d, f);
        Mat wd = get_mat(params, p + "w_d", f, d);
        auto ga = get_vec(params, p + "norm_attn", d);
        auto gf = get_vec(params, p + "norm_ffn", d);

        Mat h = ref_rms_norm(x, ga, eps);
        Mat q = mat_mul(h, wq), k = mat_mul(h, wk), vv = mat_mul(h, wv);
        ref_rotary(q, cfg.n_heads, 0);
        ref_rotary(k, cfg.n_heads, 0);
        const int dh = cfg.head_dim();
        Mat att(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(d), 0.0));
        for (int hh = 0; hh < cfg.n_heads; ++hh) {
            const int off = hh * dh;
            for (int i = 0; i < L; ++i) {
                std::vector<double> sc(static_cast<std::size_t>(i) + 1);
                for (int j = 0; j <= i; ++j) {
                    double acc = 0;
                    for (int c = 0; c < dh; ++c)
                        acc += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(off + c)] *
                               k[static_cast<std::size_t>(j)][static_cast<std::size_t>(off + c)];
                    sc[static_cast<std::size_t>(j)] = acc / std::sqrt(static_cast<double>(d));
                }
                double mx = sc[0];
                for (double s : sc) mx = std::max(mx, s);
                double den = 0;
                for (double& s : sc) {
                    s = std::exp(s - mx);
                    den += s;
                }
                for (double& s : sc) s /= den;
                for (int j = 0; j <= i; ++j)
                    for (int c = 0; c < dh; ++c)
                        att[static_cast<std::size_t>(i)][static_cast<std::size_t>(off + c)] +=
                            sc[static_cast<std::size_t>(j)] *
                            vv[static_cast<std::size_t>(j)][static_cast<std::size_t>(off + c)];
            }
        }
        Mat proj = mat_mul(att, wo);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += proj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];

        Mat hf = ref_rms_norm(x, gf, eps);
        Mat g = mat_mul(hf, wg), u = mat_mul(hf, wu);
        Mat inner(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(f)));
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < f; ++j)
                inner[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    ref_gelu(g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) *
                    u[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        Mat down = mat_mul(inner, wd);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += down[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    auto gfin = get_vec(params, "backbone.final_norm", d);
    Mat xn = ref_rms_norm(x, gfin, eps);
    return mat_mul(xn, get_mat(params, "backbone.lm_head", d, v));
}

// Pass-through adapter: every hook left at its default.
template <typename S>
struct NullAdapter : Adapter<S> {
    std::string kind() const override { return "null"; }
    std::vector<std::pair<std::string, Tensor<S>>> named_params() override { return {}; }
};

// Doubles every value row; used to pin "cache stores post-hook rows".
struct DoubleV : Adapter<float> {
    std::string kind() const override { return "double_v"; }
    std::vector<std::pair<std::string, Tensor<float>>> named_params() override { return {}; }
    Tensor<float> modify_v(int, Tensor<float> v) override { return scale(v, 2.0f); }
};

}  // namespace

TEST_CASE("backbone forward matches loop-based reference") {
    ModelConfig cfg = micro_cfg();
    Backbone<double> model(cfg, 99);
    std::vector<int> toks = {3, 1, 7, 0, 10};
    Tensor<double> logits = model.forward(toks, static_cast<int>(toks.size()), nullptr);
    Mat want = ref_forward(model, toks);
    REQUIRE(logits.dim(0) == 5);
    REQUIRE(logits.dim(1) == cfg.vocab_size);
    double worst = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < cfg.vocab_size; ++j)
            worst = std::max(worst, std::abs(logits.at(i, j) - want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    CHECK(worst <= 1e-9);
}

TEST_CASE("perturbing a later token leaves earlier logits bit-identical") {
    Backbone<float> model(tiny_cfg(), 7);
    std::vector<int> a = {4, 9, 2, 17, 30, 5};
    std::vector<int> b = a;
    b[4] = 11;  // differs only at position 4
    Tensor<float> la = model.forward(a, 6, nullptr);
    Tensor<float> lb = model.forward(b, 6, nullptr);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < model.config().vocab_size; ++j) {
            CHECK(la.at(i, j) == lb.at(i, j));
        }
    // ... and position 4 itself must change
    bool differs = false;
    for (int j = 0; j < model.config().vocab_size; ++j)
        if (la.at(4, j) != lb.at(4, j)) differs = true;
    CHECK(differs);
}

TEST_CASE("initial loss sits near the uniform baseline") {
    ModelConfig cfg = tiny_cfg();
    Backbone<float> model(cfg, 13);
    SplitMix64 rng(21);
    std::vector<int> toks(40);
    for (auto& t : toks) t = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.vocab_size)));
    Tensor<float> logits = model.forward(toks, 1, nullptr);
    std::vector<int> targets(toks.begin() + 1, toks.end());
    targets.push_back(-1);  // nothing to predict after the last token
    Tensor<float> loss = cross_entropy_sum(logits, targets);
    const double mean = loss.item() / 39.0;
    const double uniform = std::log(32.0);
    CHECK(mean == doctest::Approx(uniform).epsilon(0.10));
}

TEST_CASE("cached decoding reproduces uncached forwards token for token") {
    ModelConfig cfg = tiny_cfg();
    Backbone<float> model(cfg, 3);
    std::vector<int> prompt = {1, 8, 22, 9, 14, 3, 3, 28, 6};
    const int gen = 6;

    // uncached: rerun the full forward for every generated token
    std::vector<int> seq = prompt;
    std::vector<int> want;
    std::vector<Tensor<float>> want_logits;
    {
        NoGradGuard ng;
        for (int s = 0; s < gen; ++s) {
            Tensor<float> lg = model.forward(seq, static_cast<int>(prompt.size()), nullptr);
            Tensor<float> last = row(lg, lg.dim(0) - 1);
            want_logits.push_back(last);
            const int tok = argmax_index(last);
            want.push_back(tok);
            seq.push_back(tok);
        }
    }

    // cached: prefill once, then single-token decode steps
    KVCache<float> cache = model.make_cache();
    Tensor<float> lg = model.prefill(prompt, cache, nullptr);
    std::vector<int> got;
    for (int s = 0; s < gen; ++s) {
        for (int j = 0; j < cfg.vocab_size; ++j) {
            CHECK(lg.at(j) == want_logits[static_cast<std::size_t>(s)].at(j));
        }
        const int tok = argmax_index(lg);
        got.push_back(tok);
        if (s + 1 < gen) lg = model.decode_step(tok, cache, nullptr);
    }
    CHECK(got == want);
    CHECK(cache.len == static_cast<int>(prompt.size()) + gen - 1);

    // generate() takes the same path
    CHECK(model.generate(prompt, gen, 1, nullptr) == want);
}

TEST_CASE("beam search at full width finds the exhaustive optimum") {
    ModelConfig cfg = micro_cfg();
    cfg.vocab_size = 9;
    Backbone<double> model(cfg, 17);
    std::vector<int> prompt = {2, 5, 1, 8};

    // brute force over all two-token continuations
    NoGradGuard ng;
    double best = -1e300;
    std::vector<int> best_pair;
    for (int t1 = 0; t1 < 9; ++t1) {
        std::vector<int> s1 = prompt;
        Tensor<double> l1 = model.forward(s1, 4, nullptr);
        auto lp1 = log_softmax_values(row(l1, l1.dim(0) - 1));
        s1.push_back(t1);
        Tensor<double> l2 = model.forward(s1, 4, nullptr);
        auto lp2 = log_softmax_values(row(l2, l2.dim(0) - 1));
        for (int t2 = 0; t2 < 9; ++t2) {
            const double score = lp1[static_cast<std::size_t>(t1)] + lp2[static_cast<std::size_t>(t2)];
            if (score > best) {
                best = score;
                best_pair = {t1, t2};
            }
        }
    }
    CHECK(model.generate(prompt, 2, 9, nullptr) == best_pair);

    // width 1 degenerates to greedy
    CHECK(model.generate(prompt, 3, 1, nullptr) ==
          model.generate(prompt, 3, 1, nullptr));
    Backbone<double>& m = model;
    std::vector<int> greedy = m.generate(prompt, 3, 1, nullptr);
    CHECK(greedy.size() == 3);
}

TEST_CASE("sequence and argument validation") {
    ModelConfig cfg = micro_cfg();
    cfg.max_seq_len = 10;
    Backbone<float> model(cfg, 1);
    std::vector<int> ok = {1, 2, 3};
    CHECK_THROWS_AS(model.forward({}, 1, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(model.forward(std::vector<int>(11, 1), 1, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(model.forward(ok, 0, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(model.forward(ok, 4, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(model.forward({1, 99, 2}, 1, nullptr), std::out_of_range);
    CHECK_THROWS_AS(model.generate(ok, 1, 0, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(model.generate(ok, 0, 1, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(model.generate(ok, 8, 1, nullptr), std::invalid_argument);

    KVCache<float> cache = model.make_cache();
    CHECK_THROWS_AS(model.decode_step(1, cache, nullptr), std::invalid_argument);
    model.prefill(ok, cache, nullptr);
    CHECK_THROWS_AS(model.prefill(ok, cache, nullptr), std::invalid_argument);
    for (int i = 0; i < 7; ++i) model.decode_step(1, cache, nullptr);
    CHECK(cache.len == 10);
    CHECK_THROWS_AS(model.decode_step(1, cache, nullptr), std::invalid_argument);
}

TEST_CASE("seeded construction is deterministic") {
    ModelConfig cfg = micro_cfg();
    Backbone<float> a(cfg, 5), b(cfg, 5), c(cfg, 6);
    std::vector<int> toks = {1, 4, 2};
    Tensor<float> la = a.forward(toks, 3, nullptr);
    Tensor<float> lb = b.forward(toks, 3, nullptr);
    Tensor<float> lc = c.forward(toks, 3, nullptr);
    bool same = true, diff = false;
    for (std::size_t i = 0; i < la.numel(); ++i) {
        if (la.data()[i] != lb.data()[i]) same = false;
        if (la.data()[i] != lc.data()[i]) diff = true;
    }
    CHECK(same);
    CHECK(diff);
}

TEST_CASE("a pass-through adapter leaves every path bit-identical") {
    ModelConfig cfg = tiny_cfg();
    Backbone<float> model(cfg, 23);
    NullAdapter<float> null;
    std::vector<int> prompt = {3, 7, 1, 29, 15};
    Tensor<float> base = model.forward(prompt, 5, nullptr);
    Tensor<float> hooked = model.forward(prompt, 5, &null);
    for (std::size_t i = 0; i < base.numel(); ++i) {
        CHECK(base.data()[i] == hooked.data()[i]);
    }
    CHECK(model.generate(prompt, 6, 1, nullptr) == model.generate(prompt, 6, 1, &null));
    CHECK(model.generate(prompt, 6, 3, nullptr) == model.generate(prompt, 6, 3, &null));
}

TEST_CASE("kv cache stores the post-hook value rows") {
    ModelConfig cfg = micro_cfg();
    Backbone<float> model(cfg, 31);
    std::vector<int> prompt = {1, 2, 3};
    KVCache<float> plain = model.make_cache();
    model.prefill(prompt, plain, nullptr);
    DoubleV dv;
    KVCache<float> scaled = model.make_cache();
    model.prefill(prompt, scaled, &dv);
    // layer 0 value rows are exactly doubled; deeper layers diverge anyway
    REQUIRE(plain.v[0].size() == scaled.v[0].size());
    for (std::size_t i = 0; i < plain.v[0].size(); ++i) {
        CHECK(scaled.v[0][i] == 2.0f * plain.v[0][i]);
    }
    // keys at layer 0 see the same input, untouched by the value hook
    for (std::size_t i = 0; i < plain.k[0].size(); ++i) {
        CHECK(scaled.k[0][i] == plain.k[0][i]);
    }
}

TEST_CASE("parameter inventory and freeze flags") {
    ModelConfig cfg = micro_cfg();
    Backbone<float> model(cfg, 2);
    auto params = model.named_params();
    CHECK(params.size() == 3 + 9 * 2);  // emb + head + final norm, 9 per layer
    for (auto& [name, t] : params) {
        CAPTURE(name);
        CHECK_FALSE(t.requires_grad());
    }
    model.set_trainable(true);
    for (auto& [name, t] : model.named_params()) CHECK(t.requires_grad());
    model.set_trainable(false);

    std::size_t bytes = model.param_bytes();
    std::size_t want = 0;
    for (auto& [name, t] : model.named_params()) want += t.numel() * sizeof(float);
    CHECK(bytes == want);
    CHECK(model.cache_bytes(10) == 2u * 2u * 10u * 8u * sizeof(float));
}
