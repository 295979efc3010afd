#include "pedro/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pedro/rng.hpp"
#include "pedro/tasks.hpp"

namespace pedro {

std::vector<BenchReport> run_bench_group(Backbone<float>& model,
                                         const std::vector<Adapter<float>*>& adapters,
                                         const BenchOptions& opt) {
    const ModelConfig& m = model.config();
    if (adapters.empty()) throw std::invalid_argument("bench: no adapters given");
    if (opt.prompt_len < 1 || opt.gen_len < 1)
        throw std::invalid_argument("bench: prompt_len and gen_len must be >= 1");
    if (opt.beam < 1) throw std::invalid_argument("bench: beam must be >= 1");
    if (opt.trials < 1) throw std::invalid_argument("bench: trials must be >= 1");
    if (opt.prompt_len + opt.gen_len > m.max_seq_len)
        throw std::invalid_argument(
            "bench: prompt_len + gen_len = " + std::to_string(opt.prompt_len + opt.gen_len) +
            " exceeds max_seq_len " + std::to_string(m.max_seq_len));

    NoGradGuard guard;
    SplitMix64 rng(opt.seed);
    std::vector<int> prompt;
    prompt.reserve(static_cast<std::size_t>(opt.prompt_len));
    prompt.push_back(Tokenizer::kBos);
    while (static_cast<int>(prompt.size()) < opt.prompt_len)
        prompt.push_back(3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                 m.vocab_size - 3))));

    const std::size_t k = adapters.size();
    std::vector<BenchReport> reports(k);
    for (std::size_t a = 0; a < k; ++a) {
        Adapter<float>* ad = adapters[a];
        BenchReport& r = reports[a];
        r.adapter_kind = ad ? ad->kind() : "none";
        r.beam = opt.beam;
        r.prompt_len = opt.prompt_len;
        r.gen_len = opt.gen_len;
        r.trials = opt.trials;
        r.extra_mac_per_decode_step = ad ? ad->extra_macs_per_token() : 0;

        // One instrumented request fills the per-request counters.
        if (ad) ad->reset_counters();
        model.generate(prompt, opt.gen_len, opt.beam, ad);
        if (ad) {
            r.adapter_invocations_prefill = ad->prefill_invocations;
            r.adapter_invocations_decode = ad->decode_invocations;
        }
        r.peak_param_bytes = model.param_bytes() +
                             (ad ? ad->param_bytes() + ad->state_bytes() : 0) +
                             model.cache_bytes(opt.prompt_len + opt.gen_len);
    }

    for (int t = 0; t < opt.warmup; ++t)
        for (Adapter<float>* ad : adapters) model.generate(prompt, opt.gen_len, opt.beam, ad);

    // Trials are interleaved across adapters so that machine-load drift during
    // the run lands on every adapter evenly; comparing the resulting medians
    // then reflects adapter cost rather than which adapter ran in a slow window.
    std::vector<std::vector<double>> tps(k);
    for (std::size_t a = 0; a < k; ++a) tps[a].reserve(static_cast<std::size_t>(opt.trials));
    for (int t = 0; t < opt.trials; ++t) {
        for (std::size_t a = 0; a < k; ++a) {
            auto t0 = std::chrono::steady_clock::now();
            model.generate(prompt, opt.gen_len, opt.beam, adapters[a]);
            auto t1 = std::chrono::steady_clock::now();
            double secs = std::chrono::duration<double>(t1 - t0).count();
            tps[a].push_back(static_cast<double>(opt.gen_len) / std::max(secs, 1e-12));
        }
    }

    for (std::size_t a = 0; a < k; ++a) {
        BenchReport& r = reports[a];
        std::vector<double> sorted = tps[a];
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        r.tokens_per_second =
            (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

        double mean = 0;
        for (double v : tps[a]) mean += v;
        mean /= static_cast<double>(n);
        double var = 0;
        for (double v : tps[a]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        r.cv = mean > 0 ? std::sqrt(var) / mean : 0.0;
        r.noisy = r.cv > 0.10;
    }
    return reports;
}

BenchReport run_bench(Backbone<float>& model, Adapter<float>* adapter,
                      const BenchOptions& opt) {
    return run_bench_group(model, {adapter}, opt).front();
}

}  // namespace pedro
