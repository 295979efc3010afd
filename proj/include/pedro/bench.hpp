#pragma once

#include <cstdint>
#include <string>

#include "pedro/adapter.hpp"
#include "pedro/backbone.hpp"

namespace pedro {

struct BenchOptions {
    int prompt_len = 256;
    int gen_len = 32;
    int beam = 1;
    int trials = 5;
    int warmup = 1;  // initial trials excluded from the timing set
    std::uint64_t seed = 1;
};

struct BenchReport {
    std::string adapter_kind = "none";
    int beam = 1;
    int prompt_len = 0;
    int gen_len = 0;
    int trials = 0;
    double tokens_per_second = 0;  // median over measured trials
    double cv = 0;                 // stddev / mean of per-trial tps
    bool noisy = false;            // cv above 10%
    long adapter_invocations_prefill = 0;  // per request
    long adapter_invocations_decode = 0;   // per request
    long long extra_mac_per_decode_step = 0;
    std::size_t peak_param_bytes = 0;  // backbone + adapter params + request state + KV cache
};

// Times greedy/beam generation over a fixed synthetic prompt. Warmup trials
// run first and are discarded; counters come from one instrumented request.
BenchReport run_bench(Backbone<float>& model, Adapter<float>* adapter,
                      const BenchOptions& opt);

// Benches several adapters (nullptr = bare backbone) under one clock, with
// trials interleaved so load drift affects every adapter evenly. Use this for
// head-to-head throughput comparisons; medians from separate run_bench calls
// are not comparable on a machine with fluctuating load.
std::vector<BenchReport> run_bench_group(Backbone<float>& model,
                                         const std::vector<Adapter<float>*>& adapters,
                                         const BenchOptions& opt);

}  // namespace pedro
