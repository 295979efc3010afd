#pragma once

#include <string>
#include <vector>

namespace pedro {

enum class AdapterKind { none, pedro, lora, ia3, bitfit };

AdapterKind adapter_kind_from_string(const std::string& s);
std::string adapter_kind_name(AdapterKind k);

enum class PoolerMode { last_token, mean, max };

PoolerMode pooler_from_string(const std::string& s);
std::string pooler_name(PoolerMode m);

// Per-layer activation assignment inside the vector generator.
enum class VgActivation { rational, relu, gelu, mixed_relu_gelu };

VgActivation vg_activation_from_string(const std::string& s);
std::string vg_activation_name(VgActivation a);

struct ModelConfig {
    int vocab_size = 32;
    int d_model = 64;
    int n_heads = 2;
    int d_ffn = 172;
    int n_layers = 4;
    int max_seq_len = 512;
    unsigned long long seed = 1;  // backbone weight init

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

struct PedroConfig {
    int r = 12;
    PoolerMode pooler = PoolerMode::last_token;
    std::string targets = "qvu";  // subset of {q,k,v,g,u}, order-insensitive
    VgActivation activation = VgActivation::rational;
    // layers [0, relu_layers) use ReLU, the rest GELU, when activation == mixed
    int relu_layers = 0;

    void validate(int n_layers) const;
};

struct LoraConfig {
    int rank = 4;
    double alpha = 0;  // 0 → defaults to 2·rank

    double effective_alpha() const { return alpha > 0 ? alpha : 2.0 * rank; }
    void validate() const;
};

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 16;
    int epochs = 10;
    double warmup_frac = 0.06;
    int eval_interval = 200;
    int patience = 10;
    bool bilevel = false;
    int max_steps = 0;  // 0 → no cap beyond epochs

    void validate() const;
};

struct TaskConfig {
    int train_size = 2000;
    int val_size = 200;
    int test_size = 200;
    int seq_len = 12;
    int n_classes = 2;
    unsigned long long seed = 13;  // corpus generation; fixed across run seeds

    void validate() const;
};

struct PretrainConfig {
    int steps = 0;  // 0 → skip backbone pretraining
    double lr = 3e-4;
    int batch_size = 16;
    int corpus_size = 2000;
    int max_len = 12;
    unsigned long long seed = 7;

    void validate() const;
};

// Identity of one training run: what was trained on what, under which seed.
// Stored in the config echo so a checkpoint alone can rebuild its setup.
struct RunConfig {
    std::string task = "copy";
    std::string adapter = "pedro";
    unsigned long long seed = 1;  // adapter init and batch order

    void validate() const;
};

struct Config {
    ModelConfig model;
    PedroConfig pedro;
    LoraConfig lora;
    TrainConfig train;
    TaskConfig task;
    PretrainConfig pretrain;
    RunConfig run;

    void validate() const;
    // Flat "key = value" text; round-trips through parse_config.
    std::string to_text() const;
};

// Parses flat key=value text ('#' comments, blank lines ignored).
// Unknown keys and malformed values throw with the offending key named.
Config parse_config_text(const std::string& text);
Config load_config_file(const std::string& path);

}  // namespace pedro
