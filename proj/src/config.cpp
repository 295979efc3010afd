#include "pedro/config.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pedro {

AdapterKind adapter_kind_from_string(const std::string& s) {
    if (s == "none") return AdapterKind::none;
    if (s == "pedro") return AdapterKind::pedro;
    if (s == "lora") return AdapterKind::lora;
    if (s == "ia3") return AdapterKind::ia3;
    if (s == "bitfit") return AdapterKind::bitfit;
    throw std::invalid_argument("unknown adapter kind: " + s);
}

std::string adapter_kind_name(AdapterKind k) {
    switch (k) {
        case AdapterKind::none: return "none";
        case AdapterKind::pedro: return "pedro";
        case AdapterKind::lora: return "lora";
        case AdapterKind::ia3: return "ia3";
        case AdapterKind::bitfit: return "bitfit";
    }
    throw std::logic_error("bad adapter kind");
}

PoolerMode pooler_from_string(const std::string& s) {
    if (s == "last_token") return PoolerMode::last_token;
    if (s == "mean") return PoolerMode::mean;
    if (s == "max") return PoolerMode::max;
    throw std::invalid_argument("unknown pooler mode: " + s);
}

std::string pooler_name(PoolerMode m) {
    switch (m) {
        case PoolerMode::last_token: return "last_token";
        case PoolerMode::mean: return "mean";
        case PoolerMode::max: return "max";
    }
    throw std::logic_error("bad pooler mode");
}

VgActivation vg_activation_from_string(const std::string& s) {
    if (s == "rational") return VgActivation::rational;
    if (s == "relu") return VgActivation::relu;
    if (s == "gelu") return VgActivation::gelu;
    if (s == "mixed_relu_gelu") return VgActivation::mixed_relu_gelu;
    throw std::invalid_argument("unknown vg activation: " + s);
}

std::string vg_activation_name(VgActivation a) {
    switch (a) {
        case VgActivation::rational: return "rational";
        case VgActivation::relu: return "relu";
        case VgActivation::gelu: return "gelu";
        case VgActivation::mixed_relu_gelu: return "mixed_relu_gelu";
    }
    throw std::logic_error("bad vg activation");
}

void ModelConfig::validate() const {
    if (vocab_size < 2) throw std::invalid_argument("model.vocab_size must be >= 2");
    if (d_model < 1 || n_heads < 1 || d_ffn < 1 || n_layers < 1 || max_seq_len < 1)
        throw std::invalid_argument("model dimensions must be positive");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("model.d_model must be divisible by model.n_heads");
    if ((d_model / n_heads) % 2 != 0)
        throw std::invalid_argument("head dimension must be even (rotary pairs)");
}

void PedroConfig::validate(int n_layers) const {
    if (r < 1) throw std::invalid_argument("pedro.r must be >= 1");
    if (targets.empty()) throw std::invalid_argument("pedro.targets must be non-empty");
    for (char c : targets)
        if (c != 'q' && c != 'k' && c != 'v' && c != 'g' && c != 'u')
            throw std::invalid_argument(std::string("pedro.targets: unknown target '") + c +
                                        "' (allowed: q,k,v,g,u)");
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (std::size_t j = i + 1; j < targets.size(); ++j)
            if (targets[i] == targets[j])
                throw std::invalid_argument("pedro.targets: duplicate target");
    if (activation == VgActivation::mixed_relu_gelu &&
        (relu_layers < 0 || relu_layers > n_layers))
        throw std::invalid_argument("pedro.relu_layers out of range");
}

void LoraConfig::validate() const {
    if (rank < 1) throw std::invalid_argument("lora.rank must be >= 1");
    if (alpha < 0) throw std::invalid_argument("lora.alpha must be >= 0");
}

void TrainConfig::validate() const {
    if (lr <= 0) throw std::invalid_argument("train.lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (warmup_frac <= 0 || warmup_frac >= 1)
        throw std::invalid_argument("train.warmup_frac must be in (0,1)");
    if (eval_interval < 1) throw std::invalid_argument("train.eval_interval must be >= 1");
    if (patience < 1) throw std::invalid_argument("train.patience must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("train.max_steps must be >= 0");
}

void TaskConfig::validate() const {
    if (train_size < 1 || val_size < 1 || test_size < 1)
        throw std::invalid_argument("task split sizes must be >= 1");
    if (seq_len < 2) throw std::invalid_argument("task.seq_len must be >= 2");
    if (n_classes < 2) throw std::invalid_argument("task.n_classes must be >= 2");
}

void PretrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("pretrain.steps must be >= 0");
    if (lr <= 0) throw std::invalid_argument("pretrain.lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("pretrain.batch_size must be >= 1");
    if (corpus_size < 1) throw std::invalid_argument("pretrain.corpus_size must be >= 1");
    if (max_len < 2) throw std::invalid_argument("pretrain.max_len must be >= 2");
}

void RunConfig::validate() const {
    if (task.empty()) throw std::invalid_argument("run.task must be non-empty");
    adapter_kind_from_string(adapter);  // throws on unknown kinds
}

void Config::validate() const {
    model.validate();
    pedro.validate(model.n_layers);
    lora.validate();
    train.validate();
    task.validate();
    pretrain.validate();
    run.validate();
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': invalid integer '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': invalid number '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "': invalid boolean '" + v + "'");
}

unsigned long long parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': invalid integer '" + v + "'");
    }
}

}  // namespace

Config parse_config_text(const std::string& text) {
    Config cfg;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> schema = {
        {"model.vocab_size", [&](const std::string& k, const std::string& v) { cfg.model.vocab_size = parse_int(k, v); }},
        {"model.d_model", [&](const std::string& k, const std::string& v) { cfg.model.d_model = parse_int(k, v); }},
        {"model.n_heads", [&](const std::string& k, const std::string& v) { cfg.model.n_heads = parse_int(k, v); }},
        {"model.d_ffn", [&](const std::string& k, const std::string& v) { cfg.model.d_ffn = parse_int(k, v); }},
        {"model.n_layers", [&](const std::string& k, const std::string& v) { cfg.model.n_layers = parse_int(k, v); }},
        {"model.max_seq_len", [&](const std::string& k, const std::string& v) { cfg.model.max_seq_len = parse_int(k, v); }},
        {"model.seed", [&](const std::string& k, const std::string& v) { cfg.model.seed = parse_u64(k, v); }},
        {"pedro.r", [&](const std::string& k, const std::string& v) { cfg.pedro.r = parse_int(k, v); }},
        {"pedro.pooler", [&](const std::string&, const std::string& v) { cfg.pedro.pooler = pooler_from_string(v); }},
        {"pedro.targets", [&](const std::string&, const std::string& v) { cfg.pedro.targets = v; }},
        {"pedro.activation", [&](const std::string&, const std::string& v) { cfg.pedro.activation = vg_activation_from_string(v); }},
        {"pedro.relu_layers", [&](const std::string& k, const std::string& v) { cfg.pedro.relu_layers = parse_int(k, v); }},
        {"lora.rank", [&](const std::string& k, const std::string& v) { cfg.lora.rank = parse_int(k, v); }},
        {"lora.alpha", [&](const std::string& k, const std::string& v) { cfg.lora.alpha = parse_double(k, v); }},
        {"train.lr", [&](const std::string& k, const std::string& v) { cfg.train.lr = parse_double(k, v); }},
        {"train.batch_size", [&](const std::string& k, const std::string& v) { cfg.train.batch_size = parse_int(k, v); }},
        {"train.epochs", [&](const std::string& k, const std::string& v) { cfg.train.epochs = parse_int(k, v); }},
        {"train.warmup_frac", [&](const std::string& k, const std::string& v) { cfg.train.warmup_frac = parse_double(k, v); }},
        {"train.eval_interval", [&](const std::string& k, const std::string& v) { cfg.train.eval_interval = parse_int(k, v); }},
        {"train.patience", [&](const std::string& k, const std::string& v) { cfg.train.patience = parse_int(k, v); }},
        {"train.bilevel", [&](const std::string& k, const std::string& v) { cfg.train.bilevel = parse_bool(k, v); }},
        {"train.max_steps", [&](const std::string& k, const std::string& v) { cfg.train.max_steps = parse_int(k, v); }},
        {"task.train_size", [&](const std::string& k, const std::string& v) { cfg.task.train_size = parse_int(k, v); }},
        {"task.val_size", [&](const std::string& k, const std::string& v) { cfg.task.val_size = parse_int(k, v); }},
        {"task.test_size", [&](const std::string& k, const std::string& v) { cfg.task.test_size = parse_int(k, v); }},
        {"task.seq_len", [&](const std::string& k, const std::string& v) { cfg.task.seq_len = parse_int(k, v); }},
        {"task.n_classes", [&](const std::string& k, const std::string& v) { cfg.task.n_classes = parse_int(k, v); }},
        {"task.seed", [&](const std::string& k, const std::string& v) { cfg.task.seed = parse_u64(k, v); }},
        {"pretrain.steps", [&](const std::string& k, const std::string& v) { cfg.pretrain.steps = parse_int(k, v); }},
        {"pretrain.lr", [&](const std::string& k, const std::string& v) { cfg.pretrain.lr = parse_double(k, v); }},
        {"pretrain.batch_size", [&](const std::string& k, const std::string& v) { cfg.pretrain.batch_size = parse_int(k, v); }},
        {"pretrain.corpus_size", [&](const std::string& k, const std::string& v) { cfg.pretrain.corpus_size = parse_int(k, v); }},
        {"pretrain.max_len", [&](const std::string& k, const std::string& v) { cfg.pretrain.max_len = parse_int(k, v); }},
        {"pretrain.seed", [&](const std::string& k, const std::string& v) { cfg.pretrain.seed = parse_u64(k, v); }},
        {"run.task", [&](const std::string&, const std::string& v) { cfg.run.task = v; }},
        {"run.adapter", [&](const std::string&, const std::string& v) { cfg.run.adapter = v; }},
        {"run.seed", [&](const std::string& k, const std::string& v) { cfg.run.seed = parse_u64(k, v); }},
    };

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = schema.find(key);
        if (it == schema.end())
            throw std::invalid_argument("unknown config key '" + key + "'");
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

Config load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string Config::to_text() const {
    std::ostringstream o;
    // max_digits10 so doubles round-trip exactly through the checkpoint echo
    o.precision(17);
    o << "model.vocab_size = " << model.vocab_size << "\n";
    o << "model.d_model = " << model.d_model << "\n";
    o << "model.n_heads = " << model.n_heads << "\n";
    o << "model.d_ffn = " << model.d_ffn << "\n";
    o << "model.n_layers = " << model.n_layers << "\n";
    o << "model.max_seq_len = " << model.max_seq_len << "\n";
    o << "model.seed = " << model.seed << "\n";
    o << "pedro.r = " << pedro.r << "\n";
    o << "pedro.pooler = " << pooler_name(pedro.pooler) << "\n";
    o << "pedro.targets = " << pedro.targets << "\n";
    o << "pedro.activation = " << vg_activation_name(pedro.activation) << "\n";
    o << "pedro.relu_layers = " << pedro.relu_layers << "\n";
    o << "lora.rank = " << lora.rank << "\n";
    o << "lora.alpha = " << lora.alpha << "\n";
    o << "train.lr = " << train.lr << "\n";
    o << "train.batch_size = " << train.batch_size << "\n";
    o << "train.epochs = " << train.epochs << "\n";
    o << "train.warmup_frac = " << train.warmup_frac << "\n";
    o << "train.eval_interval = " << train.eval_interval << "\n";
    o << "train.patience = " << train.patience << "\n";
    o << "train.bilevel = " << (train.bilevel ? "true" : "false") << "\n";
    o << "train.max_steps = " << train.max_steps << "\n";
    o << "task.train_size = " << task.train_size << "\n";
    o << "task.val_size = " << task.val_size << "\n";
    o << "task.test_size = " << task.test_size << "\n";
    o << "task.seq_len = " << task.seq_len << "\n";
    o << "task.n_classes = " << task.n_classes << "\n";
    o << "task.seed = " << task.seed << "\n";
    o << "pretrain.steps = " << pretrain.steps << "\n";
    o << "pretrain.lr = " << pretrain.lr << "\n";
    o << "pretrain.batch_size = " << pretrain.batch_size << "\n";
    o << "pretrain.corpus_size = " << pretrain.corpus_size << "\n";
    o << "pretrain.max_len = " << pretrain.max_len << "\n";
    o << "pretrain.seed = " << pretrain.seed << "\n";
    o << "run.task = " << run.task << "\n";
    o << "run.adapter = " << run.adapter << "\n";
    o << "run.seed = " << run.seed << "\n";
    return o.str();
}

}  // namespace pedro
