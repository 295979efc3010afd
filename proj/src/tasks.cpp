#include "pedro/tasks.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <stdexcept>

#include "pedro/rng.hpp"

namespace pedro {

EncodedExample encode_example(const Tokenizer& tok, const Example& ex) {
    if (ex.prompt.empty() || ex.target.empty())
        throw std::invalid_argument("encode_example: empty prompt or target");
    EncodedExample out;
    out.tokens.push_back(Tokenizer::kBos);
    for (int id : tok.encode(ex.prompt)) out.tokens.push_back(id);
    out.tokens.push_back(Tokenizer::kSep);
    out.prompt_len = static_cast<int>(out.tokens.size());
    for (int id : tok.encode(ex.target)) out.tokens.push_back(id);
    const int l = static_cast<int>(out.tokens.size());
    out.targets.assign(static_cast<std::size_t>(l), -1);
    for (int i = out.prompt_len - 1; i + 1 < l; ++i)
        out.targets[static_cast<std::size_t>(i)] = out.tokens[static_cast<std::size_t>(i) + 1];
    return out;
}

namespace {

constexpr int kPayloadSymbols = 10;  // 'a'..'j'

std::string random_payload(SplitMix64& rng, int len) {
    std::string s(static_cast<std::size_t>(len), 'a');
    for (auto& c : s) c = static_cast<char>('a' + rng.below(kPayloadSymbols));
    return s;
}

// Fills splits in order from a prompt-deduplicated stream so no prompt can
// appear in two splits.
void fill_splits(TaskData& task, const TaskConfig& cfg,
                 const std::function<Example()>& next) {
    std::set<std::string> seen;
    auto take = [&](std::vector<Example>& out, int n) {
        while (static_cast<int>(out.size()) < n) {
            Example ex = next();
            if (!seen.insert(ex.prompt).second) continue;
            out.push_back(std::move(ex));
        }
    };
    take(task.train, cfg.train_size);
    take(task.val, cfg.val_size);
    take(task.test, cfg.test_size);
}

}  // namespace

TaskData gen_copy_task(std::uint64_t seed, const TaskConfig& cfg) {
    cfg.validate();
    TaskData task;
    task.name = "copy";
    SplitMix64 rng(seed);
    fill_splits(task, cfg, [&]() {
        const int len = 2 + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.seq_len - 1)));
        std::string s = random_payload(rng, len);
        return Example{s, s};
    });
    return task;
}

TaskData gen_classification_task(std::uint64_t seed, const TaskConfig& cfg) {
    cfg.validate();
    if (cfg.n_classes > 3)
        throw std::invalid_argument("classification: at most 3 classes (label digits 0-2)");
    TaskData task;
    task.name = "classify";
    SplitMix64 rng(seed);
    int next_class = 0;            // round-robin for exact balance
    std::set<std::string> used;    // dedupe here so a rejection never skips a class slot

    auto majority = [&](const std::string& s) {
        int counts[3] = {0, 0, 0};
        for (char c : s) ++counts[c - 'a'];
        int best = 0;
        for (int c = 1; c < cfg.n_classes; ++c)
            if (counts[c] > counts[best]) best = c;
        // strict majority only; ties rejected by the caller
        for (int c = 0; c < cfg.n_classes; ++c)
            if (c != best && counts[c] == counts[best]) return -1;
        return best;
    };

    fill_splits(task, cfg, [&]() {
        const int want = next_class;
        long attempts = 0;
        while (true) {
            if (++attempts > 2'000'000)
                throw std::runtime_error(
                    "classification: cannot generate enough distinct examples for class " +
                    std::to_string(want) + "; shrink split sizes or grow seq_len");
            std::string s(static_cast<std::size_t>(cfg.seq_len), 'a');
            for (auto& c : s)
                c = static_cast<char>('a' + rng.below(static_cast<uint64_t>(cfg.n_classes)));
            if (majority(s) != want) continue;
            if (!used.insert(s).second) continue;
            next_class = (next_class + 1) % cfg.n_classes;
            return Example{s, std::string(1, static_cast<char>('0' + want))};
        }
    });
    return task;
}

std::vector<Example> gen_pretrain_corpus(std::uint64_t seed, int n, int max_len) {
    if (n < 1) throw std::invalid_argument("pretrain corpus size must be >= 1");
    if (max_len < 2) throw std::invalid_argument("pretrain max_len must be >= 2");
    SplitMix64 rng(seed);
    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int len = 2 + static_cast<int>(rng.below(static_cast<uint64_t>(max_len - 1)));
        std::string s = random_payload(rng, len);
        std::string t = s;
        switch (rng.below(3)) {
            case 0: break;  // copy
            case 1: {       // reverse
                for (std::size_t j = 0; j < t.size(); ++j) t[j] = s[s.size() - 1 - j];
                break;
            }
            case 2: {  // +1 cyclic shift within the payload alphabet
                for (auto& c : t) c = static_cast<char>('a' + (c - 'a' + 1) % kPayloadSymbols);
                break;
            }
        }
        out.push_back({std::move(s), std::move(t)});
    }
    return out;
}

TaskData make_task(const std::string& name, std::uint64_t seed, const TaskConfig& cfg) {
    if (name == "copy") return gen_copy_task(seed, cfg);
    if (name == "classify") return gen_classification_task(seed, cfg);
    throw std::invalid_argument("unknown task '" + name + "' (available: copy, classify)");
}

void write_examples(const std::string& path, const std::vector<Example>& xs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& ex : xs) out << ex.prompt << '\t' << ex.target << '\n';
    if (!out) throw std::runtime_error("failed writing examples to '" + path + "'");
}

std::vector<Example> read_examples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open examples file '" + path + "'");
    std::vector<Example> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected 'prompt TAB target'");
        out.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return out;
}

}  // namespace pedro
