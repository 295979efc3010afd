#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pedro/config.hpp"

namespace pedro {

// Character-level tokenizer over a fixed 32-symbol vocabulary:
// ids 0..2 reserved (pad, begin, separator), 3..28 map 'a'..'z',
// 29..31 map '0'..'2' (classification labels).
class Tokenizer {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kSep = 2;

    int vocab_size() const { return 32; }

    int char_id(char c) const {
        if (c >= 'a' && c <= 'z') return 3 + (c - 'a');
        if (c >= '0' && c <= '2') return 29 + (c - '0');
        throw std::invalid_argument(std::string("tokenizer: unknown character '") + c + "'");
    }

    std::vector<int> encode(const std::string& s) const {
        std::vector<int> out;
        out.reserve(s.size());
        for (char c : s) out.push_back(char_id(c));
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        out.reserve(ids.size());
        for (int id : ids) {
            if (id >= 3 && id <= 28)
                out.push_back(static_cast<char>('a' + (id - 3)));
            else if (id >= 29 && id <= 31)
                out.push_back(static_cast<char>('0' + (id - 29)));
            else
                throw std::invalid_argument("tokenizer: id " + std::to_string(id) +
                                            " is reserved or out of range");
        }
        return out;
    }
};

struct Example {
    std::string prompt;
    std::string target;
};

// A generated task: named corpus with disjoint train/val/test splits.
struct TaskData {
    std::string name;
    std::vector<Example> train, val, test;
};

// Sequence layout fed to the model: [BOS] prompt [SEP] target. The prompt
// span (BOS through SEP) conditions prompt-dependent adapters; loss applies
// to target positions only, so `targets[i]` is tokens[i+1] inside the target
// span and -1 everywhere else.
struct EncodedExample {
    std::vector<int> tokens;
    int prompt_len = 0;
    std::vector<int> targets;
};

EncodedExample encode_example(const Tokenizer& tok, const Example& ex);

// Copy task: emit the prompt payload unchanged after the separator.
TaskData gen_copy_task(std::uint64_t seed, const TaskConfig& cfg);

// Majority-symbol classification: the label token is the digit of the
// strictly most frequent symbol; classes are exactly balanced per split.
TaskData gen_classification_task(std::uint64_t seed, const TaskConfig& cfg);

// Pretraining mixture for the backbone: each example applies one of three
// transforms (copy, reverse, +1 cyclic shift) with no marker saying which,
// so a language model learns all three circuits and stays uncertain between
// them — the uncertainty adapters later resolve.
std::vector<Example> gen_pretrain_corpus(std::uint64_t seed, int n, int max_len);

TaskData make_task(const std::string& name, std::uint64_t seed, const TaskConfig& cfg);

// Line-delimited serialization: "prompt TAB target", UTF-8, one per line.
void write_examples(const std::string& path, const std::vector<Example>& xs);
std::vector<Example> read_examples(const std::string& path);

}  // namespace pedro
