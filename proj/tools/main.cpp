// pedrolab — train, evaluate, and benchmark prompt-conditioned adapters on a
// small frozen transformer. Subcommands: train, eval, bench, count-params,
// report. Exit codes: 0 success, 2 config/checkpoint problems, 3 divergence.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pedro/baselines.hpp"
#include "pedro/bench.hpp"
#include "pedro/checkpoint.hpp"
#include "pedro/config.hpp"
#include "pedro/pedro.hpp"
#include "pedro/tasks.hpp"
#include "pedro/trainer.hpp"

using nlohmann::json;
using namespace pedro;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::unique_ptr<Adapter<float>> make_adapter(const Config& cfg, AdapterKind kind,
                                             unsigned long long seed) {
    switch (kind) {
        case AdapterKind::none: return nullptr;
        case AdapterKind::pedro:
            return std::make_unique<PedroAdapter<float>>(cfg.model, cfg.pedro, seed);
        case AdapterKind::lora:
            return std::make_unique<LoraAdapter<float>>(cfg.model, cfg.lora, seed);
        case AdapterKind::ia3: return std::make_unique<Ia3Adapter<float>>(cfg.model);
        case AdapterKind::bitfit: return std::make_unique<BitfitAdapter<float>>(cfg.model);
    }
    throw std::logic_error("bad adapter kind");
}

// Deterministic backbone reconstruction: init from model.seed, then the
// optional pretraining pass. Any config echo rebuilds the same weights.
Backbone<float> build_backbone(const Config& cfg) {
    Backbone<float> model(cfg.model, cfg.model.seed);
    if (cfg.pretrain.steps > 0) {
        auto corpus =
            gen_pretrain_corpus(cfg.pretrain.seed, cfg.pretrain.corpus_size, cfg.pretrain.max_len);
        pretrain_backbone(model, corpus, cfg.pretrain);
    }
    return model;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

json eval_json(const EvalResult& ev, const Config& cfg, const std::string& split) {
    return json{{"accuracy", ev.accuracy}, {"loss", ev.loss},     {"n_examples", ev.n_examples},
                {"task", cfg.run.task},    {"adapter", cfg.run.adapter}, {"split", split}};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_train(const std::string& config_path, const std::string& task_override,
              const std::string& adapter_override, long long seed_override,
              const std::string& out_prefix) {
    Config cfg = load_config_file(config_path);
    if (!task_override.empty()) cfg.run.task = task_override;
    if (!adapter_override.empty()) cfg.run.adapter = adapter_override;
    if (seed_override >= 0) cfg.run.seed = static_cast<unsigned long long>(seed_override);
    cfg.validate();

    const AdapterKind kind = adapter_kind_from_string(cfg.run.adapter);
    auto adapter = make_adapter(cfg, kind, cfg.run.seed);
    if (!adapter)
        throw std::invalid_argument("train: adapter 'none' has no trainable parameters");

    Backbone<float> model = build_backbone(cfg);
    TaskData task = make_task(cfg.run.task, cfg.task.seed, cfg.task);

    Trainer trainer(model, *adapter, cfg.train, cfg.to_text());
    FitResult res = trainer.fit(task, cfg.run.seed);

    write_text(out_prefix + ".csv", metrics_csv(res.history));
    save_checkpoint(res.best, out_prefix + ".ckpt");

    if (res.diverged) {
        std::cerr << "training diverged at step " << res.steps_run
                  << "; partial metrics in " << out_prefix << ".csv\n";
        return kExitDiverged;
    }
    EvalResult test_ev = trainer.evaluate(task.test);
    json summary{{"best_val_loss", res.best_val_loss},
                 {"best_step", res.best_step},
                 {"steps_run", res.steps_run},
                 {"early_stopped", res.early_stopped},
                 {"theta_updates", res.theta_updates},
                 {"omega_updates", res.omega_updates},
                 {"test", eval_json(test_ev, cfg, "test")},
                 {"checkpoint", out_prefix + ".ckpt"},
                 {"metrics", out_prefix + ".csv"}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& task_override,
             const std::string& split) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    Config cfg = parse_config_text(ck.config_text);
    if (!task_override.empty()) cfg.run.task = task_override;

    Backbone<float> model = build_backbone(cfg);
    const AdapterKind kind = adapter_kind_from_string(cfg.run.adapter);
    auto adapter = make_adapter(cfg, kind, cfg.run.seed);
    if (adapter) restore_adapter(*adapter, ck);

    TaskData task = make_task(cfg.run.task, cfg.task.seed, cfg.task);
    const std::vector<Example>* xs = nullptr;
    if (split == "train")
        xs = &task.train;
    else if (split == "val")
        xs = &task.val;
    else if (split == "test")
        xs = &task.test;
    else
        throw std::invalid_argument("eval: unknown split '" + split + "'");

    EvalResult ev = evaluate_examples(model, adapter.get(), *xs);
    std::cout << eval_json(ev, cfg, split).dump(2) << "\n";
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& ckpt_path,
              const std::string& adapter_name, const BenchOptions& opt) {
    Config cfg;
    Checkpoint ck;
    if (!ckpt_path.empty()) {
        ck = load_checkpoint(ckpt_path);
        cfg = parse_config_text(ck.config_text);
    } else if (!config_path.empty()) {
        cfg = load_config_file(config_path);
    }
    if (!adapter_name.empty()) cfg.run.adapter = adapter_name;
    cfg.validate();

    Backbone<float> model = build_backbone(cfg);
    const AdapterKind kind = adapter_kind_from_string(cfg.run.adapter);
    auto adapter = make_adapter(cfg, kind, cfg.run.seed);
    if (adapter && !ckpt_path.empty()) restore_adapter(*adapter, ck);

    BenchReport r = run_bench(model, adapter.get(), opt);
    json out{{"adapter", r.adapter_kind},
             {"beam", r.beam},
             {"prompt_len", r.prompt_len},
             {"gen_len", r.gen_len},
             {"trials", r.trials},
             {"tokens_per_second", r.tokens_per_second},
             {"cv", r.cv},
             {"noisy", r.noisy},
             {"adapter_invocations_prefill", r.adapter_invocations_prefill},
             {"adapter_invocations_decode", r.adapter_invocations_decode},
             {"extra_mac_per_decode_step", r.extra_mac_per_decode_step},
             {"peak_param_bytes", r.peak_param_bytes}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_count_params(const std::string& config_path, const std::string& adapter_name,
                     bool include_bias) {
    Config cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    if (!adapter_name.empty()) cfg.run.adapter = adapter_name;

    long long n = 0;
    switch (adapter_kind_from_string(cfg.run.adapter)) {
        case AdapterKind::none: n = 0; break;
        case AdapterKind::pedro:
            n = count_pedro_params(cfg.model, cfg.pedro, include_bias);
            break;
        case AdapterKind::lora: n = count_lora_params(cfg.model, cfg.lora); break;
        case AdapterKind::ia3: n = count_ia3_params(cfg.model); break;
        case AdapterKind::bitfit: n = count_bitfit_params(cfg.model); break;
    }
    std::cout << n << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& files) {
    std::vector<double> accs, losses;
    for (const auto& path : files) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open report input '" + path + "'");
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw std::runtime_error("'" + path + "' is not valid JSON: " + e.what());
        }
        // accept either an eval result or a train summary wrapping one
        const json& ev = j.contains("test") ? j["test"] : j;
        if (!ev.contains("accuracy") || !ev.contains("loss"))
            throw std::runtime_error("'" + path + "' lacks accuracy/loss fields");
        accs.push_back(ev["accuracy"].get<double>());
        losses.push_back(ev["loss"].get<double>());
    }
    json out{{"n_runs", files.size()},
             {"median_accuracy", median(accs)},
             {"median_loss", median(losses)}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adapter fine-tuning workbench for a small frozen transformer"};
    app.require_subcommand(1);

    const std::vector<std::string> kinds{"pedro", "lora", "ia3", "bitfit", "none"};

    // train
    auto* train = app.add_subcommand("train", "fine-tune an adapter and save the best checkpoint");
    std::string train_config, train_task, train_adapter, train_out = "run";
    long long train_seed = -1;
    train->add_option("--config", train_config, "flat key = value config file")->required();
    train->add_option("--task", train_task, "task name override (copy, classify)");
    train->add_option("--adapter", train_adapter, "adapter kind override")
        ->check(CLI::IsMember(kinds));
    train->add_option("--seed", train_seed, "run seed override (adapter init + batch order)");
    train->add_option("--out", train_out, "output prefix for .ckpt and .csv files");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint on one split");
    std::string eval_ckpt, eval_task, eval_split = "test";
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint written by train")->required();
    eval->add_option("--task", eval_task, "task name override");
    eval->add_option("--split", eval_split, "train, val, or test")
        ->check(CLI::IsMember({"train", "val", "test"}));

    // bench
    auto* bench = app.add_subcommand("bench", "time generation and report adapter overhead");
    std::string bench_config, bench_ckpt, bench_adapter;
    BenchOptions opt;
    bench->add_option("--config", bench_config, "config file (default: built-in tiny model)");
    bench->add_option("--checkpoint", bench_ckpt, "optional trained checkpoint to load");
    bench->add_option("--adapter", bench_adapter, "adapter kind")->check(CLI::IsMember(kinds));
    bench->add_option("--prompt-len", opt.prompt_len, "synthetic prompt length");
    bench->add_option("--gen-len", opt.gen_len, "tokens to generate per trial");
    bench->add_option("--beam", opt.beam, "beam width")->check(CLI::IsMember({1, 3}));
    bench->add_option("--trials", opt.trials, "measured trials (median reported)");
    bench->add_option("--warmup", opt.warmup, "warmup trials excluded from timing");
    bench->add_option("--seed", opt.seed, "synthetic prompt seed");

    // count-params
    auto* count = app.add_subcommand("count-params", "print an adapter's trainable parameter count");
    std::string count_config, count_adapter;
    bool include_bias = false;
    count->add_option("--config", count_config, "config file (default: built-in tiny model)");
    count->add_option("--adapter", count_adapter, "adapter kind")->check(CLI::IsMember(kinds));
    count->add_flag("--include-bias", include_bias, "count generator bias vectors too");

    // report
    auto* report = app.add_subcommand("report", "median accuracy/loss over eval JSON files");
    std::vector<std::string> report_files;
    report->add_option("files", report_files, "eval or train summary JSON files")
        ->required()
        ->expected(-1);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train))
            return cmd_train(train_config, train_task, train_adapter, train_seed, train_out);
        if (app.got_subcommand(eval)) return cmd_eval(eval_ckpt, eval_task, eval_split);
        if (app.got_subcommand(bench)) return cmd_bench(bench_config, bench_ckpt, bench_adapter, opt);
        if (app.got_subcommand(count)) return cmd_count_params(count_config, count_adapter, include_bias);
        if (app.got_subcommand(report)) return cmd_report(report_files);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
