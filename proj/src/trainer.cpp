#include "pedro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pedro/rng.hpp"

namespace pedro {
namespace {

std::vector<Tensor<float>> values_of(
    const std::vector<std::pair<std::string, Tensor<float>>>& named) {
    std::vector<Tensor<float>> out;
    out.reserve(named.size());
    for (const auto& p : named) out.push_back(p.second);
    return out;
}

// Linear warmup to the peak rate, then linear decay to zero at total_steps.
double scheduled_lr(double peak, long step, long warmup, long total_steps) {
    if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (total_steps <= warmup) return peak;
    return peak * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

void shuffle_indices(std::vector<std::size_t>& idx, SplitMix64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "step,split,loss,accuracy,lr,theta_updates,omega_updates\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.step << ',' << r.split << ',' << r.loss << ',' << r.accuracy << ',' << r.lr
           << ',' << r.theta_updates << ',' << r.omega_updates << '\n';
    }
    return os.str();
}

Checkpoint snapshot_adapter(Adapter<float>& adapter, const std::string& config_echo) {
    Checkpoint ck;
    ck.config_text = config_echo;
    for (const auto& [name, t] : adapter.named_params()) ck.add(name, t);
    return ck;
}

void restore_adapter(Adapter<float>& adapter, const Checkpoint& ck) {
    for (auto& [name, t] : adapter.named_params()) ck.load_into(name, t);
}

double pretrain_backbone(Backbone<float>& model, const std::vector<Example>& corpus,
                         const PretrainConfig& cfg) {
    cfg.validate();
    if (cfg.steps == 0) return 0.0;
    if (corpus.empty()) throw std::invalid_argument("pretrain_backbone: empty corpus");

    Tokenizer tok;
    model.set_trainable(true);
    AdamW<float> opt(values_of(model.named_params()), cfg.lr);
    SplitMix64 rng(cfg.seed);
    double last_loss = 0.0;

    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        Tensor<float> total;
        long tokens = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Example& ex = corpus[rng.below(corpus.size())];
            EncodedExample enc = encode_example(tok, ex);
            Tensor<float> logits = model.forward(enc.tokens, enc.prompt_len, nullptr);
            Tensor<float> l = cross_entropy_sum(logits, enc.targets);
            total = total.defined() ? add(total, l) : l;
            for (int t : enc.targets)
                if (t >= 0) ++tokens;
        }
        Tensor<float> mean = scale(total, 1.0f / static_cast<float>(tokens));
        last_loss = mean.item();
        if (!std::isfinite(last_loss))
            throw std::runtime_error("pretrain_backbone: loss diverged to non-finite");
        mean.backward();
        opt.step();
    }
    model.set_trainable(false);
    return last_loss;
}

Trainer::Trainer(Backbone<float>& model, Adapter<float>& adapter, const TrainConfig& cfg,
                 std::string config_echo)
    : model_(model),
      adapter_(adapter),
      cfg_(cfg),
      config_echo_(std::move(config_echo)),
      omega_opt_(cfg.bilevel ? adapter.main_params() : values_of(adapter.named_params()),
                 cfg.lr) {
    cfg_.validate();
    if (cfg_.bilevel) {
        auto theta = adapter_.activation_params();
        if (theta.empty())
            throw std::invalid_argument(
                "bilevel training requires an adapter with trainable activation parameters");
        theta_opt_ = std::make_unique<AdamW<float>>(theta, cfg_.lr);
    }
}

void Trainer::set_lr(double lr) {
    omega_opt_.set_lr(static_cast<float>(lr));
    if (theta_opt_) theta_opt_->set_lr(static_cast<float>(lr));
}

Tensor<float> Trainer::batch_loss(const Batch& batch, BatchStats* stats) {
    if (batch.items.empty()) throw std::invalid_argument("batch_loss: empty batch");
    Tensor<float> total;
    long tokens = 0, correct = 0;
    for (const Example* ex : batch.items) {
        EncodedExample enc = encode_example(tok_, *ex);
        Tensor<float> logits = model_.forward(enc.tokens, enc.prompt_len, &adapter_);
        const int v = logits.dim(1);
        const float* ld = logits.data().data();
        for (std::size_t i = 0; i < enc.targets.size(); ++i) {
            if (enc.targets[i] < 0) continue;
            ++tokens;
            const float* row = ld + static_cast<std::size_t>(i) * v;
            int best = 0;
            for (int j = 1; j < v; ++j)
                if (row[j] > row[best]) best = j;
            if (best == enc.targets[i]) ++correct;
        }
        Tensor<float> l = cross_entropy_sum(logits, enc.targets);
        total = total.defined() ? add(total, l) : l;
    }
    Tensor<float> mean = scale(total, 1.0f / static_cast<float>(tokens));
    if (stats) {
        stats->loss = mean.item();
        stats->accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
    }
    return mean;
}

double Trainer::train_step(const Batch& batch) {
    omega_opt_.zero_grad();
    BatchStats stats;
    Tensor<float> loss = batch_loss(batch, &stats);
    loss.backward();
    omega_opt_.step();
    ++omega_updates_;
    return stats.loss;
}

std::pair<double, double> Trainer::bilevel_step(const Batch& train_batch,
                                                const Batch& val_batch) {
    if (!theta_opt_)
        throw std::logic_error("bilevel_step: trainer was built with bilevel disabled");
    if (train_batch.split == val_batch.split)
        throw std::invalid_argument(
            "bilevel_step: train and val batches must come from different splits (both are '" +
            train_batch.split + "')");
    double omega_loss = train_step(train_batch);
    theta_opt_->zero_grad();
    BatchStats stats;
    Tensor<float> loss = batch_loss(val_batch, &stats);
    loss.backward();
    theta_opt_->step();
    ++theta_updates_;
    return {omega_loss, stats.loss};
}

EvalResult evaluate_examples(Backbone<float>& model, Adapter<float>* adapter,
                             const std::vector<Example>& xs) {
    if (xs.empty()) throw std::invalid_argument("evaluate: empty example list");
    NoGradGuard guard;
    Tokenizer tok;
    double loss_sum = 0;
    long tokens = 0, correct = 0;
    for (const Example& ex : xs) {
        EncodedExample enc = encode_example(tok, ex);
        Tensor<float> logits = model.forward(enc.tokens, enc.prompt_len, adapter);
        Tensor<float> l = cross_entropy_sum(logits, enc.targets);
        loss_sum += l.item();

        std::vector<int> prompt(enc.tokens.begin(), enc.tokens.begin() + enc.prompt_len);
        std::vector<int> out =
            model.generate(prompt, static_cast<int>(ex.target.size()), 1, adapter);
        std::vector<int> want = tok.encode(ex.target);
        for (std::size_t i = 0; i < want.size(); ++i) {
            ++tokens;
            if (i < out.size() && out[i] == want[i]) ++correct;
        }
    }
    EvalResult r;
    r.loss = loss_sum / static_cast<double>(tokens);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
    r.n_examples = static_cast<int>(xs.size());
    return r;
}

EvalResult Trainer::evaluate(const std::vector<Example>& xs) {
    return evaluate_examples(model_, &adapter_, xs);
}

FitResult Trainer::fit(const TaskData& task, std::uint64_t seed) {
    if (task.train.empty()) throw std::invalid_argument("fit: task has no train examples");
    if (task.val.empty()) throw std::invalid_argument("fit: task has no val examples");

    const long steps_per_epoch =
        (static_cast<long>(task.train.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
    long total = static_cast<long>(cfg_.epochs) * steps_per_epoch;
    if (cfg_.max_steps > 0) total = std::min(total, static_cast<long>(cfg_.max_steps));
    const long warmup =
        std::max<long>(1, static_cast<long>(std::llround(cfg_.warmup_frac * total)));
    // A healthy run never climbs this high: initial loss is ln(vocab).
    const double blowup = 10.0 * std::log(static_cast<double>(model_.config().vocab_size));

    SplitMix64 rng(seed);
    std::vector<std::size_t> order(task.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();  // forces a shuffle on the first batch
    std::size_t val_cursor = 0;

    FitResult res;
    res.best = snapshot_adapter(adapter_, config_echo_);
    double run_loss = 0;
    long run_batches = 0;
    int bad_evals = 0;

    for (long step = 1; step <= total; ++step) {
        Batch train_b{"train", {}};
        for (int b = 0; b < cfg_.batch_size; ++b) {
            if (cursor >= order.size()) {
                shuffle_indices(order, rng);
                cursor = 0;
            }
            train_b.items.push_back(&task.train[order[cursor++]]);
        }
        set_lr(scheduled_lr(cfg_.lr, step, warmup, total));

        double loss;
        if (cfg_.bilevel) {
            Batch val_b{"val", {}};
            for (int b = 0; b < cfg_.batch_size; ++b) {
                val_b.items.push_back(&task.val[val_cursor]);
                val_cursor = (val_cursor + 1) % task.val.size();
            }
            loss = bilevel_step(train_b, val_b).first;
        } else {
            loss = train_step(train_b);
        }
        res.steps_run = step;
        if (!std::isfinite(loss) || loss > blowup) {
            res.diverged = true;
            break;
        }
        run_loss += loss;
        ++run_batches;

        if (step % cfg_.eval_interval == 0 || step == total) {
            MetricsRow tr{step,          "train",
                          run_loss / run_batches, 0.0,
                          omega_opt_.lr(),        theta_updates_,
                          omega_updates_};
            run_loss = 0;
            run_batches = 0;

            EvalResult ev = evaluate(task.val);
            res.history.push_back(tr);
            res.history.push_back(MetricsRow{step, "val", ev.loss, ev.accuracy,
                                             omega_opt_.lr(), theta_updates_, omega_updates_});
            if (ev.loss < res.best_val_loss - 1e-9) {
                res.best_val_loss = ev.loss;
                res.best_step = step;
                res.best = snapshot_adapter(adapter_, config_echo_);
                bad_evals = 0;
            } else if (++bad_evals >= cfg_.patience) {
                res.early_stopped = true;
                break;
            }
        }
    }
    res.theta_updates = theta_updates_;
    res.omega_updates = omega_updates_;
    if (res.best_val_loss < std::numeric_limits<double>::infinity())
        restore_adapter(adapter_, res.best);
    return res;
}

}  // namespace pedro
