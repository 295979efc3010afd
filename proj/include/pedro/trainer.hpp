#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pedro/adapter.hpp"
#include "pedro/backbone.hpp"
#include "pedro/checkpoint.hpp"
#include "pedro/config.hpp"
#include "pedro/optim.hpp"
#include "pedro/tasks.hpp"

namespace pedro {

// A slice of one split. The split tag travels with the batch so bi-level
// steps can refuse to take both gradients from the same distribution.
struct Batch {
    std::string split;
    std::vector<const Example*> items;
};

struct MetricsRow {
    long step = 0;
    std::string split;
    double loss = 0;
    double accuracy = 0;
    double lr = 0;
    long theta_updates = 0;
    long omega_updates = 0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct EvalResult {
    double loss = 0;
    double accuracy = 0;
    int n_examples = 0;
};

struct FitResult {
    std::vector<MetricsRow> history;
    double best_val_loss = std::numeric_limits<double>::infinity();
    long best_step = 0;
    long steps_run = 0;
    bool early_stopped = false;
    bool diverged = false;
    long theta_updates = 0;
    long omega_updates = 0;
    Checkpoint best;  // adapter parameters at the best validation loss
};

Checkpoint snapshot_adapter(Adapter<float>& adapter, const std::string& config_echo);
void restore_adapter(Adapter<float>& adapter, const Checkpoint& ck);

// Brief language-model pass over a generic corpus that unfreezes the
// backbone, trains it, and freezes it again. Returns the final batch loss.
double pretrain_backbone(Backbone<float>& model, const std::vector<Example>& corpus,
                         const PretrainConfig& cfg);

// Teacher-forced mean loss plus greedy-generation token accuracy, with or
// without an adapter attached.
EvalResult evaluate_examples(Backbone<float>& model, Adapter<float>* adapter,
                             const std::vector<Example>& xs);

// Fine-tuning loop over a frozen backbone. Plain mode updates every adapter
// parameter from train batches. Bi-level mode alternates: main parameters
// (Ω) step on a train batch, then activation coefficients (Θ) step on a
// validation batch, first-order, per batch.
class Trainer {
  public:
    Trainer(Backbone<float>& model, Adapter<float>& adapter, const TrainConfig& cfg,
            std::string config_echo = "");

    // One optimizer step on `batch`; returns its mean token loss.
    double train_step(const Batch& batch);

    // One Ω step on the train batch then one Θ step on the val batch;
    // returns both mean losses.
    std::pair<double, double> bilevel_step(const Batch& train_batch, const Batch& val_batch);

    FitResult fit(const TaskData& task, std::uint64_t seed);

    // Teacher-forced mean loss plus greedy-generation token accuracy.
    EvalResult evaluate(const std::vector<Example>& xs);

    void set_lr(double lr);
    long theta_updates() const { return theta_updates_; }
    long omega_updates() const { return omega_updates_; }

  private:
    struct BatchStats {
        double loss = 0;
        double accuracy = 0;
    };

    Tensor<float> batch_loss(const Batch& batch, BatchStats* stats);

    Backbone<float>& model_;
    Adapter<float>& adapter_;
    TrainConfig cfg_;
    std::string config_echo_;
    Tokenizer tok_;
    AdamW<float> omega_opt_;
    std::unique_ptr<AdamW<float>> theta_opt_;  // present only in bi-level mode
    long theta_updates_ = 0;
    long omega_updates_ = 0;
};

}  // namespace pedro
