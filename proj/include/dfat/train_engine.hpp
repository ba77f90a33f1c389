#pragma once

// Training loop: batch assembly, dual-branch forward on a tape, L_total,
// AdamW with warmup + cosine decay, anchor refresh, checkpoint selection on
// validation macro AUC, and resumable state.

#include "dfat/alignment_losses.hpp"
#include "dfat/config.hpp"
#include "dfat/data_ingest.hpp"
#include "dfat/dfat_model.hpp"
#include "dfat/knowledge_bank.hpp"
#include "dfat/zeroshot_eval.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dfat::train {

using ad::Matrix;

// Linear warmup to cfg.lr over round(warmup_fraction * max_steps) steps,
// then cosine decay reaching 0 at max_steps.
double lr_at(int step, const TrainConfig& cfg);

struct LogRecord {
    int step = 0;
    double lr = 0.0;
    double total = 0.0;
    double ca = 0.0;
    double cg = 0.0;
    double grad_norm = 0.0;

    std::string to_json() const;
    bool operator==(const LogRecord&) const = default;
};

struct TrainState {
    int step = 0;
    std::map<std::string, Matrix> first_moment;
    std::map<std::string, Matrix> second_moment;
    std::mt19937_64 rng;
    std::vector<std::size_t> order;  // sampler permutation of the training split
    std::size_t cursor = 0;
    double best_val = -1.0;  // best validation macro AUC so far, -1 before any
    int best_step = -1;
    std::vector<LogRecord> log;

    void save(const std::filesystem::path& dir) const;
    static TrainState load(const std::filesystem::path& dir);
};

TrainState initial_state(std::uint64_t seed, std::size_t train_size);

// Next batch of indices; reshuffles after each pass.
std::vector<std::size_t> next_batch(TrainState& state, std::size_t batch_size);

struct StepResult {
    LogRecord record;
    losses::LossBreakdown breakdown;
};

// One AdamW step on L_total; refreshes the bank's anchors afterwards.
StepResult train_step(DfatModel& model, TrainState& state, std::span<const data::PairedSample* const> batch,
                      knowledge::KnowledgeBank& bank, const ExperimentConfig& cfg);

// Loss of a batch without updating anything.
losses::LossBreakdown batch_loss(DfatModel& model, std::span<const data::PairedSample* const> batch,
                                 const knowledge::KnowledgeBank& bank, const ExperimentConfig& cfg);

struct FitOptions {
    // Receives last/ (model, bank, state) and best/ (model, bank); empty disables.
    std::filesystem::path checkpoint_dir;
    // Stop early after this many total steps (simulates an interruption).
    std::optional<int> stop_after;
    // Continue from checkpoint_dir/last instead of starting fresh.
    bool resume = false;
};

struct FitResult {
    DfatModel model;  // selected model (best on validation when enabled)
    knowledge::KnowledgeBank bank;
    TrainState state;
    std::optional<double> best_val_auc;
    int best_step = -1;
};

// Validation macro AUC under the configured scoring; empty when undefined.
std::optional<double> validation_auc(DfatModel& model, const knowledge::KnowledgeBank& bank, const data::Dataset& dataset,
                                     const ExperimentConfig& cfg);

FitResult fit(const ExperimentConfig& cfg, DfatModel model, knowledge::KnowledgeBank bank, const data::Dataset& dataset,
              const FitOptions& options = {});

// Checkpoint directory helpers (model files plus bank/ subdirectory).
void save_checkpoint(const std::filesystem::path& dir, const DfatModel& model, const knowledge::KnowledgeBank& bank);
std::pair<DfatModel, knowledge::KnowledgeBank> load_checkpoint(const std::filesystem::path& dir);

struct LinearProbe {
    Matrix weight;           // K x N
    Eigen::RowVectorXd bias; // 1 x N

    Matrix scores(const Matrix& features) const;  // sigmoid outputs
};

struct FinetuneResult {
    LinearProbe probe;
    eval::EvalReport report;  // on the test split
    int train_samples = 0;
};

// Per-class logistic probe on frozen global image features, trained
// full-batch with Adam on a stratified fraction of the training split.
FinetuneResult finetune_classifier(DfatModel& model, const data::Dataset& dataset, double fraction, int epochs, double lr,
                                   std::uint64_t seed, const eval::ThresholdOptions& thresholds = {});

}  // namespace dfat::train
