#pragma once

// Zero-shot scoring of images against categories and the metrics reported
// on it (per-class and macro AUC / F1 / ACC).

#include "dfat/alignment_losses.hpp"
#include "dfat/data_ingest.hpp"
#include "dfat/dfat_model.hpp"
#include "dfat/knowledge_bank.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dfat::eval {

using ad::Matrix;

enum class ScoringMode { pos_neg_softmax, bank_cosine };
enum class ThresholdPolicy { fixed, youden_on_val };
enum class ThresholdScope { per_class, global };

std::string_view to_string(ScoringMode m);
std::string_view to_string(ThresholdPolicy p);
std::string_view to_string(ThresholdScope s);
ScoringMode parse_scoring_mode(std::string_view s);
ThresholdPolicy parse_threshold_policy(std::string_view s);
ThresholdScope parse_threshold_scope(std::string_view s);

struct ScoreMatrix {
    Matrix scores;  // M images x N categories
    // Same order as `scores` within each column but without saturation
    // (log-odds for pos_neg). AUC and top-1 rank by it when present.
    Matrix ranking;
    ScoringMode mode = ScoringMode::pos_neg_softmax;
    std::string model_fingerprint;
    std::string bank_fingerprint;
};

struct ScoringOptions {
    ScoringMode mode = ScoringMode::pos_neg_softmax;
    double tau = 0.05;
    // Pairings the model was trained on; decides which image and text
    // features are compared.
    losses::FeatureCombo combo = losses::FeatureCombo::both;
};

// Cross-modal similarity matrix averaged over the trained pairings.
Matrix pairing_similarity(const EncodedBatch& images, const EncodedBatch& texts, losses::FeatureCombo combo);

ScoreMatrix score_images(DfatModel& model, const knowledge::KnowledgeBank* bank, const std::vector<std::string>& categories,
                         std::span<const Matrix> images, const ScoringOptions& options);

struct AucResult {
    std::optional<double> value;
    std::string reason;  // set when value is absent
};

// Probability that a random positive outranks a random negative, ties
// counting one half. Computed from doubled mid-ranks in integer arithmetic.
AucResult auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
};

// Positive prediction means score >= threshold.
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);

struct F1Acc {
    double f1 = 0.0;
    double acc = 0.0;
    double threshold = 0.5;
};

F1Acc f1_acc(std::span<const double> scores, std::span<const int> labels, double threshold);

// Threshold maximising TPR - FPR; the smallest such candidate wins ties.
double youden_threshold(std::span<const double> scores, std::span<const int> labels);

struct ThresholdOptions {
    ThresholdPolicy policy = ThresholdPolicy::fixed;
    ThresholdScope scope = ThresholdScope::per_class;
    double fixed_value = 0.5;
};

struct ClassMetrics {
    std::string name;
    std::optional<double> auc;
    std::string auc_note;
    double f1 = 0.0;
    double acc = 0.0;
    double threshold = 0.5;
    int positives = 0;
    int negatives = 0;
};

struct EvalReport {
    std::vector<ClassMetrics> per_class;
    std::optional<double> macro_auc;  // over classes with a defined AUC
    double macro_f1 = 0.0;
    double macro_acc = 0.0;
    double top1_accuracy = 0.0;  // argmax lands on a positive label
    int samples = 0;
    ScoringMode mode = ScoringMode::pos_neg_softmax;
    ThresholdOptions thresholds;
    ScoreMatrix scores;

    std::string to_json() const;
    std::string to_table(const std::string& dataset_name = "") const;
};

// Metrics from scores; `val_*` are required for youden_on_val.
EvalReport report_from_scores(const ScoreMatrix& scores, const Matrix& labels, const std::vector<std::string>& categories,
                              const ThresholdOptions& thresholds, const Matrix* val_scores = nullptr,
                              const Matrix* val_labels = nullptr);

struct EvalOptions {
    ScoringOptions scoring;
    ThresholdOptions thresholds;
    data::Split split = data::Split::test;
};

EvalOptions eval_options_from(const ExperimentConfig& cfg);

EvalReport evaluate(DfatModel& model, const knowledge::KnowledgeBank* bank, const data::Dataset& dataset, const EvalOptions& options);

}  // namespace dfat::eval
