#pragma once

// Experiment configuration as flat dotted keys.
//
// Every field has a default; a config file or `--set key=value` override may
// only touch keys that to_kv() emits.

#include "dfat/alignment_losses.hpp"
#include "dfat/io.hpp"
#include "dfat/model_adapter.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dfat {

struct PromptConfig {
    std::string image = "describe this chest image";
    std::string text = "summarize this report";
    std::string positive = "Findings suggesting {class}.";
    std::string negative = "No evidence of {class}.";
    std::string knowledge = "Describe the radiographic appearance of {category}.";
};

// Replaces every `{key}` in `tmpl` with `value`.
std::string fill_template(const std::string& tmpl, const std::string& key, const std::string& value);

struct TrainConfig {
    double lr = 2e-3;
    double weight_decay = 0.0;
    std::string schedule = "cosine";
    double warmup_fraction = 0.03;
    int batch_size = 16;
    int max_steps = 500;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // 0 disables clipping
    int eval_interval = 50;  // 0 evaluates only at the end
    std::string precision = "fp64";
    bool select_best = true;

    void validate() const;
};

struct FeatureConfig {
    int dim = 32;
    int head_depth = 2;
    bool separate_local = false;
    bool normalize = true;
    int layer = -1;  // -1 selects the penultimate layer

    int resolved_layer(const model::BackboneSpec& spec) const { return layer < 0 ? spec.penultimate_layer() : layer; }
};

struct EvalConfig {
    std::string mode = "pos_neg_softmax";
    std::string threshold = "fixed";  // fixed | youden_on_val
    double threshold_value = 0.5;
    std::string threshold_scope = "per_class";  // per_class | global
};

struct ExperimentConfig {
    std::uint64_t seed = 7;
    model::BackboneSpec model;
    int image_tokens = 4;
    int text_tokens = 8;
    FeatureConfig features;
    losses::LossConfig loss;
    TrainConfig train;
    PromptConfig prompts;
    EvalConfig eval;
    std::string knowledge_corpus = "dataset";  // d1 | d2 | dataset | path to a .tsv
    double finetune_fraction = 1.0;
    int finetune_epochs = 200;
    double finetune_lr = 0.05;

    ExperimentConfig();

    io::KeyValues to_kv() const;
    static ExperimentConfig from_kv(const io::KeyValues& kv);
    static ExperimentConfig load(const std::filesystem::path& path);
    // Applies `key=value` overrides; unknown keys are configuration errors.
    ExperimentConfig with_overrides(const std::vector<std::pair<std::string, std::string>>& overrides) const;
    void validate() const;
};

std::pair<std::string, std::string> parse_override(const std::string& text);

}  // namespace dfat
