#include "dfat/config.hpp"

#include "dfat/errors.hpp"

namespace dfat {

std::string fill_template(const std::string& tmpl, const std::string& key, const std::string& value) {
    const std::string slot = "{" + key + "}";
    std::string out = tmpl;
    for (auto at = out.find(slot); at != std::string::npos; at = out.find(slot, at + value.size())) out.replace(at, slot.size(), value);
    return out;
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (schedule != "cosine") throw ConfigError("train.schedule `" + schedule + "` is not supported (cosine)");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("train.warmup_fraction must lie in [0, 1)");
    if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2 for contrastive training");
    if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("AdamW betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
    if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be non-negative");
    if (eval_interval < 0) throw ConfigError("train.eval_interval must be non-negative");
    if (precision == "fp32") throw ConfigError("train.precision=fp32 is not available; this build computes in fp64");
    if (precision != "fp64") throw ConfigError("unknown train.precision `" + precision + "`");
}

ExperimentConfig::ExperimentConfig() {
    model.vocab_size = 160;
    model.hidden_dim = 32;
    model.num_layers = 2;
    model.max_seq_len = 96;
}

io::KeyValues ExperimentConfig::to_kv() const {
    io::KeyValues kv;
    kv.set("seed", seed);
    model.write(kv, "model.");
    kv.set("tokens.image", image_tokens);
    kv.set("tokens.text", text_tokens);
    kv.set("features.dim", features.dim);
    kv.set("features.head_depth", features.head_depth);
    kv.set("features.separate_local", features.separate_local);
    kv.set("features.normalize", features.normalize);
    kv.set("features.layer", features.layer);
    kv.set("loss.tau", loss.tau);
    kv.set("loss.lambda", loss.lambda);
    kv.set("loss.reduction", std::string(losses::to_string(loss.reduction)));
    kv.set("loss.skip_zero_positive", loss.skip_zero_positive);
    kv.set("loss.combo", std::string(losses::to_string(loss.combo)));
    kv.set("train.lr", train.lr);
    kv.set("train.weight_decay", train.weight_decay);
    kv.set("train.schedule", train.schedule);
    kv.set("train.warmup_fraction", train.warmup_fraction);
    kv.set("train.batch_size", train.batch_size);
    kv.set("train.max_steps", train.max_steps);
    kv.set("train.beta1", train.beta1);
    kv.set("train.beta2", train.beta2);
    kv.set("train.eps", train.eps);
    kv.set("train.grad_clip", train.grad_clip);
    kv.set("train.eval_interval", train.eval_interval);
    kv.set("train.precision", train.precision);
    kv.set("train.select_best", train.select_best);
    kv.set("prompt.image", prompts.image);
    kv.set("prompt.text", prompts.text);
    kv.set("prompt.positive", prompts.positive);
    kv.set("prompt.negative", prompts.negative);
    kv.set("prompt.knowledge", prompts.knowledge);
    kv.set("eval.mode", eval.mode);
    kv.set("eval.threshold", eval.threshold);
    kv.set("eval.threshold_value", eval.threshold_value);
    kv.set("eval.threshold_scope", eval.threshold_scope);
    kv.set("knowledge.corpus", knowledge_corpus);
    kv.set("finetune.fraction", finetune_fraction);
    kv.set("finetune.epochs", finetune_epochs);
    kv.set("finetune.lr", finetune_lr);
    return kv;
}

ExperimentConfig ExperimentConfig::from_kv(const io::KeyValues& kv) {
    ExperimentConfig c;
    const auto known = c.to_kv();
    for (const auto& [k, v] : kv.entries()) {
        if (!known.contains(k)) throw ConfigError("unknown config key `" + k + "`");
    }
    auto has = [&](const char* k) { return kv.contains(k); };
    auto num = [&](const char* k, double& dst) { if (has(k)) dst = kv.get_double(k); };
    auto integer = [&](const char* k, int& dst) { if (has(k)) dst = static_cast<int>(kv.get_int(k)); };
    auto flag = [&](const char* k, bool& dst) { if (has(k)) dst = kv.get_bool(k); };
    auto text = [&](const char* k, std::string& dst) { if (has(k)) dst = kv.get(k); };

    if (has("seed")) c.seed = kv.get_uint("seed");
    c.model.read(kv, "model.");
    integer("tokens.image", c.image_tokens);
    integer("tokens.text", c.text_tokens);
    integer("features.dim", c.features.dim);
    integer("features.head_depth", c.features.head_depth);
    flag("features.separate_local", c.features.separate_local);
    flag("features.normalize", c.features.normalize);
    integer("features.layer", c.features.layer);
    num("loss.tau", c.loss.tau);
    num("loss.lambda", c.loss.lambda);
    if (has("loss.reduction")) c.loss.reduction = losses::parse_reduction(kv.get("loss.reduction"));
    flag("loss.skip_zero_positive", c.loss.skip_zero_positive);
    if (has("loss.combo")) c.loss.combo = losses::parse_feature_combo(kv.get("loss.combo"));
    num("train.lr", c.train.lr);
    num("train.weight_decay", c.train.weight_decay);
    text("train.schedule", c.train.schedule);
    num("train.warmup_fraction", c.train.warmup_fraction);
    integer("train.batch_size", c.train.batch_size);
    integer("train.max_steps", c.train.max_steps);
    num("train.beta1", c.train.beta1);
    num("train.beta2", c.train.beta2);
    num("train.eps", c.train.eps);
    num("train.grad_clip", c.train.grad_clip);
    integer("train.eval_interval", c.train.eval_interval);
    text("train.precision", c.train.precision);
    flag("train.select_best", c.train.select_best);
    text("prompt.image", c.prompts.image);
    text("prompt.text", c.prompts.text);
    text("prompt.positive", c.prompts.positive);
    text("prompt.negative", c.prompts.negative);
    text("prompt.knowledge", c.prompts.knowledge);
    text("eval.mode", c.eval.mode);
    text("eval.threshold", c.eval.threshold);
    num("eval.threshold_value", c.eval.threshold_value);
    text("eval.threshold_scope", c.eval.threshold_scope);
    text("knowledge.corpus", c.knowledge_corpus);
    num("finetune.fraction", c.finetune_fraction);
    integer("finetune.epochs", c.finetune_epochs);
    num("finetune.lr", c.finetune_lr);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) { return from_kv(io::KeyValues::load(path)); }

ExperimentConfig ExperimentConfig::with_overrides(const std::vector<std::pair<std::string, std::string>>& overrides) const {
    auto kv = to_kv();
    for (const auto& [k, v] : overrides) {
        if (!kv.contains(k)) throw ConfigError("override names unknown config key `" + k + "`");
        kv.set(k, v);
    }
    return from_kv(kv);
}

void ExperimentConfig::validate() const {
    model.validate();
    if (image_tokens < 1 || text_tokens < 1) throw ConfigError("tokens.image and tokens.text must be at least 1");
    if (features.dim < 1) throw ConfigError("features.dim must be positive");
    if (features.head_depth < 1) throw ConfigError("features.head_depth must be at least 1");
    if (features.layer > model.num_layers || features.layer < -1 || features.layer == 0) {
        throw ConfigError("features.layer must lie in [1, " + std::to_string(model.num_layers) + "] or be -1");
    }
    loss.validate();
    train.validate();
    if (eval.mode != "pos_neg_softmax" && eval.mode != "bank_cosine") throw ConfigError("unknown eval.mode `" + eval.mode + "`");
    if (eval.threshold != "fixed" && eval.threshold != "youden_on_val") {
        throw ConfigError("unknown eval.threshold `" + eval.threshold + "`");
    }
    if (eval.threshold_scope != "per_class" && eval.threshold_scope != "global") {
        throw ConfigError("unknown eval.threshold_scope `" + eval.threshold_scope + "`");
    }
    if (!(finetune_fraction > 0.0 && finetune_fraction <= 1.0)) throw ConfigError("finetune.fraction must lie in (0, 1]");
    if (finetune_epochs < 0) throw ConfigError("finetune.epochs must be non-negative");
}

std::pair<std::string, std::string> parse_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override `" + text + "` is not of the form key=value");
    return {io::trim(text.substr(0, eq)), io::trim(text.substr(eq + 1))};
}

}  // namespace dfat
