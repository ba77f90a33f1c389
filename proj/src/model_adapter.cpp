#include "dfat/model_adapter.hpp"

#include "dfat/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace dfat::model {

std::string_view to_string(ModalityFusion v) {
    return v == ModalityFusion::prefix_patches ? "prefix_patches" : "none";
}

std::string_view to_string(TrainableScope v) {
    switch (v) {
        case TrainableScope::full: return "full";
        case TrainableScope::adapters_only: return "adapters_only";
        case TrainableScope::projections_only: return "projections_only";
    }
    return "full";
}

std::string_view to_string(Branch v) { return v == Branch::image ? "image" : "text"; }

ModalityFusion parse_modality_fusion(std::string_view s) {
    if (s == "prefix_patches") return ModalityFusion::prefix_patches;
    if (s == "none") return ModalityFusion::none;
    throw ConfigError("unknown modality_fusion `" + std::string(s) + "`");
}

TrainableScope parse_trainable_scope(std::string_view s) {
    if (s == "full") return TrainableScope::full;
    if (s == "adapters_only") return TrainableScope::adapters_only;
    if (s == "projections_only") return TrainableScope::projections_only;
    throw ConfigError("unknown trainable_scope `" + std::string(s) + "`");
}

void BackboneSpec::validate() const {
    if (num_layers < 2) throw ConfigError("backbone needs num_layers >= 2 so a penultimate layer exists");
    if (hidden_dim <= 0) throw ConfigError("backbone hidden_dim must be positive");
    if (vocab_size < 2) throw ConfigError("backbone vocab_size must cover the reserved pad/unk ids");
    if (max_seq_len <= 0) throw ConfigError("backbone max_seq_len must be positive");
    if (ffn_dim < 0) throw ConfigError("backbone ffn_dim must be >= 0");
    if (modality_fusion == ModalityFusion::prefix_patches && (num_patches <= 0 || patch_dim <= 0)) {
        throw ConfigError("prefix_patches fusion needs positive num_patches and patch_dim");
    }
}

void BackboneSpec::write(io::KeyValues& kv, const std::string& p) const {
    kv.set(p + "vocab_size", vocab_size);
    kv.set(p + "hidden_dim", hidden_dim);
    kv.set(p + "num_layers", num_layers);
    kv.set(p + "max_seq_len", max_seq_len);
    kv.set(p + "modality_fusion", std::string(to_string(modality_fusion)));
    kv.set(p + "trainable_scope", std::string(to_string(trainable_scope)));
    kv.set(p + "num_patches", num_patches);
    kv.set(p + "patch_dim", patch_dim);
    kv.set(p + "ffn_dim", ffn_dim);
}

void BackboneSpec::read(const io::KeyValues& kv, const std::string& p) {
    auto int_key = [&](const char* k, int& dst) {
        if (kv.contains(p + k)) dst = static_cast<int>(kv.get_int(p + k));
    };
    int_key("vocab_size", vocab_size);
    int_key("hidden_dim", hidden_dim);
    int_key("num_layers", num_layers);
    int_key("max_seq_len", max_seq_len);
    int_key("num_patches", num_patches);
    int_key("patch_dim", patch_dim);
    int_key("ffn_dim", ffn_dim);
    if (kv.contains(p + "modality_fusion")) modality_fusion = parse_modality_fusion(kv.get(p + "modality_fusion"));
    if (kv.contains(p + "trainable_scope")) trainable_scope = parse_trainable_scope(kv.get(p + "trainable_scope"));
}

SpecialTokenPlan SpecialTokenPlan::make(int base_vocab, int image_count, int text_count) {
    SpecialTokenPlan plan;
    for (int i = 0; i < image_count; ++i) plan.image_tokens.push_back(base_vocab + i);
    for (int i = 0; i < text_count; ++i) plan.text_tokens.push_back(base_vocab + image_count + i);
    plan.validate(base_vocab);
    return plan;
}

bool SpecialTokenPlan::is_special(int id) const {
    return std::find(image_tokens.begin(), image_tokens.end(), id) != image_tokens.end() ||
           std::find(text_tokens.begin(), text_tokens.end(), id) != text_tokens.end();
}

void SpecialTokenPlan::validate(int base_vocab) const {
    if (image_tokens.empty() || text_tokens.empty()) {
        throw ConfigError("special token plan needs at least one image and one text token");
    }
    std::set<int> seen;
    for (const auto* list : {&image_tokens, &text_tokens}) {
        for (int id : *list) {
            if (id < base_vocab) throw ConfigError("special token id " + std::to_string(id) + " collides with the base vocabulary");
            if (!seen.insert(id).second) throw ConfigError("duplicate special token id " + std::to_string(id));
        }
    }
    // Embedding rows are laid out as base vocabulary followed by the specials.
    if (*seen.rbegin() != base_vocab + total() - 1) {
        throw ConfigError("special token ids must occupy the ids directly after the base vocabulary");
    }
}

AugmentedPrompt augment_prompt(std::span<const int> prompt, const SpecialTokenPlan& plan, Branch branch, int max_seq_len) {
    auto specials = plan.tokens(branch);
    if (specials.empty()) {
        throw ConfigError("token plan has no special tokens for the " + std::string(to_string(branch)) + " branch");
    }
    for (int id : prompt) {
        if (plan.is_special(id)) throw ConfigError("prompt already contains special token " + std::to_string(id));
    }
    const std::size_t len = prompt.size() + specials.size();
    if (len > static_cast<std::size_t>(max_seq_len)) {
        throw ConfigError("augmented prompt length " + std::to_string(len) + " exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    AugmentedPrompt out;
    out.tokens.assign(prompt.begin(), prompt.end());
    for (int id : specials) {
        out.special_positions.push_back(static_cast<int>(out.tokens.size()));
        out.tokens.push_back(id);
    }
    return out;
}

std::vector<int> SequenceInput::ordinary_positions() const {
    std::vector<int> out;
    const int n = length();
    std::size_t s = 0;
    std::vector<int> sorted = special_positions;
    std::sort(sorted.begin(), sorted.end());
    for (int p = 0; p < n; ++p) {
        if (s < sorted.size() && sorted[s] == p) {
            ++s;
            continue;
        }
        out.push_back(p);
    }
    return out;
}

std::string Backbone::fingerprint() {
    io::Fingerprint fp;
    io::KeyValues kv;
    spec().write(kv);
    fp.update(kv.to_string());
    for (int id : token_plan().image_tokens) fp.update(&id, sizeof(id));
    for (int id : token_plan().text_tokens) fp.update(&id, sizeof(id));
    for (const ad::Parameter* p : parameters()) {
        fp.update(p->name);
        fp.update(p->value);
    }
    return fp.hex();
}

std::string Backbone::generate(std::string_view) {
    throw ConfigError("this backbone does not support free text generation");
}

namespace {

Matrix normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    }
    return m;
}

std::string layer_key(int layer, const char* leaf) { return "layers." + std::to_string(layer) + "." + leaf; }

}  // namespace

TinyDecoder::TinyDecoder(BackboneSpec spec, SpecialTokenPlan plan, std::uint64_t seed)
    : spec_(spec), plan_(std::move(plan)), seed_(seed) {
    spec_.validate();
    plan_.validate(spec_.vocab_size);

    std::mt19937_64 rng(seed);
    const int d = spec_.hidden_dim;
    const int f = spec_.resolved_ffn_dim();
    const double w = 0.02;

    params_.emplace_back("embed.base", normal_matrix(rng, spec_.vocab_size, d, w));
    params_.emplace_back("embed.special", normal_matrix(rng, plan_.total(), d, 0.02));
    if (spec_.modality_fusion == ModalityFusion::prefix_patches) {
        params_.emplace_back("patch.weight", normal_matrix(rng, spec_.patch_dim, d, 1.0 / std::sqrt(static_cast<double>(spec_.patch_dim))));
        params_.emplace_back("patch.bias", Matrix::Zero(1, d));
    }
    for (int l = 0; l < spec_.num_layers; ++l) {
        params_.emplace_back(layer_key(l, "ln1.gain"), Matrix::Ones(1, d));
        params_.emplace_back(layer_key(l, "ln1.bias"), Matrix::Zero(1, d));
        params_.emplace_back(layer_key(l, "attn.wq"), normal_matrix(rng, d, d, w));
        params_.emplace_back(layer_key(l, "attn.wk"), normal_matrix(rng, d, d, w));
        params_.emplace_back(layer_key(l, "attn.wv"), normal_matrix(rng, d, d, w));
        params_.emplace_back(layer_key(l, "attn.wo"), normal_matrix(rng, d, d, w));
        params_.emplace_back(layer_key(l, "ln2.gain"), Matrix::Ones(1, d));
        params_.emplace_back(layer_key(l, "ln2.bias"), Matrix::Zero(1, d));
        params_.emplace_back(layer_key(l, "mlp.w1"), normal_matrix(rng, d, f, w));
        params_.emplace_back(layer_key(l, "mlp.b1"), Matrix::Zero(1, f));
        params_.emplace_back(layer_key(l, "mlp.w2"), normal_matrix(rng, f, d, w));
        params_.emplace_back(layer_key(l, "mlp.b2"), Matrix::Zero(1, d));
    }
    for (auto& p : params_) p.zero_grad();
    apply_scope();
}

void TinyDecoder::apply_scope() {
    for (auto& p : params_) {
        const std::string& n = p.name;
        const bool is_norm = n.find(".ln1.") != std::string::npos || n.find(".ln2.") != std::string::npos;
        const bool is_patch = n.rfind("patch.", 0) == 0;
        switch (spec_.trainable_scope) {
            case TrainableScope::full: p.trainable = true; break;
            // The patch projector plays the role of LLaVA's connector; norms stand in for adapters.
            case TrainableScope::adapters_only: p.trainable = is_norm || is_patch; break;
            case TrainableScope::projections_only: p.trainable = false; break;
        }
        if (n == "embed.special") p.trainable = true;
    }
}

std::vector<ad::Parameter*> TinyDecoder::parameters() {
    std::vector<ad::Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

ad::Parameter& TinyDecoder::parameter(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw ConfigError("tiny decoder has no parameter `" + name + "`");
}

void TinyDecoder::validate_input(const SequenceInput& in) const {
    const bool wants_patches = spec_.modality_fusion == ModalityFusion::prefix_patches && in.branch == Branch::image;
    if (wants_patches) {
        if (in.patches.rows() != spec_.num_patches || in.patches.cols() != spec_.patch_dim) {
            throw ConfigError("image features must be " + std::to_string(spec_.num_patches) + "x" + std::to_string(spec_.patch_dim) +
                              ", got " + std::to_string(in.patches.rows()) + "x" + std::to_string(in.patches.cols()));
        }
    } else if (in.patches.size() != 0) {
        throw ConfigError("image features supplied where the backbone expects none");
    }
    if (in.length() == 0) throw ConfigError("empty input sequence");
    if (in.length() > spec_.max_seq_len) {
        throw ConfigError("sequence length " + std::to_string(in.length()) + " exceeds max_seq_len " + std::to_string(spec_.max_seq_len));
    }
    for (int p : in.special_positions) {
        if (p < 0 || p >= in.length()) throw ConfigError("special position out of range");
    }
}

ad::Var TinyDecoder::forward(ad::Tape& tape, const SequenceInput& in, int layer_index) {
    if (layer_index < 0 || layer_index > spec_.num_layers) {
        throw ConfigError("layer_index " + std::to_string(layer_index) + " outside [0, " + std::to_string(spec_.num_layers) + "]");
    }
    validate_input(in);

    ad::Var tokens = ad::embedding(tape.param(parameter("embed.base")), tape.param(parameter("embed.special")), in.tokens);
    ad::Var x = tokens;
    if (in.patches.rows() > 0) {
        ad::Var proj = ad::add_row(ad::matmul(tape.constant(in.patches), tape.param(parameter("patch.weight"))),
                                   tape.param(parameter("patch.bias")));
        if (in.tokens.empty()) {
            x = proj;
        } else {
            const ad::Var parts[] = {proj, tokens};
            x = ad::concat_rows(parts);
        }
    }

    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(spec_.hidden_dim));
    for (int l = 0; l < layer_index; ++l) {
        auto P = [&](const char* leaf) { return tape.param(parameter(layer_key(l, leaf))); };
        ad::Var h = ad::layer_norm(x, P("ln1.gain"), P("ln1.bias"));
        ad::Var q = ad::rotary(ad::matmul(h, P("attn.wq")));
        ad::Var k = ad::rotary(ad::matmul(h, P("attn.wk")));
        ad::Var v = ad::matmul(h, P("attn.wv"));
        ad::Var att = ad::causal_softmax(ad::scale(ad::matmul_nt(q, k), attn_scale));
        x = ad::add(x, ad::matmul(ad::matmul(att, v), P("attn.wo")));

        ad::Var m = ad::layer_norm(x, P("ln2.gain"), P("ln2.bias"));
        ad::Var hidden = ad::gelu(ad::add_row(ad::matmul(m, P("mlp.w1")), P("mlp.b1")));
        x = ad::add(x, ad::add_row(ad::matmul(hidden, P("mlp.w2")), P("mlp.b2")));
    }
    return x;
}

void TinyDecoder::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    io::KeyValues kv;
    spec_.write(kv);
    kv.set("backbone.kind", "tiny_decoder");
    kv.set("backbone.seed", seed_);
    kv.set("plan.image_count", plan_.image_count());
    kv.set("plan.text_count", plan_.text_count());
    kv.set("plan.image_tokens", [&] {
        std::string s;
        for (int id : plan_.image_tokens) s += (s.empty() ? "" : ",") + std::to_string(id);
        return s;
    }());
    kv.set("plan.text_tokens", [&] {
        std::string s;
        for (int id : plan_.text_tokens) s += (s.empty() ? "" : ",") + std::to_string(id);
        return s;
    }());
    kv.save(dir / "backbone.manifest");

    std::vector<io::NamedTensor> tensors;
    for (const auto& p : params_) tensors.push_back({p.name, p.value});
    io::write_tensors(dir / "backbone.bin", tensors);
}

std::unique_ptr<TinyDecoder> TinyDecoder::load(const std::filesystem::path& dir) {
    const auto kv = io::KeyValues::load(dir / "backbone.manifest");
    if (kv.get("backbone.kind") != "tiny_decoder") throw DataError("unsupported backbone kind in " + dir.string());
    BackboneSpec spec;
    spec.read(kv);
    auto parse_ids = [&](const std::string& key) {
        std::vector<int> ids;
        for (const auto& part : io::split(kv.get(key), ',')) ids.push_back(std::stoi(part));
        return ids;
    };
    SpecialTokenPlan plan;
    plan.image_tokens = parse_ids("plan.image_tokens");
    plan.text_tokens = parse_ids("plan.text_tokens");
    auto model = std::make_unique<TinyDecoder>(spec, plan, kv.get_uint("backbone.seed"));

    auto tensors = io::read_tensors(dir / "backbone.bin");
    if (tensors.size() != model->params_.size()) throw DataError("parameter count mismatch in " + dir.string());
    for (auto& t : tensors) {
        ad::Parameter& p = model->parameter(t.name);
        if (p.value.rows() != t.value.rows() || p.value.cols() != t.value.cols()) {
            throw DataError("shape mismatch for parameter `" + t.name + "` in " + dir.string());
        }
        p.value = std::move(t.value);
    }
    return model;
}

std::unique_ptr<TinyDecoder> build_reference_model(const BackboneSpec& spec, const SpecialTokenPlan& plan, std::uint64_t seed) {
    return std::make_unique<TinyDecoder>(spec, plan, seed);
}

std::vector<HiddenStateView> forward_hidden(Backbone& backbone, std::span<const SequenceInput> batch, int layer_index) {
    // Layer 0 (raw embeddings) is served for inspection alongside [1, num_layers].
    if (layer_index < 0 || layer_index > backbone.spec().num_layers) {
        throw ConfigError("layer_index " + std::to_string(layer_index) + " outside [0, " +
                          std::to_string(backbone.spec().num_layers) + "]");
    }
    int padded = 0;
    for (const auto& in : batch) padded = std::max(padded, in.length());

    std::vector<HiddenStateView> out;
    out.reserve(batch.size());
    for (const auto& in : batch) {
        ad::Tape tape(false);
        ad::Var states = backbone.forward(tape, in, layer_index);
        HiddenStateView view;
        view.layer_index = layer_index;
        view.length = in.length();
        view.states = Matrix::Zero(padded, backbone.spec().hidden_dim);
        view.states.topRows(view.length) = states.value();
        view.special_positions = in.special_positions;
        view.ordinary_positions = in.ordinary_positions();
        out.push_back(std::move(view));
    }
    return out;
}

InputComposer::InputComposer(const BackboneSpec& spec, SpecialTokenPlan plan, std::vector<int> image_prompt, std::vector<int> text_prompt)
    : spec_(spec), plan_(std::move(plan)), image_prompt_(std::move(image_prompt)), text_prompt_(std::move(text_prompt)) {
    spec_.validate();
    plan_.validate(spec_.vocab_size);
    const int prefix = spec_.modality_fusion == ModalityFusion::prefix_patches ? spec_.num_patches : 0;
    if (prefix + static_cast<int>(image_prompt_.size()) + plan_.image_count() > spec_.max_seq_len) {
        throw ConfigError("max_seq_len is shorter than the augmented image prompt");
    }
    if (static_cast<int>(text_prompt_.size()) + plan_.text_count() > spec_.max_seq_len) {
        throw ConfigError("max_seq_len is shorter than the augmented text prompt");
    }
}

SequenceInput InputComposer::image(const Matrix& patches) const {
    SequenceInput in;
    in.branch = Branch::image;
    if (spec_.modality_fusion == ModalityFusion::prefix_patches) in.patches = patches;
    const int prefix = static_cast<int>(in.patches.rows());
    auto aug = augment_prompt(image_prompt_, plan_, Branch::image, spec_.max_seq_len - prefix);
    in.tokens = std::move(aug.tokens);
    for (int p : aug.special_positions) in.special_positions.push_back(prefix + p);
    return in;
}

SequenceInput InputComposer::text(std::span<const int> content, bool* truncated) const {
    const std::size_t budget = static_cast<std::size_t>(spec_.max_seq_len) - text_prompt_.size() - static_cast<std::size_t>(plan_.text_count());
    const std::size_t keep = std::min(content.size(), budget);
    if (truncated != nullptr) *truncated = keep < content.size();

    std::vector<int> prompt(content.begin(), content.begin() + static_cast<std::ptrdiff_t>(keep));
    prompt.insert(prompt.end(), text_prompt_.begin(), text_prompt_.end());
    auto aug = augment_prompt(prompt, plan_, Branch::text, spec_.max_seq_len);

    SequenceInput in;
    in.branch = Branch::text;
    in.tokens = std::move(aug.tokens);
    in.special_positions = std::move(aug.special_positions);
    return in;
}

std::string describe_category(const std::string& category_name, const std::string& knowledge_prompt, Backbone* backbone,
                              const knowledge::CategoryCorpus* corpus) {
    if (corpus != nullptr) {
        const knowledge::CorpusEntry* e = corpus->find(category_name);
        if (e == nullptr) throw ConfigError("category `" + category_name + "` has no description in the supplied corpus");
        return e->description;
    }
    if (backbone != nullptr && backbone->supports_generation()) {
        std::string prompt = knowledge_prompt;
        const std::string slot = "{category}";
        if (auto pos = prompt.find(slot); pos != std::string::npos) {
            prompt.replace(pos, slot.size(), category_name);
        } else {
            prompt += " " + category_name;
        }
        std::string text = backbone->generate(prompt);
        if (io::trim(text).empty()) throw ConfigError("backbone generated an empty description for `" + category_name + "`");
        return text;
    }
    throw ConfigError("no description source: backbone cannot generate and no corpus file was supplied");
}

}  // namespace dfat::model
