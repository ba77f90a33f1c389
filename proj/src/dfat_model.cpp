#include "dfat/dfat_model.hpp"

#include "dfat/errors.hpp"
#include "dfat/io.hpp"

namespace dfat {

DfatModel::DfatModel(const DfatModel& other)
    : backbone(other.backbone ? other.backbone->clone() : nullptr),
      heads(other.heads),
      vocab(other.vocab),
      prompts(other.prompts),
      layer_index(other.layer_index),
      normalize(other.normalize) {}

DfatModel& DfatModel::operator=(const DfatModel& other) {
    if (this != &other) {
        DfatModel tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

model::InputComposer DfatModel::composer() const {
    if (!backbone) throw ConfigError("model has no backbone");
    return model::InputComposer(backbone->spec(), backbone->token_plan(), vocab.encode(prompts.image), vocab.encode(prompts.text));
}

model::SequenceInput DfatModel::image_input(const Matrix& patches) const { return composer().image(patches); }

model::SequenceInput DfatModel::text_input(const std::string& text, bool* truncated) const {
    return composer().text(vocab.encode(text), truncated);
}

namespace {

EncodedBatch encode(DfatModel& m, std::span<const model::SequenceInput> inputs, model::Branch branch) {
    const auto views = model::forward_hidden(*m.backbone, inputs, m.layer_index);
    const auto n = static_cast<Eigen::Index>(views.size());
    const int k = m.heads.out_dim();
    EncodedBatch out{Matrix(n, k), Matrix(n, k)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = views[static_cast<std::size_t>(i)];
        out.global.row(i) = features::project(m.heads.global_head(branch), features::pool_global(v), m.normalize);
        out.local.row(i) = features::project(m.heads.local_head(branch), features::pool_local(v), m.normalize);
    }
    return out;
}

}  // namespace

EncodedBatch DfatModel::encode_images(std::span<const Matrix> images) {
    const auto comp = composer();
    std::vector<model::SequenceInput> inputs;
    inputs.reserve(images.size());
    for (const auto& img : images) inputs.push_back(comp.image(img));
    return encode(*this, inputs, model::Branch::image);
}

EncodedBatch DfatModel::encode_texts(std::span<const std::string> texts) {
    const auto comp = composer();
    std::vector<model::SequenceInput> inputs;
    inputs.reserve(texts.size());
    for (const auto& t : texts) inputs.push_back(comp.text(vocab.encode(t)));
    return encode(*this, inputs, model::Branch::text);
}

std::vector<ad::Parameter*> DfatModel::parameters() {
    auto out = backbone->parameters();
    for (auto* p : heads.parameters()) out.push_back(p);
    return out;
}

std::string DfatModel::fingerprint() {
    io::Fingerprint fp;
    fp.update(backbone->fingerprint());
    fp.update(heads.fingerprint());
    for (int id = 0; id < vocab.size(); ++id) fp.update(vocab.word(id) + "\n");
    for (const auto* s : {&prompts.image, &prompts.text, &prompts.positive, &prompts.negative, &prompts.knowledge}) fp.update(*s + "\n");
    fp.update(std::to_string(layer_index) + (normalize ? "n" : "r"));
    return fp.hex();
}

void DfatModel::save(const std::filesystem::path& dir) const {
    auto* tiny = dynamic_cast<const model::TinyDecoder*>(backbone.get());
    if (!tiny) throw ConfigError("only the reference decoder can be checkpointed by this build");
    std::filesystem::create_directories(dir);
    tiny->save(dir);
    heads.save(dir);
    vocab.save(dir / "vocab.txt");
    io::KeyValues kv;
    kv.set("model.layer_index", layer_index);
    kv.set("model.normalize", normalize);
    kv.set("prompt.image", prompts.image);
    kv.set("prompt.text", prompts.text);
    kv.set("prompt.positive", prompts.positive);
    kv.set("prompt.negative", prompts.negative);
    kv.set("prompt.knowledge", prompts.knowledge);
    kv.save(dir / "model.manifest");
}

DfatModel DfatModel::load(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "model.manifest")) throw DataError("no checkpoint found in " + dir.string());
    DfatModel m;
    m.backbone = model::TinyDecoder::load(dir);
    m.heads = features::ProjectionHeads::load(dir);
    m.vocab = model::Vocabulary::load(dir / "vocab.txt");
    const auto kv = io::KeyValues::load(dir / "model.manifest");
    m.layer_index = static_cast<int>(kv.get_int("model.layer_index"));
    m.normalize = kv.get_bool("model.normalize");
    m.prompts.image = kv.get("prompt.image");
    m.prompts.text = kv.get("prompt.text");
    m.prompts.positive = kv.get("prompt.positive");
    m.prompts.negative = kv.get("prompt.negative");
    m.prompts.knowledge = kv.get("prompt.knowledge");
    if (m.heads.image.in_dim != m.backbone->spec().hidden_dim) throw DataError("checkpoint heads do not match the backbone width");
    return m;
}

DfatModel make_model(const ExperimentConfig& cfg, model::Vocabulary vocab) {
    cfg.validate();
    if (vocab.size() > cfg.model.vocab_size) {
        throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " words but model.vocab_size is " +
                          std::to_string(cfg.model.vocab_size));
    }
    DfatModel m;
    const auto plan = model::SpecialTokenPlan::make(cfg.model.vocab_size, cfg.image_tokens, cfg.text_tokens);
    m.backbone = model::build_reference_model(cfg.model, plan, cfg.seed);
    // Heads draw from a stream distinct from the backbone's.
    m.heads = features::ProjectionHeads::make(cfg.model.hidden_dim, cfg.features.dim, cfg.features.head_depth,
                                              cfg.features.separate_local, cfg.seed ^ 0x9e3779b97f4a7c15ull);
    m.vocab = std::move(vocab);
    m.prompts = cfg.prompts;
    m.layer_index = cfg.features.resolved_layer(cfg.model);
    m.normalize = cfg.features.normalize;
    return m;
}

model::Vocabulary build_vocabulary(const std::vector<std::string>& texts, const PromptConfig& prompts,
                                   const std::vector<std::string>& categories, int max_size) {
    std::vector<std::string> all = texts;
    all.push_back(prompts.image);
    all.push_back(prompts.text);
    for (const auto& c : categories) {
        all.push_back(fill_template(prompts.positive, "class", c));
        all.push_back(fill_template(prompts.negative, "class", c));
    }
    return model::Vocabulary::build(all, static_cast<std::size_t>(max_size));
}

}  // namespace dfat
