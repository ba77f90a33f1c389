#include "dfat/knowledge_bank.hpp"

#include "dfat/errors.hpp"
#include "dfat/io.hpp"

#include <string>

namespace dfat::knowledge {

std::string KnowledgeBank::fingerprint() const {
    io::Fingerprint fp;
    fp.update(backbone_fingerprint);
    fp.update(head_fingerprint);
    return fp.hex();
}

std::string head_fingerprint(const features::ProjectionHead& head) {
    io::Fingerprint fp;
    fp.update(head.name);
    for (std::size_t k = 0; k < head.weights.size(); ++k) {
        fp.update(head.weights[k].value);
        fp.update(head.biases[k].value);
    }
    return fp.hex();
}

Matrix pool_descriptions(const CategoryCorpus& corpus, model::Backbone& backbone, const model::Vocabulary& vocab,
                         const model::InputComposer& composer, int layer_index, std::vector<std::string>* warnings) {
    std::vector<model::SequenceInput> inputs;
    inputs.reserve(corpus.size());
    for (const auto& e : corpus.entries) {
        bool cut = false;
        inputs.push_back(composer.text(vocab.encode(e.description), &cut));
        if (cut && warnings) warnings->push_back("description of `" + e.name + "` truncated to fit max_seq_len");
    }
    const auto views = model::forward_hidden(backbone, inputs, layer_index);
    Matrix pooled(static_cast<Eigen::Index>(views.size()), backbone.spec().hidden_dim);
    for (std::size_t j = 0; j < views.size(); ++j) pooled.row(static_cast<Eigen::Index>(j)) = features::pool_global(views[j]);
    return pooled;
}

namespace {

Matrix project_rows(const features::ProjectionHead& head, const Matrix& pooled, bool normalize) {
    Matrix out = head.apply(pooled);
    if (normalize) {
        for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) /= std::max(out.row(r).norm(), 1e-12);
    }
    return out;
}

}  // namespace

KnowledgeBank build_bank(const CategoryCorpus& corpus, model::Backbone& backbone, const features::ProjectionHead& disease_head,
                         const model::Vocabulary& vocab, const model::InputComposer& composer, int layer_index, bool normalize) {
    corpus.validate();
    if (corpus.size() == 0) throw ConfigError("knowledge bank needs a nonempty corpus");
    if (disease_head.in_dim != backbone.spec().hidden_dim) {
        throw ConfigError("disease head expects width " + std::to_string(disease_head.in_dim) + ", backbone produces " +
                          std::to_string(backbone.spec().hidden_dim));
    }
    KnowledgeBank bank;
    bank.corpus = corpus;
    bank.pooled = pool_descriptions(corpus, backbone, vocab, composer, layer_index, &bank.warnings);
    bank.truncated = static_cast<int>(bank.warnings.size());
    bank.normalized = normalize;
    bank.built_at_layer = layer_index;
    bank.backbone_fingerprint = backbone.fingerprint();
    bank.head_fingerprint = head_fingerprint(disease_head);
    bank.d_hat = project_rows(disease_head, bank.pooled, normalize);
    return bank;
}

KnowledgeBank refresh_projection(const KnowledgeBank& bank, const features::ProjectionHead& disease_head) {
    if (!bank.has_cache()) throw ConfigError("knowledge bank has no cached pooled features to refresh from");
    if (disease_head.in_dim != bank.pooled.cols()) throw ConfigError("disease head width does not match the cached features");
    KnowledgeBank out = bank;
    out.d_hat = project_rows(disease_head, bank.pooled, bank.normalized);
    out.head_fingerprint = head_fingerprint(disease_head);
    return out;
}

ad::Var anchors_on_tape(ad::Tape& tape, const KnowledgeBank& bank, features::ProjectionHead& disease_head) {
    if (!bank.has_cache()) throw ConfigError("knowledge bank has no cached pooled features");
    ad::Var d = disease_head.apply(tape, tape.constant(bank.pooled));
    return bank.normalized ? ad::normalize_rows(d) : d;
}

void save_bank(const KnowledgeBank& bank, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    io::write_text(dir / "corpus.tsv", serialize_corpus(bank.corpus));
    io::write_array(dir / "d_hat.bin", bank.d_hat);
    if (bank.has_cache()) io::write_array(dir / "pooled.bin", bank.pooled);
    io::KeyValues kv;
    kv.set("bank.corpus_id", std::string(to_string(bank.corpus.id)));
    kv.set("bank.categories", static_cast<std::int64_t>(bank.size()));
    kv.set("bank.dim", static_cast<std::int64_t>(bank.dim()));
    kv.set("bank.layer", bank.built_at_layer);
    kv.set("bank.normalized", bank.normalized);
    kv.set("bank.backbone_fingerprint", bank.backbone_fingerprint);
    kv.set("bank.head_fingerprint", bank.head_fingerprint);
    kv.set("bank.fingerprint", bank.fingerprint());
    kv.set("bank.truncated", bank.truncated);
    kv.set("bank.cached", bank.has_cache());
    kv.save(dir / "manifest.txt");
}

KnowledgeBank load_bank(const std::filesystem::path& dir) {
    const auto kv = io::KeyValues::load(dir / "manifest.txt");
    KnowledgeBank bank;
    bank.corpus = parse_corpus(io::read_text(dir / "corpus.tsv"), parse_corpus_id(kv.get("bank.corpus_id")),
                               (dir / "corpus.tsv").string());
    bank.d_hat = io::read_array(dir / "d_hat.bin");
    if (kv.get_bool("bank.cached")) bank.pooled = io::read_array(dir / "pooled.bin");
    bank.built_at_layer = static_cast<int>(kv.get_int("bank.layer"));
    bank.normalized = kv.get_bool("bank.normalized");
    bank.backbone_fingerprint = kv.get("bank.backbone_fingerprint");
    bank.head_fingerprint = kv.get("bank.head_fingerprint");
    bank.truncated = static_cast<int>(kv.get_int("bank.truncated"));
    const auto n = static_cast<Eigen::Index>(kv.get_int("bank.categories"));
    if (bank.d_hat.rows() != n || static_cast<Eigen::Index>(bank.corpus.size()) != n ||
        bank.d_hat.cols() != kv.get_int("bank.dim") || (bank.has_cache() && bank.pooled.rows() != n)) {
        throw DataError("knowledge bank in " + dir.string() + " disagrees with its manifest");
    }
    if (bank.fingerprint() != kv.get("bank.fingerprint")) throw DataError("knowledge bank fingerprint mismatch in " + dir.string());
    return bank;
}

void require_category_order(const std::vector<std::string>& dataset_categories, const CategoryCorpus& corpus) {
    if (dataset_categories.size() != corpus.size()) {
        throw DataError("dataset has " + std::to_string(dataset_categories.size()) + " categories, corpus has " +
                        std::to_string(corpus.size()));
    }
    for (std::size_t j = 0; j < corpus.size(); ++j) {
        if (dataset_categories[j] != corpus.entries[j].name) {
            throw DataError("category order mismatch at index " + std::to_string(j) + ": dataset `" + dataset_categories[j] +
                            "` vs corpus `" + corpus.entries[j].name + "`");
        }
    }
}

}  // namespace dfat::knowledge
