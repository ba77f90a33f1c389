#include "dfat/experiment.hpp"

#include "dfat/errors.hpp"

namespace dfat {

knowledge::CategoryCorpus resolve_corpus(const std::string& choice, const data::Dataset& dataset) {
    knowledge::CategoryCorpus corpus;
    if (choice == "dataset") {
        corpus = knowledge::load_corpus(dataset.root / "corpus.tsv", knowledge::CorpusId::custom);
    } else if (choice == "d1" || choice == "d2") {
        const auto full = knowledge::load_shipped_corpus(knowledge::parse_corpus_id(choice));
        corpus = full.select(dataset.manifest.categories);
    } else {
        corpus = knowledge::load_corpus(choice, knowledge::CorpusId::custom);
    }
    knowledge::require_category_order(dataset.manifest.categories, corpus);
    return corpus;
}

knowledge::KnowledgeBank build_bank_for(DfatModel& model, const knowledge::CategoryCorpus& corpus) {
    return knowledge::build_bank(corpus, *model.backbone, model.heads.disease, model.vocab, model.composer(), model.layer_index,
                                 model.normalize);
}

Prepared prepare(const ExperimentConfig& cfg, const data::Dataset& dataset) {
    cfg.validate();
    if (dataset.manifest.num_patches != cfg.model.num_patches || dataset.manifest.patch_dim != cfg.model.patch_dim) {
        throw ConfigError("dataset patches are " + std::to_string(dataset.manifest.num_patches) + "x" +
                          std::to_string(dataset.manifest.patch_dim) + " but the model expects " +
                          std::to_string(cfg.model.num_patches) + "x" + std::to_string(cfg.model.patch_dim));
    }
    const auto corpus = resolve_corpus(cfg.knowledge_corpus, dataset);
    std::vector<std::string> texts;
    for (const auto& s : dataset.split(data::Split::train)) texts.push_back(s.report);
    for (const auto& e : corpus.entries) texts.push_back(e.description);
    auto vocab = build_vocabulary(texts, cfg.prompts, dataset.manifest.categories, cfg.model.vocab_size);
    Prepared p{make_model(cfg, std::move(vocab)), {}};
    p.bank = build_bank_for(p.model, corpus);
    return p;
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const data::Dataset& dataset, const train::FitOptions& options) {
    auto p = prepare(cfg, dataset);
    const auto opts = eval::eval_options_from(cfg);
    RunOutcome out;
    out.untrained = eval::evaluate(p.model, &p.bank, dataset, opts);
    out.fit = train::fit(cfg, std::move(p.model), std::move(p.bank), dataset, options);
    out.trained = eval::evaluate(out.fit.model, &out.fit.bank, dataset, opts);
    return out;
}

}  // namespace dfat
