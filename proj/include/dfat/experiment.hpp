#pragma once

// Glue shared by the CLI and the acceptance runs: resolve a corpus, build a
// vocabulary and fresh model for a dataset, train, and evaluate.

#include "dfat/config.hpp"
#include "dfat/data_ingest.hpp"
#include "dfat/dfat_model.hpp"
#include "dfat/knowledge_bank.hpp"
#include "dfat/train_engine.hpp"
#include "dfat/zeroshot_eval.hpp"

#include <filesystem>
#include <optional>

namespace dfat {

// `dataset` -> corpus.tsv beside the manifest; `d1` / `d2` -> the shipped
// tables restricted to the dataset categories; anything else is a path.
knowledge::CategoryCorpus resolve_corpus(const std::string& choice, const data::Dataset& dataset);

struct Prepared {
    DfatModel model;
    knowledge::KnowledgeBank bank;
};

// Fresh model and bank for a dataset under a config.
Prepared prepare(const ExperimentConfig& cfg, const data::Dataset& dataset);

// Rebuilds the bank for an existing model.
knowledge::KnowledgeBank build_bank_for(DfatModel& model, const knowledge::CategoryCorpus& corpus);

struct RunOutcome {
    eval::EvalReport untrained;
    eval::EvalReport trained;
    train::FitResult fit;
};

RunOutcome run_experiment(const ExperimentConfig& cfg, const data::Dataset& dataset, const train::FitOptions& options = {});

}  // namespace dfat
