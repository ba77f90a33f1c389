#pragma once

// Category anchor repository: every corpus description is encoded through the
// text branch, pooled at the special tokens, and mapped by the disease head.
// Pooled base-model features are cached so the head can be re-applied after
// each optimizer step without another backbone pass.

#include "dfat/autograd.hpp"
#include "dfat/corpus.hpp"
#include "dfat/feature_pipeline.hpp"
#include "dfat/model_adapter.hpp"
#include "dfat/tokenizer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dfat::knowledge {

using ad::Matrix;

struct KnowledgeBank {
    CategoryCorpus corpus;
    Matrix d_hat;   // N x K, row j <-> corpus entry j
    Matrix pooled;  // N x hidden_dim cache; empty when unavailable
    std::string backbone_fingerprint;
    std::string head_fingerprint;
    int built_at_layer = 0;
    bool normalized = true;
    int truncated = 0;
    std::vector<std::string> warnings;

    std::size_t size() const { return corpus.size(); }
    Eigen::Index dim() const { return d_hat.cols(); }
    bool has_cache() const { return pooled.rows() > 0; }
    // Digest of the backbone and head digests together.
    std::string fingerprint() const;
};

std::string head_fingerprint(const features::ProjectionHead& head);

// Pooled special-token states of every description (N x hidden_dim).
// Truncated descriptions are reported through `warnings`.
Matrix pool_descriptions(const CategoryCorpus& corpus, model::Backbone& backbone, const model::Vocabulary& vocab,
                         const model::InputComposer& composer, int layer_index, std::vector<std::string>* warnings = nullptr);

KnowledgeBank build_bank(const CategoryCorpus& corpus, model::Backbone& backbone, const features::ProjectionHead& disease_head,
                         const model::Vocabulary& vocab, const model::InputComposer& composer, int layer_index, bool normalize);

// Re-applies a head to the cached pooled features.
KnowledgeBank refresh_projection(const KnowledgeBank& bank, const features::ProjectionHead& disease_head);

// D̂ as a differentiable function of the head over the frozen cache.
ad::Var anchors_on_tape(ad::Tape& tape, const KnowledgeBank& bank, features::ProjectionHead& disease_head);

// Directory layout: corpus.tsv, d_hat.bin, pooled.bin (if cached), manifest.txt.
void save_bank(const KnowledgeBank& bank, const std::filesystem::path& dir);
KnowledgeBank load_bank(const std::filesystem::path& dir);

// Dataset label order must match corpus order exactly.
void require_category_order(const std::vector<std::string>& dataset_categories, const CategoryCorpus& corpus);

}  // namespace dfat::knowledge
