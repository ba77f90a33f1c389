#pragma once

// Everything needed to turn images and reports into aligned features: the
// backbone, the projection heads, the vocabulary and the prompts. This is
// the unit that gets checkpointed.

#include "dfat/config.hpp"
#include "dfat/feature_pipeline.hpp"
#include "dfat/model_adapter.hpp"
#include "dfat/tokenizer.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dfat {

using ad::Matrix;

struct EncodedBatch {
    Matrix global;  // B x K
    Matrix local;   // B x K
};

class DfatModel {
public:
    std::unique_ptr<model::Backbone> backbone;
    features::ProjectionHeads heads;
    model::Vocabulary vocab;
    PromptConfig prompts;
    int layer_index = 1;
    bool normalize = true;

    DfatModel() = default;
    DfatModel(const DfatModel& other);
    DfatModel& operator=(const DfatModel& other);
    DfatModel(DfatModel&&) = default;
    DfatModel& operator=(DfatModel&&) = default;

    model::InputComposer composer() const;
    model::SequenceInput image_input(const Matrix& patches) const;
    model::SequenceInput text_input(const std::string& text, bool* truncated = nullptr) const;

    EncodedBatch encode_images(std::span<const Matrix> images);
    EncodedBatch encode_texts(std::span<const std::string> texts);

    std::vector<ad::Parameter*> parameters();
    std::string fingerprint();

    // Layout: backbone.*, projections.*, vocab.txt, model.manifest.
    void save(const std::filesystem::path& dir) const;
    static DfatModel load(const std::filesystem::path& dir);
};

// Fresh model for an experiment; vocabulary ids must fit model.vocab_size.
DfatModel make_model(const ExperimentConfig& cfg, model::Vocabulary vocab);

// Vocabulary over the given texts plus every prompt word (with each
// category name substituted into the templates).
model::Vocabulary build_vocabulary(const std::vector<std::string>& texts, const PromptConfig& prompts,
                                   const std::vector<std::string>& categories, int max_size);

}  // namespace dfat
