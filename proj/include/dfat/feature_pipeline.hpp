#pragma once

// Pooling of decoder hidden states and projection into the shared K-space.
//
// Global features average the hidden states at special-token positions;
// local features average every other non-padding position. One MLP head per
// modality (image, text) serves both paths unless separate local heads are
// requested; a third head maps category descriptions.

#include "dfat/autograd.hpp"
#include "dfat/model_adapter.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dfat::features {

using ad::Matrix;
using ad::RowVector;

enum class Activation { gelu };

struct ProjectionHead {
    std::string name;
    int in_dim = 0;
    int out_dim = 0;
    int depth = 0;
    Activation activation = Activation::gelu;
    // Layer k maps rows of width weights[k].rows() to weights[k].cols().
    std::vector<ad::Parameter> weights;
    std::vector<ad::Parameter> biases;

    // Hidden layers keep width in_dim; the last layer maps to out_dim.
    static ProjectionHead make(std::string name, int in_dim, int out_dim, int depth, std::mt19937_64& rng);
    // depth 1, identity weights, zero bias.
    static ProjectionHead identity(std::string name, int dim);

    ad::Var apply(ad::Tape& tape, ad::Var rows);
    Matrix apply(const Matrix& rows) const;
    std::vector<ad::Parameter*> parameters();
    void validate() const;
};

RowVector pool_global(const model::HiddenStateView& view);
RowVector pool_local(const model::HiddenStateView& view);

RowVector project(const ProjectionHead& head, const RowVector& pooled, bool normalize);

struct ProjectionHeads {
    ProjectionHead image;
    ProjectionHead text;
    ProjectionHead disease;
    std::optional<ProjectionHead> image_local;
    std::optional<ProjectionHead> text_local;

    static ProjectionHeads make(int in_dim, int out_dim, int depth, bool separate_local, std::uint64_t seed);

    bool separate_local() const { return image_local.has_value(); }
    ProjectionHead& global_head(model::Branch b) { return b == model::Branch::image ? image : text; }
    ProjectionHead& local_head(model::Branch b);
    const ProjectionHead& global_head(model::Branch b) const { return b == model::Branch::image ? image : text; }
    const ProjectionHead& local_head(model::Branch b) const;
    int out_dim() const { return image.out_dim; }

    std::vector<ad::Parameter*> parameters();
    std::vector<const ad::Parameter*> parameters() const;
    std::string fingerprint() const;

    // `projections.bin` (tensors) plus `projections.manifest` (shape).
    void save(const std::filesystem::path& dir) const;
    static ProjectionHeads load(const std::filesystem::path& dir);
};

struct FeatureBundle {
    Matrix x_global;
    Matrix x_local;
    Matrix y_global;
    Matrix y_local;
    bool normalized = false;

    Eigen::Index batch() const { return x_global.rows(); }
    Eigen::Index dim() const { return x_global.cols(); }
    void validate() const;
};

FeatureBundle build_bundle(std::span<const model::HiddenStateView> image_views, std::span<const model::HiddenStateView> text_views,
                           const ProjectionHeads& heads, bool normalize);

// Differentiable path used by training.
struct BranchVars {
    ad::Var global;
    ad::Var local;
};

BranchVars encode_branch(ad::Tape& tape, model::Backbone& backbone, ProjectionHeads& heads, const model::SequenceInput& input,
                         int layer_index, bool normalize);

struct BundleVars {
    ad::Var x_global;
    ad::Var x_local;
    ad::Var y_global;
    ad::Var y_local;
    FeatureBundle values(bool normalized) const;
};

BundleVars encode_batch(ad::Tape& tape, model::Backbone& backbone, ProjectionHeads& heads,
                        std::span<const model::SequenceInput> images, std::span<const model::SequenceInput> texts,
                        int layer_index, bool normalize);

}  // namespace dfat::features
