#include "dfat/feature_pipeline.hpp"

#include "dfat/errors.hpp"
#include "dfat/io.hpp"

#include <cmath>

namespace dfat::features {

ProjectionHead ProjectionHead::make(std::string name, int in_dim, int out_dim, int depth, std::mt19937_64& rng) {
    ProjectionHead h;
    h.name = std::move(name);
    h.in_dim = in_dim;
    h.out_dim = out_dim;
    h.depth = depth;
    h.validate();
    for (int k = 0; k < depth; ++k) {
        const int rows = in_dim;
        const int cols = k + 1 == depth ? out_dim : in_dim;
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
        Matrix w(rows, cols);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
        }
        h.weights.emplace_back(h.name + ".w" + std::to_string(k), std::move(w));
        h.biases.emplace_back(h.name + ".b" + std::to_string(k), Matrix::Zero(1, cols));
    }
    for (auto* p : h.parameters()) p->zero_grad();
    return h;
}

ProjectionHead ProjectionHead::identity(std::string name, int dim) {
    ProjectionHead h;
    h.name = std::move(name);
    h.in_dim = h.out_dim = dim;
    h.depth = 1;
    h.weights.emplace_back(h.name + ".w0", Matrix::Identity(dim, dim));
    h.biases.emplace_back(h.name + ".b0", Matrix::Zero(1, dim));
    for (auto* p : h.parameters()) p->zero_grad();
    return h;
}

void ProjectionHead::validate() const {
    if (depth < 1) throw ConfigError("projection head `" + name + "` needs depth >= 1");
    if (in_dim <= 0 || out_dim <= 0) throw ConfigError("projection head `" + name + "` needs positive dimensions");
    if (!weights.empty() && static_cast<int>(weights.size()) != depth) {
        throw ConfigError("projection head `" + name + "` layer count does not match depth");
    }
}

ad::Var ProjectionHead::apply(ad::Tape& tape, ad::Var rows) {
    if (rows.cols() != in_dim) {
        throw ConfigError("projection head `" + name + "` expects width " + std::to_string(in_dim) + ", got " + std::to_string(rows.cols()));
    }
    ad::Var x = rows;
    for (int k = 0; k < depth; ++k) {
        x = ad::add_row(ad::matmul(x, tape.param(weights[static_cast<std::size_t>(k)])), tape.param(biases[static_cast<std::size_t>(k)]));
        if (k + 1 < depth) x = ad::gelu(x);
    }
    return x;
}

Matrix ProjectionHead::apply(const Matrix& rows) const {
    if (rows.cols() != in_dim) {
        throw ConfigError("projection head `" + name + "` expects width " + std::to_string(in_dim) + ", got " + std::to_string(rows.cols()));
    }
    Matrix x = rows;
    for (int k = 0; k < depth; ++k) {
        Matrix next = x * weights[static_cast<std::size_t>(k)].value;
        next.rowwise() += biases[static_cast<std::size_t>(k)].value.row(0);
        if (k + 1 < depth) next = next.unaryExpr([](double v) { return ad::gelu_value(v); });
        x = std::move(next);
    }
    return x;
}

std::vector<ad::Parameter*> ProjectionHead::parameters() {
    std::vector<ad::Parameter*> out;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        out.push_back(&weights[k]);
        out.push_back(&biases[k]);
    }
    return out;
}

namespace {

RowVector mean_at(const model::HiddenStateView& view, const std::vector<int>& positions, const char* what) {
    if (positions.empty()) throw ConfigError(std::string("cannot pool: no ") + what + " positions");
    RowVector acc = RowVector::Zero(view.states.cols());
    for (int p : positions) {
        if (p < 0 || p >= view.length) throw ConfigError(std::string("pooling position outside the sequence (") + what + ")");
        acc += view.states.row(p);
    }
    return acc / static_cast<double>(positions.size());
}

}  // namespace

RowVector pool_global(const model::HiddenStateView& view) { return mean_at(view, view.special_positions, "special"); }

RowVector pool_local(const model::HiddenStateView& view) { return mean_at(view, view.ordinary_positions, "ordinary"); }

RowVector project(const ProjectionHead& head, const RowVector& pooled, bool normalize) {
    if (pooled.size() != head.in_dim) {
        throw ConfigError("projection input width " + std::to_string(pooled.size()) + " does not match head `" + head.name + "`");
    }
    Matrix out = head.apply(Matrix(pooled));
    RowVector row = out.row(0);
    if (normalize) row /= std::max(row.norm(), 1e-12);
    return row;
}

ProjectionHeads ProjectionHeads::make(int in_dim, int out_dim, int depth, bool separate_local, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ProjectionHeads h{ProjectionHead::make("proj.image", in_dim, out_dim, depth, rng),
                      ProjectionHead::make("proj.text", in_dim, out_dim, depth, rng),
                      ProjectionHead::make("proj.disease", in_dim, out_dim, depth, rng), std::nullopt, std::nullopt};
    if (separate_local) {
        h.image_local = ProjectionHead::make("proj.image_local", in_dim, out_dim, depth, rng);
        h.text_local = ProjectionHead::make("proj.text_local", in_dim, out_dim, depth, rng);
    }
    return h;
}

ProjectionHead& ProjectionHeads::local_head(model::Branch b) {
    if (b == model::Branch::image) return image_local ? *image_local : image;
    return text_local ? *text_local : text;
}

const ProjectionHead& ProjectionHeads::local_head(model::Branch b) const {
    if (b == model::Branch::image) return image_local ? *image_local : image;
    return text_local ? *text_local : text;
}

std::vector<const ad::Parameter*> ProjectionHeads::parameters() const {
    std::vector<const ad::Parameter*> out;
    auto add = [&](const ProjectionHead& h) {
        for (std::size_t k = 0; k < h.weights.size(); ++k) {
            out.push_back(&h.weights[k]);
            out.push_back(&h.biases[k]);
        }
    };
    add(image);
    add(text);
    add(disease);
    if (image_local) {
        add(*image_local);
        add(*text_local);
    }
    return out;
}

std::vector<ad::Parameter*> ProjectionHeads::parameters() {
    std::vector<ad::Parameter*> out;
    for (ProjectionHead* h : {&image, &text, &disease}) {
        for (auto* p : h->parameters()) out.push_back(p);
    }
    if (image_local) {
        for (auto* p : image_local->parameters()) out.push_back(p);
        for (auto* p : text_local->parameters()) out.push_back(p);
    }
    return out;
}

std::string ProjectionHeads::fingerprint() const {
    io::Fingerprint fp;
    for (const auto* p : parameters()) {
        fp.update(p->name);
        fp.update(p->value);
    }
    return fp.hex();
}

void ProjectionHeads::save(const std::filesystem::path& dir) const {
    io::KeyValues kv;
    kv.set("projections.in_dim", image.in_dim);
    kv.set("projections.out_dim", image.out_dim);
    kv.set("projections.depth", image.depth);
    kv.set("projections.separate_local", separate_local());
    kv.set("projections.activation", "gelu");
    kv.save(dir / "projections.manifest");
    std::vector<io::NamedTensor> tensors;
    for (const auto* p : parameters()) tensors.push_back({p->name, p->value});
    io::write_tensors(dir / "projections.bin", tensors);
}

ProjectionHeads ProjectionHeads::load(const std::filesystem::path& dir) {
    const auto kv = io::KeyValues::load(dir / "projections.manifest");
    auto heads = make(static_cast<int>(kv.get_int("projections.in_dim")), static_cast<int>(kv.get_int("projections.out_dim")),
                      static_cast<int>(kv.get_int("projections.depth")), kv.get_bool("projections.separate_local"), 0);
    auto tensors = io::read_tensors(dir / "projections.bin");
    auto params = heads.parameters();
    if (tensors.size() != params.size()) throw DataError("projection tensor count mismatch in " + dir.string());
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (tensors[k].name != params[k]->name || tensors[k].value.rows() != params[k]->value.rows() ||
            tensors[k].value.cols() != params[k]->value.cols()) {
            throw DataError("unexpected projection tensor `" + tensors[k].name + "` in " + dir.string());
        }
        params[k]->value = std::move(tensors[k].value);
    }
    return heads;
}

void FeatureBundle::validate() const {
    const Eigen::Index b = x_global.rows(), k = x_global.cols();
    for (const Matrix* m : {&x_local, &y_global, &y_local}) {
        if (m->rows() != b || m->cols() != k) throw ConfigError("feature bundle matrices disagree on shape");
    }
    if (normalized) {
        for (const Matrix* m : {&x_global, &x_local, &y_global, &y_local}) {
            for (Eigen::Index r = 0; r < m->rows(); ++r) {
                if (std::abs(m->row(r).norm() - 1.0) > 1e-5) throw ConfigError("normalized bundle row without unit norm");
            }
        }
    }
}

FeatureBundle build_bundle(std::span<const model::HiddenStateView> image_views, std::span<const model::HiddenStateView> text_views,
                           const ProjectionHeads& heads, bool normalize) {
    if (image_views.size() != text_views.size()) {
        throw ConfigError("bundle batch mismatch: " + std::to_string(image_views.size()) + " images vs " +
                          std::to_string(text_views.size()) + " texts");
    }
    const auto b = static_cast<Eigen::Index>(image_views.size());
    const int k = heads.out_dim();
    FeatureBundle bundle{Matrix(b, k), Matrix(b, k), Matrix(b, k), Matrix(b, k), normalize};
    for (Eigen::Index i = 0; i < b; ++i) {
        const auto& iv = image_views[static_cast<std::size_t>(i)];
        const auto& tv = text_views[static_cast<std::size_t>(i)];
        bundle.x_global.row(i) = project(heads.global_head(model::Branch::image), pool_global(iv), normalize);
        bundle.x_local.row(i) = project(heads.local_head(model::Branch::image), pool_local(iv), normalize);
        bundle.y_global.row(i) = project(heads.global_head(model::Branch::text), pool_global(tv), normalize);
        bundle.y_local.row(i) = project(heads.local_head(model::Branch::text), pool_local(tv), normalize);
    }
    return bundle;
}

BranchVars encode_branch(ad::Tape& tape, model::Backbone& backbone, ProjectionHeads& heads, const model::SequenceInput& input,
                         int layer_index, bool normalize) {
    ad::Var states = backbone.forward(tape, input, layer_index);
    const auto ordinary = input.ordinary_positions();
    if (input.special_positions.empty()) throw ConfigError("cannot pool: no special positions");
    if (ordinary.empty()) throw ConfigError("cannot pool: every position is a special token");
    ad::Var g = heads.global_head(input.branch).apply(tape, ad::mean_rows(states, input.special_positions));
    ad::Var l = heads.local_head(input.branch).apply(tape, ad::mean_rows(states, ordinary));
    if (normalize) {
        g = ad::normalize_rows(g);
        l = ad::normalize_rows(l);
    }
    return {g, l};
}

FeatureBundle BundleVars::values(bool normalized) const {
    return {x_global.value(), x_local.value(), y_global.value(), y_local.value(), normalized};
}

BundleVars encode_batch(ad::Tape& tape, model::Backbone& backbone, ProjectionHeads& heads,
                        std::span<const model::SequenceInput> images, std::span<const model::SequenceInput> texts,
                        int layer_index, bool normalize) {
    if (images.size() != texts.size()) throw ConfigError("bundle batch mismatch between image and text inputs");
    if (images.empty()) throw ConfigError("empty batch");
    std::vector<ad::Var> xg, xl, yg, yl;
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto iv = encode_branch(tape, backbone, heads, images[i], layer_index, normalize);
        auto tv = encode_branch(tape, backbone, heads, texts[i], layer_index, normalize);
        xg.push_back(iv.global);
        xl.push_back(iv.local);
        yg.push_back(tv.global);
        yl.push_back(tv.local);
    }
    return {ad::concat_rows(xg), ad::concat_rows(xl), ad::concat_rows(yg), ad::concat_rows(yl)};
}

}  // namespace dfat::features
