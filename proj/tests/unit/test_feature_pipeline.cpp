#include "dfat/errors.hpp"
#include "dfat/feature_pipeline.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace dfat;
using namespace dfat::features;
using dfat::testing::numeric_gradient;
using dfat::testing::random_matrix;
using dfat::testing::relative_error;
using dfat::testing::TempDir;
using dfat::testing::weighted_sum;

namespace {

model::HiddenStateView view_of(Matrix states, std::vector<int> special, std::vector<int> ordinary, int length = -1) {
    model::HiddenStateView v;
    v.length = length < 0 ? static_cast<int>(states.rows()) : length;
    v.states = std::move(states);
    v.special_positions = std::move(special);
    v.ordinary_positions = std::move(ordinary);
    return v;
}

// Plain loop MLP used as an independent reference for heads.
RowVector reference_head(const ProjectionHead& h, RowVector x, bool normalize) {
    for (int k = 0; k < h.depth; ++k) {
        const Matrix& w = h.weights[static_cast<std::size_t>(k)].value;
        const Matrix& b = h.biases[static_cast<std::size_t>(k)].value;
        RowVector y(w.cols());
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            double acc = b(0, j);
            for (Eigen::Index i = 0; i < w.rows(); ++i) acc += x(i) * w(i, j);
            if (k + 1 < h.depth) acc = 0.5 * acc * (1.0 + std::erf(acc / std::sqrt(2.0)));
            y(j) = acc;
        }
        x = y;
    }
    if (normalize) x /= x.norm();
    return x;
}

model::BackboneSpec tiny_spec() {
    model::BackboneSpec s;
    s.vocab_size = 40;
    s.hidden_dim = 8;
    s.num_layers = 2;
    s.max_seq_len = 32;
    s.num_patches = 3;
    s.patch_dim = 5;
    return s;
}

}  // namespace

TEST_CASE("global pooling averages the special rows") {
    Matrix s(3, 2);
    s << 1, 3, 9, 9, 3, 1;
    CHECK(pool_global(view_of(s, {0, 2}, {1})) == RowVector((RowVector(2) << 2, 2).finished()));
    CHECK(pool_global(view_of(s, {1}, {0})) == s.row(1));
    Matrix same = Matrix::Constant(4, 3, 0.25);
    CHECK(pool_global(view_of(same, {0, 1, 2, 3}, {})) == same.row(0));
    CHECK_THROWS_AS(pool_global(view_of(s, {}, {0})), ConfigError);
}

TEST_CASE("local pooling ignores padding and order") {
    Matrix s(2, 2);
    s << 0, 0, 2, 4;
    CHECK(pool_local(view_of(s, {}, {0, 1})) == RowVector((RowVector(2) << 1, 2).finished()));
    Matrix padded = Matrix::Zero(3, 2);
    padded.topRows(2) = s;
    padded.row(2) << 100, 100;
    CHECK(pool_local(view_of(padded, {}, {0, 1}, 2)) == pool_local(view_of(s, {}, {0, 1})));
    CHECK_THROWS_AS(pool_local(view_of(padded, {}, {0, 2}, 2)), ConfigError);
    const Matrix r = random_matrix(6, 4, 1);
    const auto a = pool_local(view_of(r, {5}, {0, 1, 2, 3, 4}));
    const auto b = pool_local(view_of(r, {5}, {4, 2, 0, 3, 1}));
    CHECK((a - b).norm() < 1e-15);
}

TEST_CASE("heads: identity, normalization and shapes") {
    const auto id = ProjectionHead::identity("id", 4);
    const RowVector x = random_matrix(1, 4, 2).row(0);
    CHECK(project(id, x, false) == x);
    std::mt19937_64 rng(3);
    const auto h = ProjectionHead::make("h", 4, 6, 2, rng);
    for (std::uint64_t s = 0; s < 5; ++s) CHECK(project(h, random_matrix(1, 4, 10 + s).row(0), true).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((project(h, x, false) - reference_head(h, x, false)).norm() < 1e-12);
    CHECK_THROWS_AS(project(h, RowVector::Ones(5), false), ConfigError);
    CHECK_THROWS_AS(ProjectionHead::make("bad", 4, 4, 0, rng), ConfigError);
}

TEST_CASE("head gradients match finite differences") {
    std::mt19937_64 rng(4);
    auto h = ProjectionHead::make("h", 5, 3, 3, rng);
    const Matrix x = random_matrix(4, 5, 5);
    const Matrix w = random_matrix(4, 3, 6);
    for (bool normalize : {false, true}) {
        for (auto* p : h.parameters()) p->zero_grad();
        ad::Tape t;
        const ad::Var xin = t.leaf(x);
        ad::Var out = h.apply(t, xin);
        if (normalize) out = ad::normalize_rows(out);
        t.backward(weighted_sum(out, w));
        for (auto* p : h.parameters()) {
            const Matrix keep = p->value;
            auto f = [&](const Matrix& v) {
                p->value = v;
                Matrix y = h.apply(x);
                if (normalize) y = dfat::testing::unit_rows(y);
                p->value = keep;
                return y.cwiseProduct(w).sum();
            };
            INFO(p->name);
            CHECK(relative_error(p->grad, numeric_gradient(f, keep)) < 1e-6);
        }
        auto fx = [&](const Matrix& v) {
            Matrix y = h.apply(v);
            if (normalize) y = dfat::testing::unit_rows(y);
            return y.cwiseProduct(w).sum();
        };
        CHECK(relative_error(t.grad(xin), numeric_gradient(fx, x)) < 1e-6);
    }
}

TEST_CASE("bundle rows equal per-element pooling and projection") {
    const auto plan = model::SpecialTokenPlan::make(40, 2, 3);
    model::TinyDecoder d(tiny_spec(), plan, 9);
    model::InputComposer comp(tiny_spec(), plan, {2, 3}, {4, 5});
    auto heads = ProjectionHeads::make(8, 6, 2, false, 10);

    std::vector<model::SequenceInput> imgs, txts;
    for (int i = 0; i < 3; ++i) {
        imgs.push_back(comp.image(random_matrix(3, 5, 20 + i)));
        std::vector<int> content;
        for (int k = 0; k <= i + 2; ++k) content.push_back(6 + (k * 7 + i) % 30);
        txts.push_back(comp.text(content));
    }
    const auto iv = model::forward_hidden(d, imgs, 1);
    const auto tv = model::forward_hidden(d, txts, 1);
    const auto bundle = build_bundle(iv, tv, heads, true);
    CHECK(bundle.batch() == 3);
    CHECK(bundle.dim() == 6);
    bundle.validate();

    for (int i = 0; i < 3; ++i) {
        // Independent path: a lone forward pass, pooled with explicit loops.
        for (auto [input, head_img] : {std::pair{imgs[static_cast<std::size_t>(i)], true}, std::pair{txts[static_cast<std::size_t>(i)], false}}) {
            ad::Tape t(false);
            const Matrix h = d.forward(t, input, 1).value();
            RowVector g = RowVector::Zero(8), l = RowVector::Zero(8);
            for (int p : input.special_positions) g += h.row(p);
            const auto ord = input.ordinary_positions();
            for (int p : ord) l += h.row(p);
            g /= static_cast<double>(input.special_positions.size());
            l /= static_cast<double>(ord.size());
            const auto& head = head_img ? heads.image : heads.text;
            const Matrix& mg = head_img ? bundle.x_global : bundle.y_global;
            const Matrix& ml = head_img ? bundle.x_local : bundle.y_local;
            CHECK((mg.row(i) - reference_head(head, g, true)).norm() < 1e-12);
            CHECK((ml.row(i) - reference_head(head, l, true)).norm() < 1e-12);
        }
    }

    // The taped path agrees with the eager one.
    ad::Tape t(false);
    const auto vars = encode_batch(t, d, heads, imgs, txts, 1, true);
    const auto taped = vars.values(true);
    CHECK((taped.x_global - bundle.x_global).norm() < 1e-12);
    CHECK((taped.y_local - bundle.y_local).norm() < 1e-12);
}

TEST_CASE("bundle shape contract and duplicate elements") {
    const auto plan = model::SpecialTokenPlan::make(40, 2, 3);
    model::TinyDecoder d(tiny_spec(), plan, 9);
    model::InputComposer comp(tiny_spec(), plan, {2}, {4});
    auto heads = ProjectionHeads::make(8, 5, 1, true, 11);
    const std::vector<model::SequenceInput> one_img = {comp.image(random_matrix(3, 5, 1))};
    const std::vector<model::SequenceInput> one_txt = {comp.text(std::vector<int>{7, 8})};
    const auto b1 = build_bundle(model::forward_hidden(d, one_img, 2), model::forward_hidden(d, one_txt, 2), heads, true);
    CHECK(b1.x_global.rows() == 1);
    CHECK(b1.y_local.cols() == 5);

    const std::vector<model::SequenceInput> imgs = {one_img[0], one_img[0]};
    const std::vector<model::SequenceInput> txts = {one_txt[0], one_txt[0]};
    const auto b2 = build_bundle(model::forward_hidden(d, imgs, 2), model::forward_hidden(d, txts, 2), heads, true);
    for (const Matrix* m : {&b2.x_global, &b2.x_local, &b2.y_global, &b2.y_local}) CHECK(m->row(0) == m->row(1));
    // Separate local heads are actually used.
    CHECK((b2.x_local.row(0) - reference_head(*heads.image_local, pool_local(model::forward_hidden(d, one_img, 2)[0]), true)).norm() < 1e-12);

    CHECK_THROWS_AS(build_bundle(model::forward_hidden(d, imgs, 2), model::forward_hidden(d, one_txt, 2), heads, true), ConfigError);
}

TEST_CASE("projection heads persist bit-exactly") {
    const auto heads = ProjectionHeads::make(8, 4, 2, true, 12);
    TempDir dir("heads");
    heads.save(dir.path());
    const auto back = ProjectionHeads::load(dir.path());
    CHECK(back.fingerprint() == heads.fingerprint());
    CHECK(back.separate_local());
    CHECK(back.disease.weights[1].value == heads.disease.weights[1].value);
}
