#include "dfat/alignment_losses.hpp"
#include "dfat/errors.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <cmath>
#include <limits>

using namespace dfat;
using namespace dfat::losses;
using dfat::testing::numeric_gradient;
using dfat::testing::random_matrix;
using dfat::testing::relative_error;
using dfat::testing::unit_rows;

namespace {

// -log of a softmax entry, written out with explicit sums.
double neg_log_softmax(const std::vector<double>& z, std::size_t k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return -(z[k] - mx - std::log(s));
}

double oracle_info_nce(const Matrix& s, bool mean) {
    const auto b = static_cast<std::size_t>(s.rows());
    double rows = 0.0, cols = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> r(b), c(b);
        for (std::size_t j = 0; j < b; ++j) {
            r[j] = s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            c[j] = s(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        }
        rows += neg_log_softmax(r, i);
        cols += neg_log_softmax(c, i);
    }
    const double v = 0.5 * (rows + cols);
    return mean ? v / static_cast<double>(b) : v;
}

double oracle_ca(const FeatureBundle& f, double tau, FeatureCombo combo) {
    auto term = [&](const Matrix& a, const Matrix& b) {
        Matrix s(a.rows(), b.rows());
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < b.rows(); ++j) s(i, j) = a.row(i).dot(b.row(j)) / tau;
        return oracle_info_nce(s, true);
    };
    switch (combo) {
        case FeatureCombo::both: return 0.5 * (term(f.x_global, f.y_local) + term(f.x_local, f.y_global));
        case FeatureCombo::global_only: return term(f.x_global, f.y_global);
        case FeatureCombo::local_only: return term(f.x_local, f.y_local);
    }
    return 0.0;
}

// Cross-entropy against a uniform distribution over the positive labels,
// averaged over image and text rows and over samples that have positives.
double oracle_cg(const FeatureBundle& f, const Matrix& d, const Matrix& labels, double tau) {
    double total = 0.0;
    int used = 0;
    for (Eigen::Index i = 0; i < labels.rows(); ++i) {
        const double pos = labels.row(i).sum();
        if (pos == 0.0) continue;
        ++used;
        for (const Matrix* m : {&f.x_global, &f.y_global}) {
            std::vector<double> z(static_cast<std::size_t>(d.rows()));
            for (Eigen::Index j = 0; j < d.rows(); ++j) z[static_cast<std::size_t>(j)] = m->row(i).dot(d.row(j)) / tau;
            for (Eigen::Index j = 0; j < d.rows(); ++j) {
                if (labels(i, j) != 0.0) total += 0.5 * neg_log_softmax(z, static_cast<std::size_t>(j)) / pos;
            }
        }
    }
    return used ? total / used : 0.0;
}

FeatureBundle random_bundle(Eigen::Index b, Eigen::Index k, std::uint64_t seed, bool normalized = true) {
    FeatureBundle f{random_matrix(b, k, seed), random_matrix(b, k, seed + 1), random_matrix(b, k, seed + 2), random_matrix(b, k, seed + 3),
                    normalized};
    if (normalized) {
        for (Matrix* m : {&f.x_global, &f.x_local, &f.y_global, &f.y_local}) *m = unit_rows(*m);
    }
    return f;
}

Matrix random_labels(Eigen::Index b, Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix l = Matrix::Zero(b, n);
    for (Eigen::Index i = 0; i < b; ++i) {
        l(i, static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n))) = 1.0;
        if (rng() % 2 == 0) l(i, static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n))) = 1.0;
    }
    return l;
}

LossConfig config(double tau, double lambda = 0.5, FeatureCombo combo = FeatureCombo::both) {
    LossConfig c;
    c.tau = tau;
    c.lambda = lambda;
    c.combo = combo;
    return c;
}

}  // namespace

TEST_CASE("similarity scales inner products by 1/tau") {
    const Matrix eye = Matrix::Identity(2, 2);
    CHECK(similarity(eye, eye, 1.0).values == eye);
    const Matrix a = random_matrix(3, 4, 1), b = random_matrix(3, 4, 2);
    const Matrix s1 = similarity(a, b, 1.0).values, s2 = similarity(a, b, 0.5).values;
    CHECK((s2 - 2.0 * s1).norm() < 1e-14);
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (Eigen::Index k = 0; k < 4; ++k) dot += a(i, k) * b(j, k);
            CHECK(std::abs(s1(i, j) - dot) < 1e-12);
        }
    }
    CHECK_THROWS_AS(similarity(a, Matrix::Ones(2, 3), 1.0), ConfigError);
    CHECK_THROWS_AS(similarity(a, b, 0.0), ConfigError);
}

TEST_CASE("InfoNCE reference values") {
    const double hand = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(info_nce_pair(Matrix::Identity(2, 2), Reduction::mean) == doctest::Approx(0.31326).epsilon(1e-5));
    CHECK(std::abs(info_nce_pair(Matrix::Identity(2, 2), Reduction::mean) - hand) < 1e-14);
    CHECK(std::abs(info_nce_pair(Matrix::Constant(5, 5, 0.7), Reduction::mean) - std::log(5.0)) < 1e-12);
    CHECK(info_nce_pair(Matrix::Identity(4, 4) * 50.0, Reduction::mean) < 1e-10);
    CHECK(info_nce_pair(Matrix::Constant(1, 1, 3.0), Reduction::mean) == 0.0);
    const Matrix s = random_matrix(6, 6, 3, 4.0);
    CHECK(std::abs(info_nce_pair(s, Reduction::mean) - oracle_info_nce(s, true)) < 1e-12);
    CHECK(std::abs(info_nce_pair(s, Reduction::sum) - oracle_info_nce(s, false)) < 1e-11);
    CHECK_THROWS_AS(info_nce_pair(Matrix::Ones(2, 3), Reduction::mean), ConfigError);
}

TEST_CASE("InfoNCE survives huge logits") {
    Matrix s = Matrix::Zero(3, 3);
    s(0, 1) = 800.0;
    Matrix g;
    const double v = info_nce_pair(s, Reduction::mean, &g);
    CHECK(std::isfinite(v));
    CHECK(g.allFinite());
}

TEST_CASE("L_CA reference values and symmetry") {
    const Matrix eye = Matrix::Identity(2, 2);
    const FeatureBundle id{eye, eye, eye, eye, true};
    for (auto combo : {FeatureCombo::both, FeatureCombo::global_only, FeatureCombo::local_only}) {
        CHECK(loss_ca(id, config(1.0, 0.5, combo)) == doctest::Approx(0.31326).epsilon(1e-5));
    }
    const Matrix one = unit_rows(random_matrix(1, 3, 4));
    CHECK(loss_ca({one, one, one, one, true}, config(0.05)) == 0.0);

    const Matrix same = Matrix::Ones(4, 1) * one;
    CHECK(std::abs(loss_ca({same, same, same, same, true}, config(0.05)) - std::log(4.0)) < 1e-12);

    auto f = random_bundle(5, 4, 10);
    const double v = loss_ca(f, config(0.2));
    CHECK(std::abs(v - oracle_ca(f, 0.2, FeatureCombo::both)) < 1e-12);
    // Swapping which pairing sees which inputs leaves the average unchanged.
    FeatureBundle swapped{f.x_local, f.x_global, f.y_local, f.y_global, true};
    CHECK(std::abs(loss_ca(swapped, config(0.2)) - v) < 1e-12);
    for (auto combo : {FeatureCombo::global_only, FeatureCombo::local_only}) {
        CHECK(std::abs(loss_ca(f, config(0.2, 0.5, combo)) - oracle_ca(f, 0.2, combo)) < 1e-12);
    }
}

TEST_CASE("L_CG reference values") {
    Matrix e1(1, 2);
    e1 << 1, 0;
    const FeatureBundle f{e1, e1, e1, e1, true};
    Matrix lab(1, 2);
    lab << 1, 0;
    CHECK(loss_cg(f, Matrix::Identity(2, 2), lab, config(1.0)) == doctest::Approx(0.31326).epsilon(1e-5));

    const auto g = random_bundle(6, 3, 20);
    const Matrix flat = Matrix::Ones(4, 1) * unit_rows(random_matrix(1, 3, 21));
    CHECK(std::abs(loss_cg(g, flat, random_labels(6, 4, 22), config(0.05)) - std::log(4.0)) < 1e-12);

    const Matrix d = unit_rows(random_matrix(5, 3, 23));
    const Matrix labels = random_labels(6, 5, 24);
    CHECK(std::abs(loss_cg(g, d, labels, config(0.3)) - oracle_cg(g, d, labels, 0.3)) < 1e-12);
}

TEST_CASE("uniform soft target equals single label when logits are symmetric") {
    // Anchors 0 and 1 are mirror images with respect to the features.
    Matrix d(3, 3);
    d << 1, 1, 0, 1, -1, 0, 0, 0, 1;
    Matrix x(1, 3);
    x << 0.8, 0.0, 0.6;
    const FeatureBundle f{x, x, x, x, true};
    Matrix both(1, 3), first(1, 3), second(1, 3);
    both << 1, 1, 0;
    first << 1, 0, 0;
    second << 0, 1, 0;
    const auto cfg = config(0.5);
    const double multi = loss_cg(f, d, both, cfg);
    CHECK(std::abs(multi - loss_cg(f, d, first, cfg)) < 1e-14);
    CHECK(std::abs(multi - loss_cg(f, d, second, cfg)) < 1e-14);
    // Direct evaluation of the soft-target cross entropy.
    std::vector<double> z = {0.8 / 0.5, 0.8 / 0.5, 0.6 / 0.5};
    CHECK(std::abs(multi - 0.5 * (neg_log_softmax(z, 0) + neg_log_softmax(z, 1))) < 1e-14);
}

TEST_CASE("samples without positives are skipped and counted") {
    const auto f = random_bundle(4, 3, 30);
    const Matrix d = unit_rows(random_matrix(3, 3, 31));
    Matrix labels = random_labels(4, 3, 32);
    labels.row(2).setZero();
    CgStats st;
    BundleGrad g;
    const double v = loss_cg(f, d, labels, config(0.5), &g, nullptr, &st);
    CHECK(st.participating == 3);
    CHECK(st.skipped == 1);
    CHECK(std::abs(v - oracle_cg(f, d, labels, 0.5)) < 1e-12);
    CHECK(g.x_global.row(2).norm() == 0.0);
    CHECK(g.y_global.row(2).norm() == 0.0);

    auto strict = config(0.5);
    strict.skip_zero_positive = false;
    CHECK_THROWS_AS(loss_cg(f, d, labels, strict), ConfigError);
    CHECK(loss_cg(f, d, Matrix::Zero(4, 3), config(0.5)) == 0.0);
}

TEST_CASE("L_CG input validation") {
    const auto f = random_bundle(2, 3, 40);
    CHECK_THROWS_AS(loss_cg(f, Matrix::Ones(1, 3), Matrix::Ones(2, 1), config(0.5)), ConfigError);
    CHECK_THROWS_AS(loss_cg(f, Matrix::Ones(3, 4), Matrix::Ones(2, 3), config(0.5)), ConfigError);
    CHECK_THROWS_AS(loss_cg(f, Matrix::Ones(3, 3), Matrix::Ones(2, 2), config(0.5)), ConfigError);
    CHECK_THROWS_AS(loss_cg(f, Matrix::Ones(3, 3), Matrix::Constant(2, 3, 0.5), config(0.5)), ConfigError);
    CHECK_THROWS_AS(loss_ca(f, config(-1.0)), ConfigError);
    CHECK_THROWS_AS(loss_ca(f, config(0.1, 1.5)), ConfigError);
}

TEST_CASE("L_total combines the two losses affinely") {
    const auto f = random_bundle(4, 3, 50);
    const Matrix d = unit_rows(random_matrix(3, 3, 51));
    const Matrix labels = random_labels(4, 3, 52);
    const double ca = loss_ca(f, config(0.1)), cg = loss_cg(f, d, labels, config(0.1));
    CHECK(loss_total(f, d, labels, config(0.1, 1.0)).total == ca);
    CHECK(loss_total(f, d, labels, config(0.1, 0.0)).total == cg);
    const auto half = loss_total(f, d, labels, config(0.1, 0.5));
    CHECK(std::abs(half.total - 0.5 * (ca + cg)) < 1e-15);
    CHECK(half.ca == ca);
    CHECK(half.cg == cg);
    CHECK(loss_total(f, d, labels, config(0.1, 1.0)).d_hat_grad.norm() == 0.0);
}

TEST_CASE("closed-form gradients match finite differences") {
    const Matrix labels = random_labels(4, 3, 60);
    const Matrix d = unit_rows(random_matrix(3, 5, 61));
    for (auto combo : {FeatureCombo::both, FeatureCombo::global_only, FeatureCombo::local_only}) {
        for (auto red : {Reduction::mean, Reduction::sum}) {
            auto cfg = config(0.3, 0.4, combo);
            cfg.reduction = red;
            const auto f = random_bundle(4, 5, 62, false);
            const auto out = loss_total(f, d, labels, cfg);
            Matrix FeatureBundle::*members[] = {&FeatureBundle::x_global, &FeatureBundle::x_local, &FeatureBundle::y_global,
                                               &FeatureBundle::y_local};
            const Matrix* grads[] = {&out.grad.x_global, &out.grad.x_local, &out.grad.y_global, &out.grad.y_local};
            for (int m = 0; m < 4; ++m) {
                auto fn = [&](const Matrix& v) {
                    auto g = f;
                    g.*members[m] = v;
                    return loss_total(g, d, labels, cfg).total;
                };
                CHECK(relative_error(*grads[m], numeric_gradient(fn, f.*members[m])) < 1e-7);
            }
            auto fd = [&](const Matrix& v) { return loss_total(f, v, labels, cfg).total; };
            CHECK(relative_error(out.d_hat_grad, numeric_gradient(fd, d)) < 1e-7);
        }
    }
}

TEST_CASE("taped loss routes the closed-form gradient") {
    const auto f = random_bundle(3, 4, 70);
    const Matrix d = unit_rows(random_matrix(2, 4, 71));
    Matrix labels(3, 2);
    labels << 1, 0, 0, 1, 1, 1;
    const auto cfg = config(0.2);
    ad::Tape t;
    features::BundleVars vars{t.leaf(f.x_global), t.leaf(f.x_local), t.leaf(f.y_global), t.leaf(f.y_local)};
    const ad::Var dv = t.leaf(d);
    const auto taped = attach_loss(t, vars, dv, labels, true, cfg);
    t.backward(taped.total);
    const auto ref = loss_total(f, d, labels, cfg);
    CHECK(taped.total.value()(0, 0) == ref.total);
    CHECK((t.grad(vars.x_global) - ref.grad.x_global).norm() == 0.0);
    CHECK((t.grad(vars.y_local) - ref.grad.y_local).norm() == 0.0);
    CHECK((t.grad(dv) - ref.d_hat_grad).norm() == 0.0);

    ad::Tape t2;
    features::BundleVars v2{t2.leaf(f.x_global), t2.leaf(f.x_local), t2.leaf(f.y_global), t2.leaf(f.y_local)};
    const ad::Var dc = t2.constant(d);
    t2.backward(attach_loss(t2, v2, dc, labels, true, cfg).total);
    CHECK_FALSE(t2.needs_grad(dc));
    CHECK(t2.grad(dc).norm() == 0.0);
}

TEST_CASE("non-finite features are reported as numerical errors") {
    auto f = random_bundle(2, 3, 80, false);
    f.x_global(0, 0) = std::numeric_limits<double>::quiet_NaN();
    ad::Tape t;
    features::BundleVars vars{t.leaf(f.x_global), t.leaf(f.x_local), t.leaf(f.y_global), t.leaf(f.y_local)};
    CHECK_THROWS_AS(attach_loss(t, vars, t.constant(Matrix::Identity(3, 3)), Matrix::Identity(2, 3), false, config(0.1)),
                    NumericalError);
}

TEST_CASE("option names parse") {
    CHECK(parse_feature_combo("global") == FeatureCombo::global_only);
    CHECK(parse_feature_combo("local-only") == FeatureCombo::local_only);
    CHECK(parse_feature_combo("both") == FeatureCombo::both);
    CHECK(parse_reduction("sum") == Reduction::sum);
    CHECK_THROWS_AS(parse_feature_combo("neither"), ConfigError);
    CHECK(to_string(FeatureCombo::local_only) == "local_only");
}
