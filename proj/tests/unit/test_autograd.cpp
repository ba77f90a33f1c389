#include "dfat/autograd.hpp"
#include "dfat/errors.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <cmath>
#include <vector>

using namespace dfat;
using namespace dfat::ad;
using dfat::testing::numeric_gradient;
using dfat::testing::random_matrix;
using dfat::testing::relative_error;
using dfat::testing::weighted_sum;

namespace {

using Op = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares tape gradients of sum(W .* op(inputs)) against central differences
// for every input; returns the worst relative error.
double worst_gradient_error(const Op& op, const std::vector<Matrix>& inputs, std::uint64_t seed = 99) {
    Matrix w;
    {
        Tape probe;
        std::vector<Var> vs;
        for (const auto& m : inputs) vs.push_back(probe.constant(m));
        const Var out = op(probe, vs);
        w = random_matrix(out.rows(), out.cols(), seed);
    }
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
    tape.backward(weighted_sum(op(tape, leaves), w));

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](const Matrix& x) {
            Tape t;
            std::vector<Var> vs;
            for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(t.constant(j == k ? x : inputs[j]));
            return op(t, vs).value().cwiseProduct(w).sum();
        };
        worst = std::max(worst, relative_error(tape.grad(leaves[k]), numeric_gradient(f, inputs[k])));
    }
    return worst;
}

}  // namespace

TEST_CASE("linear ops match finite differences") {
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                               {random_matrix(3, 4, 1), random_matrix(4, 2, 2)}) < 1e-7);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return matmul_nt(v[0], v[1]); },
                               {random_matrix(3, 4, 3), random_matrix(5, 4, 4)}) < 1e-7);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); },
                               {random_matrix(2, 3, 5), random_matrix(2, 3, 6)}) < 1e-7);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return add_row(v[0], v[1]); },
                               {random_matrix(4, 3, 7), random_matrix(1, 3, 8)}) < 1e-7);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return scale(v[0], -2.5); }, {random_matrix(3, 3, 9)}) < 1e-7);
}

TEST_CASE("nonlinear ops match finite differences") {
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return gelu(v[0]); }, {random_matrix(3, 5, 10)}) < 1e-6);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); },
                               {random_matrix(4, 6, 11), random_matrix(1, 6, 12), random_matrix(1, 6, 13)}) < 1e-6);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return causal_softmax(v[0]); }, {random_matrix(5, 5, 14)}) < 1e-6);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return rotary(v[0]); }, {random_matrix(6, 8, 15)}) < 1e-7);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return rotary(v[0]); }, {random_matrix(3, 5, 16)}) < 1e-7);
    CHECK(worst_gradient_error([](Tape&, const std::vector<Var>& v) { return normalize_rows(v[0]); }, {random_matrix(4, 3, 17)}) < 1e-6);
}

TEST_CASE("row selection ops match finite differences") {
    const std::vector<int> rows = {2, 0, 2};
    CHECK(worst_gradient_error([&](Tape&, const std::vector<Var>& v) { return gather_rows(v[0], rows); }, {random_matrix(4, 3, 18)}) < 1e-7);
    CHECK(worst_gradient_error([&](Tape&, const std::vector<Var>& v) { return mean_rows(v[0], rows); }, {random_matrix(4, 3, 19)}) < 1e-7);
    CHECK(worst_gradient_error(
              [](Tape&, const std::vector<Var>& v) {
                  const std::vector<Var> parts = {v[0], v[1]};
                  return concat_rows(parts);
              },
              {random_matrix(2, 3, 20), random_matrix(3, 3, 21)}) < 1e-7);
    const std::vector<int> ids = {0, 4, 1, 5, 4};
    CHECK(worst_gradient_error([&](Tape&, const std::vector<Var>& v) { return embedding(v[0], v[1], ids); },
                               {random_matrix(4, 3, 22), random_matrix(2, 3, 23)}) < 1e-7);
}

TEST_CASE("composite graph with reuse accumulates gradients") {
    // x feeds two branches that merge again.
    auto op = [](Tape&, const std::vector<Var>& v) {
        const Var h = gelu(matmul(v[0], v[1]));
        return add(normalize_rows(h), scale(matmul(v[0], v[1]), 0.3));
    };
    CHECK(worst_gradient_error(op, {random_matrix(3, 4, 24), random_matrix(4, 4, 25)}) < 1e-6);
}

TEST_CASE("causal softmax rows only see earlier columns") {
    Tape t;
    const Var p = causal_softmax(t.constant(random_matrix(4, 4, 26)));
    for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(p.value().row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (Eigen::Index j = i + 1; j < 4; ++j) CHECK(p.value()(i, j) == 0.0);
    }
}

TEST_CASE("rotary leaves position zero untouched and preserves norms") {
    Tape t;
    const Matrix x = random_matrix(5, 6, 27);
    const Var r = rotary(t.constant(x));
    CHECK((r.value().row(0) - x.row(0)).norm() == 0.0);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(r.value().row(i).norm() == doctest::Approx(x.row(i).norm()).epsilon(1e-12));
}

TEST_CASE("parameters accumulate gradients and honour trainability") {
    Parameter w("w", random_matrix(3, 2, 28));
    Parameter frozen("frozen", random_matrix(2, 2, 29), false);
    w.zero_grad();
    frozen.zero_grad();
    {
        Tape t;
        const Var x = t.constant(random_matrix(4, 3, 30));
        const Var y = matmul(matmul(x, t.param(w)), t.param(frozen));
        t.backward(weighted_sum(y, Matrix::Ones(4, 2)));
    }
    CHECK(w.touched);
    CHECK_FALSE(frozen.touched);
    CHECK(frozen.grad.norm() == 0.0);
    const Matrix once = w.grad;
    {
        Tape t;
        const Var x = t.constant(random_matrix(4, 3, 30));
        t.backward(weighted_sum(matmul(matmul(x, t.param(w)), t.param(frozen)), Matrix::Ones(4, 2)));
    }
    CHECK(relative_error(w.grad, 2.0 * once) < 1e-14);

    Tape inference(false);
    CHECK_FALSE(inference.needs_grad(inference.param(w)));
}

TEST_CASE("misuse is reported") {
    Tape t;
    const Var a = t.leaf(Matrix::Ones(2, 3));
    CHECK_THROWS_AS(matmul(a, a), ConfigError);
    CHECK_THROWS_AS(t.backward(a), ConfigError);
    Tape other;
    const Var b = other.leaf(Matrix::Ones(2, 3));
    CHECK_THROWS_AS(add(a, b), ConfigError);
    const std::vector<int> bad = {5};
    CHECK_THROWS_AS(gather_rows(a, bad), ConfigError);
}
