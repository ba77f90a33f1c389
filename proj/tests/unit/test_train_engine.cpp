#include "dfat/errors.hpp"
#include "dfat/experiment.hpp"
#include "dfat/train_engine.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace dfat;
using namespace dfat::train;
using dfat::testing::TempDir;

namespace {

struct Setup {
    TempDir dir{"train"};
    data::Dataset dataset;
    ExperimentConfig cfg;

    explicit Setup(int per_class = 20, bool multi_label = false) {
        data::SynthConfig sc;
        sc.per_class = per_class;
        sc.multi_label = multi_label;
        dataset = data::load_dataset(data::make_synthetic(sc, dir.path()).manifest);
        cfg.model.num_patches = sc.num_patches;
        cfg.model.patch_dim = sc.patch_dim;
        cfg.train.batch_size = 8;
        cfg.train.max_steps = 20;
        cfg.train.eval_interval = 5;
    }
};

}  // namespace

TEST_CASE("learning rate schedule") {
    TrainConfig t;
    t.lr = 1e-3;
    t.max_steps = 100;
    t.warmup_fraction = 0.1;
    CHECK(lr_at(0, t) == 0.0);
    CHECK(lr_at(5, t) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(10, t) == doctest::Approx(1e-3).epsilon(1e-12));
    // Halfway through the decay the cosine factor is one half.
    CHECK(lr_at(55, t) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(100, t) == 0.0);
    const double expect = 1e-3 * 0.5 * (1.0 + std::cos(std::numbers::pi * 30.0 / 90.0));
    CHECK(std::abs(lr_at(40, t) - expect) < 1e-15);
    CHECK_THROWS_AS(lr_at(101, t), ConfigError);
    t.warmup_fraction = 0.0;
    CHECK(lr_at(0, t) == 1e-3);
}

TEST_CASE("sampler covers every index once per pass") {
    auto st = initial_state(3, 10);
    std::vector<int> seen(10, 0);
    for (int k = 0; k < 5; ++k)
        for (auto i : next_batch(st, 4)) ++seen[i];
    for (int n : seen) CHECK(n == 2);
    auto again = initial_state(3, 10);
    CHECK(again.order == initial_state(3, 10).order);
}

TEST_CASE("zero learning rate logs losses but leaves parameters alone") {
    Setup s;
    s.cfg.train.lr = 0.0;
    s.cfg.train.max_steps = 3;
    s.cfg.train.select_best = false;
    auto p = prepare(s.cfg, s.dataset);
    const auto before = p.model.fingerprint();
    const auto res = fit(s.cfg, p.model, p.bank, s.dataset);
    CHECK(res.state.log.size() == 3);
    for (const auto& r : res.state.log) {
        CHECK(std::isfinite(r.total));
        CHECK(r.total > 0.0);
        CHECK(r.lr == 0.0);
    }
    CHECK(DfatModel(res.model).fingerprint() == before);
    CHECK(res.bank.d_hat == p.bank.d_hat);
}

TEST_CASE("logged loss matches a standalone batch evaluation") {
    Setup s;
    auto p = prepare(s.cfg, s.dataset);
    const auto train_split = s.dataset.split(data::Split::train);
    auto st = initial_state(s.cfg.seed, train_split.size());
    auto probe = st;
    std::vector<const data::PairedSample*> batch;
    for (auto i : next_batch(probe, 8)) batch.push_back(&train_split[i]);
    const auto expect = batch_loss(p.model, batch, p.bank, s.cfg);
    const auto step = train_step(p.model, st, batch, p.bank, s.cfg);
    CHECK(step.record.total == expect.total);
    CHECK(step.record.ca == expect.ca);
    CHECK(step.record.cg == expect.cg);
    CHECK(std::abs(expect.total - (s.cfg.loss.lambda * expect.ca + (1 - s.cfg.loss.lambda) * expect.cg)) < 1e-12);
    CHECK(st.step == 1);
}

TEST_CASE("training is deterministic") {
    Setup s;
    auto p = prepare(s.cfg, s.dataset);
    const auto a = fit(s.cfg, p.model, p.bank, s.dataset);
    const auto b = fit(s.cfg, p.model, p.bank, s.dataset);
    CHECK(a.state.log == b.state.log);
    CHECK(DfatModel(a.model).fingerprint() == DfatModel(b.model).fingerprint());
    CHECK(a.best_step == b.best_step);
}

TEST_CASE("loss falls during training") {
    Setup s;
    s.cfg.train.max_steps = 200;
    s.cfg.train.select_best = false;
    auto p = prepare(s.cfg, s.dataset);
    const auto res = fit(s.cfg, p.model, p.bank, s.dataset);
    REQUIRE(res.state.log.size() == 200);
    auto window = [&](std::size_t from) {
        double sum = 0.0;
        for (std::size_t k = from; k < from + 10; ++k) sum += res.state.log[k].total;
        return sum / 10.0;
    };
    CHECK(window(190) < 0.5 * window(0));

    // The 20-step moving average never rises by more than 5% from one step
    // to the next.
    double prev = std::numeric_limits<double>::infinity();
    int rises = 0;
    for (std::size_t k = 0; k + 20 <= 200; ++k) {
        double avg = 0.0;
        for (std::size_t j = k; j < k + 20; ++j) avg += res.state.log[j].total / 20.0;
        rises += avg > 1.05 * prev;
        prev = avg;
    }
    CHECK(rises == 0);
}

TEST_CASE("lambda = 1 leaves the disease head untouched") {
    Setup s(20, true);
    s.cfg.loss.lambda = 1.0;
    s.cfg.train.select_best = false;
    auto p = prepare(s.cfg, s.dataset);
    const auto res = fit(s.cfg, p.model, p.bank, s.dataset);
    for (std::size_t k = 0; k < p.model.heads.disease.weights.size(); ++k) {
        CHECK(res.model.heads.disease.weights[k].value == p.model.heads.disease.weights[k].value);
        CHECK(res.model.heads.disease.biases[k].value == p.model.heads.disease.biases[k].value);
    }
    CHECK(res.bank.d_hat == p.bank.d_hat);
    CHECK(res.model.heads.image.weights[0].value != p.model.heads.image.weights[0].value);
}

TEST_CASE("no steps returns the initial model") {
    Setup s;
    s.cfg.train.max_steps = 0;
    auto p = prepare(s.cfg, s.dataset);
    const auto res = fit(s.cfg, p.model, p.bank, s.dataset);
    CHECK(res.state.log.empty());
    CHECK(DfatModel(res.model).fingerprint() == p.model.fingerprint());
    CHECK(res.best_step == 0);
}

TEST_CASE("interrupted and resumed training equals an uninterrupted run") {
    Setup s;
    auto p = prepare(s.cfg, s.dataset);
    TempDir ck("ckpt");
    const auto whole = fit(s.cfg, p.model, p.bank, s.dataset);

    FitOptions first;
    first.checkpoint_dir = ck.path();
    first.stop_after = 8;
    const auto part = fit(s.cfg, p.model, p.bank, s.dataset, first);
    CHECK(part.state.step == 8);
    FitOptions second;
    second.checkpoint_dir = ck.path();
    second.resume = true;
    const auto rest = fit(s.cfg, p.model, p.bank, s.dataset, second);

    CHECK(rest.state.log == whole.state.log);
    CHECK(rest.best_step == whole.best_step);
    CHECK(DfatModel(rest.model).fingerprint() == DfatModel(whole.model).fingerprint());
    CHECK(rest.bank.d_hat == whole.bank.d_hat);

    FitOptions no_dir;
    no_dir.resume = true;
    CHECK_THROWS_AS(fit(s.cfg, p.model, p.bank, s.dataset, no_dir), ConfigError);
}

TEST_CASE("train state persists exactly") {
    auto st = initial_state(5, 12);
    next_batch(st, 5);
    st.step = 7;
    st.first_moment["w"] = dfat::testing::random_matrix(2, 3, 1);
    st.second_moment["w"] = dfat::testing::random_matrix(2, 3, 2).cwiseAbs();
    st.best_val = 0.8125;
    st.best_step = 5;
    st.log.push_back({1, 1e-4, 2.5, 2.0, 3.0, 0.1});
    TempDir dir("state");
    st.save(dir.path());
    auto back = TrainState::load(dir.path());
    CHECK(back.step == 7);
    CHECK(back.first_moment.at("w") == st.first_moment.at("w"));
    CHECK(back.second_moment.at("w") == st.second_moment.at("w"));
    CHECK(back.order == st.order);
    CHECK(back.cursor == st.cursor);
    CHECK(back.best_val == st.best_val);
    CHECK(back.log == st.log);
    CHECK(back.rng() == st.rng());
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Setup s;
    auto p = prepare(s.cfg, s.dataset);
    TempDir dir("ckpt");
    save_checkpoint(dir.path(), p.model, p.bank);
    auto [m, b] = load_checkpoint(dir.path());
    CHECK(m.fingerprint() == p.model.fingerprint());
    CHECK(b.d_hat == p.bank.d_hat);
    CHECK(b.pooled == p.bank.pooled);
}

TEST_CASE("linear probe on full training data separates the classes") {
    Setup s(30);
    auto p = prepare(s.cfg, s.dataset);
    const auto res = finetune_classifier(p.model, s.dataset, 1.0, 300, 0.05, 1);
    CHECK(res.train_samples == static_cast<int>(s.dataset.split(data::Split::train).size()));
    REQUIRE(res.report.macro_auc.has_value());
    CHECK(*res.report.macro_auc >= 0.95);
    CHECK(finetune_classifier(p.model, s.dataset, 0.1, 10, 0.05, 1).train_samples < res.train_samples);
}
