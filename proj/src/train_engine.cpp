#include "dfat/train_engine.hpp"

#include "dfat/errors.hpp"
#include "dfat/io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dfat::train {

double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.max_steps) {
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.max_steps) + "]");
    }
    const int warm = static_cast<int>(std::lround(cfg.warmup_fraction * cfg.max_steps));
    if (step < warm) return cfg.lr * static_cast<double>(step) / warm;
    if (step >= cfg.max_steps) return 0.0;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(cfg.max_steps - warm);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string LogRecord::to_json() const {
    std::ostringstream os;
    os << "{\"step\": " << step << ", \"lr\": " << io::format_double(lr) << ", \"L_total\": " << io::format_double(total)
       << ", \"L_CA\": " << io::format_double(ca) << ", \"L_CG\": " << io::format_double(cg)
       << ", \"grad_norm\": " << io::format_double(grad_norm) << "}";
    return os.str();
}

void TrainState::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    io::KeyValues kv;
    kv.set("state.step", step);
    kv.set("state.cursor", static_cast<std::uint64_t>(cursor));
    kv.set("state.best_val", best_val);
    kv.set("state.best_step", best_step);
    std::ostringstream rs;
    rs << rng;
    kv.set("state.rng", rs.str());
    std::string ord;
    for (std::size_t k = 0; k < order.size(); ++k) ord += (k ? "," : "") + std::to_string(order[k]);
    kv.set("state.order", ord);
    kv.save(dir / "state.txt");

    std::vector<io::NamedTensor> tensors;
    for (const auto& [name, m] : first_moment) tensors.push_back({"m1/" + name, m});
    for (const auto& [name, m] : second_moment) tensors.push_back({"m2/" + name, m});
    Matrix log_rows(static_cast<Eigen::Index>(log.size()), 6);
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& r = log[i];
        log_rows.row(static_cast<Eigen::Index>(i)) << r.step, r.lr, r.total, r.ca, r.cg, r.grad_norm;
    }
    tensors.push_back({"log", log_rows});
    io::write_tensors(dir / "optimizer.bin", tensors);
}

TrainState TrainState::load(const std::filesystem::path& dir) {
    const auto kv = io::KeyValues::load(dir / "state.txt");
    TrainState s;
    s.step = static_cast<int>(kv.get_int("state.step"));
    s.cursor = static_cast<std::size_t>(kv.get_uint("state.cursor"));
    s.best_val = kv.get_double("state.best_val");
    s.best_step = static_cast<int>(kv.get_int("state.best_step"));
    std::istringstream rs(kv.get("state.rng"));
    rs >> s.rng;
    if (!rs) throw DataError("corrupt sampler state in " + dir.string());
    for (const auto& part : io::split(kv.get("state.order"), ',')) {
        if (!part.empty()) s.order.push_back(static_cast<std::size_t>(std::stoull(part)));
    }
    for (auto& t : io::read_tensors(dir / "optimizer.bin")) {
        if (t.name.rfind("m1/", 0) == 0) s.first_moment[t.name.substr(3)] = std::move(t.value);
        else if (t.name.rfind("m2/", 0) == 0) s.second_moment[t.name.substr(3)] = std::move(t.value);
        else if (t.name == "log") {
            for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
                s.log.push_back({static_cast<int>(t.value(i, 0)), t.value(i, 1), t.value(i, 2), t.value(i, 3), t.value(i, 4),
                                 t.value(i, 5)});
            }
        }
    }
    return s;
}

TrainState initial_state(std::uint64_t seed, std::size_t train_size) {
    TrainState s;
    s.rng.seed(seed ^ 0x5851f42d4c957f2dull);
    s.order.resize(train_size);
    std::iota(s.order.begin(), s.order.end(), 0);
    std::shuffle(s.order.begin(), s.order.end(), s.rng);
    return s;
}

std::vector<std::size_t> next_batch(TrainState& state, std::size_t batch_size) {
    if (state.order.empty()) throw DataError("sampler has no training samples");
    std::vector<std::size_t> out;
    out.reserve(batch_size);
    while (out.size() < batch_size) {
        if (state.cursor >= state.order.size()) {
            std::shuffle(state.order.begin(), state.order.end(), state.rng);
            state.cursor = 0;
        }
        out.push_back(state.order[state.cursor++]);
    }
    return out;
}

namespace {

Matrix batch_labels(std::span<const data::PairedSample* const> batch) {
    Matrix y(static_cast<Eigen::Index>(batch.size()), batch.front()->labels.size());
    for (std::size_t i = 0; i < batch.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = batch[i]->labels;
    return y;
}

struct Forward {
    features::BundleVars vars;
    ad::Var d_hat;
};

Forward forward_batch(ad::Tape& tape, DfatModel& model, std::span<const data::PairedSample* const> batch,
                      const knowledge::KnowledgeBank& bank, const ExperimentConfig& cfg) {
    if (batch.empty()) throw ConfigError("empty training batch");
    const auto composer = model.composer();
    std::vector<model::SequenceInput> images, texts;
    for (const auto* s : batch) {
        images.push_back(composer.image(s->image));
        texts.push_back(composer.text(model.vocab.encode(s->report)));
    }
    Forward f;
    f.vars = features::encode_batch(tape, *model.backbone, model.heads, images, texts, model.layer_index, model.normalize);
    // With lambda = 1 the anchors carry no gradient and the disease head stays fixed.
    f.d_hat = cfg.loss.lambda < 1.0 && bank.has_cache() ? knowledge::anchors_on_tape(tape, bank, model.heads.disease)
                                                         : tape.constant(bank.d_hat);
    return f;
}

}  // namespace

losses::LossBreakdown batch_loss(DfatModel& model, std::span<const data::PairedSample* const> batch,
                                 const knowledge::KnowledgeBank& bank, const ExperimentConfig& cfg) {
    ad::Tape tape(false);
    auto f = forward_batch(tape, model, batch, bank, cfg);
    return losses::attach_loss(tape, f.vars, f.d_hat, batch_labels(batch), model.normalize, cfg.loss).breakdown;
}

StepResult train_step(DfatModel& model, TrainState& state, std::span<const data::PairedSample* const> batch,
                      knowledge::KnowledgeBank& bank, const ExperimentConfig& cfg) {
    const auto& tc = cfg.train;
    auto params = model.parameters();
    for (auto* p : params) p->zero_grad();

    ad::Tape tape(true);
    auto f = forward_batch(tape, model, batch, bank, cfg);
    auto loss = losses::attach_loss(tape, f.vars, f.d_hat, batch_labels(batch), model.normalize, cfg.loss);
    tape.backward(loss.total);

    double sq = 0.0;
    for (const auto* p : params) {
        if (p->touched && p->trainable) sq += p->grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        const auto e = losses::similarity_extrema(f.vars.values(model.normalize), f.d_hat.value(), cfg.loss.tau);
        throw NumericalError("non-finite gradient at step " + std::to_string(state.step) + "; similarity range [" +
                             std::to_string(e.min) + ", " + std::to_string(e.max) + "]");
    }
    const double clip = tc.grad_clip > 0.0 && norm > tc.grad_clip ? tc.grad_clip / norm : 1.0;
    const double lr = lr_at(state.step, tc);
    const double t = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(tc.beta1, t), c2 = 1.0 - std::pow(tc.beta2, t);
    for (auto* p : params) {
        if (!p->touched || !p->trainable) continue;
        auto& m = state.first_moment[p->name];
        auto& v = state.second_moment[p->name];
        if (m.size() == 0) {
            m = Matrix::Zero(p->value.rows(), p->value.cols());
            v = Matrix::Zero(p->value.rows(), p->value.cols());
        }
        const Matrix g = clip * p->grad;
        m = tc.beta1 * m + (1.0 - tc.beta1) * g;
        v = tc.beta2 * v + (1.0 - tc.beta2) * g.cwiseProduct(g);
        const Matrix update = (m / c1).array() / ((v / c2).array().sqrt() + tc.eps);
        p->value -= lr * (update + tc.weight_decay * p->value);
    }
    if (bank.has_cache()) bank = knowledge::refresh_projection(bank, model.heads.disease);

    StepResult out;
    out.breakdown = loss.breakdown;
    out.record = {state.step, lr, loss.breakdown.total, loss.breakdown.ca, loss.breakdown.cg, norm};
    state.log.push_back(out.record);
    ++state.step;
    return out;
}

std::optional<double> validation_auc(DfatModel& model, const knowledge::KnowledgeBank& bank, const data::Dataset& dataset,
                                     const ExperimentConfig& cfg) {
    if (dataset.split(data::Split::val).empty()) return std::nullopt;
    auto opts = eval::eval_options_from(cfg);
    opts.split = data::Split::val;
    opts.thresholds = {};
    return eval::evaluate(model, &bank, dataset, opts).macro_auc;
}

void save_checkpoint(const std::filesystem::path& dir, const DfatModel& model, const knowledge::KnowledgeBank& bank) {
    model.save(dir);
    knowledge::save_bank(bank, dir / "bank");
}

std::pair<DfatModel, knowledge::KnowledgeBank> load_checkpoint(const std::filesystem::path& dir) {
    auto model = DfatModel::load(dir);
    auto bank = knowledge::load_bank(dir / "bank");
    return {std::move(model), std::move(bank)};
}

FitResult fit(const ExperimentConfig& cfg, DfatModel model, knowledge::KnowledgeBank bank, const data::Dataset& dataset,
              const FitOptions& options) {
    cfg.validate();
    const auto train = dataset.split(data::Split::train);
    if (train.empty()) throw DataError("training split is empty");
    knowledge::require_category_order(dataset.manifest.categories, bank.corpus);
    const bool persist = !options.checkpoint_dir.empty();
    const auto last_dir = options.checkpoint_dir / "last";
    const auto best_dir = options.checkpoint_dir / "best";

    TrainState state;
    std::optional<std::pair<DfatModel, knowledge::KnowledgeBank>> best;
    if (options.resume) {
        if (!persist) throw ConfigError("resuming needs a checkpoint directory");
        std::tie(model, bank) = load_checkpoint(last_dir);
        state = TrainState::load(last_dir / "state");
        if (state.order.size() != train.size()) throw DataError("resumed sampler does not match the training split");
        if (std::filesystem::exists(best_dir / "model.manifest")) best = load_checkpoint(best_dir);
    } else {
        state = initial_state(cfg.seed, train.size());
        if (cfg.train.select_best) {
            if (auto v = validation_auc(model, bank, dataset, cfg)) {
                state.best_val = *v;
                state.best_step = 0;
                best.emplace(model, bank);
                if (persist) save_checkpoint(best_dir, model, bank);
            }
        }
    }

    const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.train.batch_size), train.size());
    if (cfg.train.max_steps > 0 && batch_size < 2) throw DataError("contrastive training needs at least 2 training samples");
    while (state.step < cfg.train.max_steps) {
        if (options.stop_after && state.step >= *options.stop_after) break;
        const auto idx = next_batch(state, batch_size);
        std::vector<const data::PairedSample*> batch;
        for (auto i : idx) batch.push_back(&train[i]);
        train_step(model, state, batch, bank, cfg);

        const bool at_end = state.step == cfg.train.max_steps;
        const bool due = cfg.train.eval_interval > 0 && state.step % cfg.train.eval_interval == 0;
        if (cfg.train.select_best && (due || at_end)) {
            if (auto v = validation_auc(model, bank, dataset, cfg); v && *v > state.best_val) {
                state.best_val = *v;
                state.best_step = state.step;
                best.emplace(model, bank);
                if (persist) save_checkpoint(best_dir, model, bank);
            }
        }
    }
    if (persist) {
        save_checkpoint(last_dir, model, bank);
        state.save(last_dir / "state");
    }

    FitResult out;
    out.state = state;
    if (state.best_step >= 0) {
        out.best_val_auc = state.best_val;
        out.best_step = state.best_step;
    }
    if (cfg.train.select_best && best) {
        out.model = std::move(best->first);
        out.bank = std::move(best->second);
    } else {
        out.model = std::move(model);
        out.bank = std::move(bank);
    }
    return out;
}

Matrix LinearProbe::scores(const Matrix& features) const {
    const Matrix z = (features * weight).rowwise() + bias;
    return z.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

FinetuneResult finetune_classifier(DfatModel& model, const data::Dataset& dataset, double fraction, int epochs, double lr,
                                   std::uint64_t seed, const eval::ThresholdOptions& thresholds) {
    if (epochs < 0) throw ConfigError("finetune epochs must be non-negative");
    const auto& cats = dataset.manifest.categories;
    const auto subset = data::split_fraction(dataset.split(data::Split::train), cats.size(), fraction, seed);
    if (subset.empty()) throw DataError("fine-tuning subset is empty");
    const auto test = dataset.split(data::Split::test);
    if (test.empty()) throw DataError("fine-tuning evaluation needs a test split");

    auto feats_of = [&](const std::vector<data::PairedSample>& s) {
        std::vector<Matrix> imgs;
        for (const auto& p : s) imgs.push_back(p.image);
        return model.encode_images(imgs).global;
    };
    const Matrix x = feats_of(subset);
    const Matrix y = data::label_matrix(subset);
    const auto k = x.cols(), n = static_cast<Eigen::Index>(cats.size());

    LinearProbe probe{Matrix::Zero(k, n), Eigen::RowVectorXd::Zero(n)};
    Matrix mw = Matrix::Zero(k, n), vw = Matrix::Zero(k, n);
    Eigen::RowVectorXd mb = Eigen::RowVectorXd::Zero(n), vb = Eigen::RowVectorXd::Zero(n);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int e = 1; e <= epochs; ++e) {
        const Matrix d = (probe.scores(x) - y) / static_cast<double>(x.rows());
        const Matrix gw = x.transpose() * d;
        const Eigen::RowVectorXd gb = d.colwise().sum();
        mw = b1 * mw + (1 - b1) * gw;
        vw = b2 * vw + (1 - b2) * gw.cwiseProduct(gw);
        mb = b1 * mb + (1 - b1) * gb;
        vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
        const double c1 = 1 - std::pow(b1, e), c2 = 1 - std::pow(b2, e);
        probe.weight.array() -= lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
        probe.bias.array() -= lr * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
    }

    eval::ScoreMatrix sm;
    sm.scores = probe.scores(feats_of(test));
    sm.model_fingerprint = model.fingerprint();
    FinetuneResult out;
    out.probe = probe;
    out.train_samples = static_cast<int>(subset.size());
    if (thresholds.policy == eval::ThresholdPolicy::youden_on_val) {
        const auto val = dataset.split(data::Split::val);
        if (val.empty()) throw DataError("youden_on_val needs a validation split");
        const Matrix vs = probe.scores(feats_of(val));
        const Matrix vl = data::label_matrix(val);
        out.report = eval::report_from_scores(sm, data::label_matrix(test), cats, thresholds, &vs, &vl);
    } else {
        out.report = eval::report_from_scores(sm, data::label_matrix(test), cats, thresholds);
    }
    return out;
}

}  // namespace dfat::train
