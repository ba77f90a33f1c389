#include "dfat/zeroshot_eval.hpp"

#include "dfat/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace dfat::eval {

std::string_view to_string(ScoringMode m) { return m == ScoringMode::pos_neg_softmax ? "pos_neg_softmax" : "bank_cosine"; }
std::string_view to_string(ThresholdPolicy p) { return p == ThresholdPolicy::fixed ? "fixed" : "youden_on_val"; }
std::string_view to_string(ThresholdScope s) { return s == ThresholdScope::per_class ? "per_class" : "global"; }

ScoringMode parse_scoring_mode(std::string_view s) {
    if (s == "pos_neg_softmax") return ScoringMode::pos_neg_softmax;
    if (s == "bank_cosine") return ScoringMode::bank_cosine;
    throw ConfigError("unknown scoring mode `" + std::string(s) + "`");
}

ThresholdPolicy parse_threshold_policy(std::string_view s) {
    if (s == "fixed") return ThresholdPolicy::fixed;
    if (s == "youden_on_val") return ThresholdPolicy::youden_on_val;
    throw ConfigError("unknown threshold policy `" + std::string(s) + "`");
}

ThresholdScope parse_threshold_scope(std::string_view s) {
    if (s == "per_class") return ThresholdScope::per_class;
    if (s == "global") return ThresholdScope::global;
    throw ConfigError("unknown threshold scope `" + std::string(s) + "`");
}

Matrix pairing_similarity(const EncodedBatch& images, const EncodedBatch& texts, losses::FeatureCombo combo) {
    switch (combo) {
        case losses::FeatureCombo::both:
            return 0.5 * (images.global * texts.local.transpose() + images.local * texts.global.transpose());
        case losses::FeatureCombo::global_only: return images.global * texts.global.transpose();
        case losses::FeatureCombo::local_only: return images.local * texts.local.transpose();
    }
    return {};
}

namespace {

Matrix unit_rows(Matrix m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) /= std::max(m.row(r).norm(), 1e-12);
    return m;
}

}  // namespace

ScoreMatrix score_images(DfatModel& model, const knowledge::KnowledgeBank* bank, const std::vector<std::string>& categories,
                         std::span<const Matrix> images, const ScoringOptions& options) {
    if (categories.empty()) throw ConfigError("no categories to score against");
    if (!(options.tau > 0.0)) throw ConfigError("scoring temperature must be positive");
    ScoreMatrix out;
    out.mode = options.mode;
    out.model_fingerprint = model.fingerprint();
    const auto n = static_cast<Eigen::Index>(categories.size());
    const auto img = model.encode_images(images);

    if (options.mode == ScoringMode::bank_cosine) {
        if (!bank) throw ConfigError("bank_cosine scoring needs a knowledge bank");
        knowledge::require_category_order(categories, bank->corpus);
        if (bank->dim() != model.heads.out_dim()) {
            throw ConfigError("bank width " + std::to_string(bank->dim()) + " does not match model width " +
                              std::to_string(model.heads.out_dim()));
        }
        const Matrix& x = options.combo == losses::FeatureCombo::local_only ? img.local : img.global;
        out.scores = unit_rows(x) * unit_rows(bank->d_hat).transpose();
        out.ranking = out.scores;
        out.bank_fingerprint = bank->fingerprint();
        return out;
    }

    std::vector<std::string> prompts;
    for (const auto& c : categories) {
        prompts.push_back(fill_template(model.prompts.positive, "class", c));
        prompts.push_back(fill_template(model.prompts.negative, "class", c));
    }
    const auto txt = model.encode_texts(prompts);
    const Matrix sim = pairing_similarity(img, txt, options.combo);
    out.scores.resize(sim.rows(), n);
    out.ranking.resize(sim.rows(), n);
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            // Positive component of a two-way softmax.
            const double margin = (sim(i, 2 * j) - sim(i, 2 * j + 1)) / options.tau;
            out.ranking(i, j) = margin;
            out.scores(i, j) = margin >= 0 ? 1.0 / (1.0 + std::exp(-margin)) : std::exp(margin) / (1.0 + std::exp(margin));
        }
    }
    if (bank) out.bank_fingerprint = bank->fingerprint();
    return out;
}

AucResult auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ConfigError("auc: scores and labels differ in length");
    long long pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw NumericalError("auc: non-finite score at index " + std::to_string(i));
        (labels[i] != 0 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) return {std::nullopt, pos == 0 ? "no positive samples" : "no negative samples"};

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Tied block [a, b) shares the mid-rank (a + 1 + b) / 2; keep it doubled.
    long long rank_sum2 = 0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a + 1;
        while (b < order.size() && scores[order[b]] == scores[order[a]]) ++b;
        const auto doubled = static_cast<long long>(a + 1 + b);
        for (std::size_t k = a; k < b; ++k) {
            if (labels[order[k]] != 0) rank_sum2 += doubled;
        }
        a = b;
    }
    const long long u2 = rank_sum2 - pos * (pos + 1);
    return {static_cast<double>(u2) / static_cast<double>(2 * pos * neg), {}};
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold, truth = labels[i] != 0;
        if (pred && truth) ++c.tp;
        else if (pred) ++c.fp;
        else if (truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

F1Acc f1_acc(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.empty()) throw ConfigError("f1/acc on empty input");
    const auto c = confusion_at(scores, labels, threshold);
    F1Acc out;
    out.threshold = threshold;
    // F1 = 2PR/(P+R) = 2TP/(2TP+FP+FN); zero when undefined.
    const long denom = 2 * c.tp + c.fp + c.fn;
    out.f1 = c.tp == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
    out.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
    return out;
}

double youden_threshold(std::span<const double> scores, std::span<const int> labels) {
    if (scores.empty()) throw ConfigError("youden threshold needs validation scores");
    std::vector<double> cand(scores.begin(), scores.end());
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    double best_t = cand.front(), best_j = -2.0;
    for (double t : cand) {
        const auto c = confusion_at(scores, labels, t);
        const double tpr = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
        const double fpr = c.fp + c.tn ? static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn) : 0.0;
        if (tpr - fpr > best_j) {
            best_j = tpr - fpr;
            best_t = t;
        }
    }
    return best_t;
}

namespace {

std::vector<double> column(const Matrix& m, Eigen::Index j) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, j);
    return out;
}

std::vector<int> int_column(const Matrix& m, Eigen::Index j) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, j) != 0.0 ? 1 : 0;
    return out;
}

}  // namespace

EvalReport report_from_scores(const ScoreMatrix& scores, const Matrix& labels, const std::vector<std::string>& categories,
                              const ThresholdOptions& thresholds, const Matrix* val_scores, const Matrix* val_labels) {
    const Matrix& s = scores.scores;
    const auto n = static_cast<Eigen::Index>(categories.size());
    if (s.rows() == 0) throw ConfigError("evaluation needs at least one sample");
    if (s.cols() != n || labels.cols() != n || labels.rows() != s.rows()) {
        throw ConfigError("score/label/category shapes disagree");
    }
    if (!s.allFinite()) throw NumericalError("non-finite zero-shot scores");
    const bool ranked = scores.ranking.size() > 0;
    if (ranked && (scores.ranking.rows() != s.rows() || scores.ranking.cols() != n)) {
        throw ConfigError("ranking keys do not match the score matrix");
    }
    const Matrix& rk = ranked ? scores.ranking : s;
    if (!rk.allFinite()) throw NumericalError("non-finite ranking keys");
    const bool youden = thresholds.policy == ThresholdPolicy::youden_on_val;
    if (youden && (!val_scores || !val_labels || val_scores->rows() == 0 || val_scores->cols() != n ||
                   val_labels->rows() != val_scores->rows() || val_labels->cols() != n)) {
        throw ConfigError("youden_on_val needs validation scores and labels with matching shape");
    }
    double global_t = thresholds.fixed_value;
    if (youden && thresholds.scope == ThresholdScope::global) {
        std::vector<double> vs;
        std::vector<int> vl;
        for (Eigen::Index j = 0; j < n; ++j) {
            auto c = column(*val_scores, j);
            auto l = int_column(*val_labels, j);
            vs.insert(vs.end(), c.begin(), c.end());
            vl.insert(vl.end(), l.begin(), l.end());
        }
        global_t = youden_threshold(vs, vl);
    }

    EvalReport r;
    r.mode = scores.mode;
    r.thresholds = thresholds;
    r.scores = scores;
    r.samples = static_cast<int>(s.rows());
    double auc_sum = 0.0;
    int auc_count = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto sc = column(s, j);
        const auto lb = int_column(labels, j);
        ClassMetrics m;
        m.name = categories[static_cast<std::size_t>(j)];
        m.positives = static_cast<int>(std::count(lb.begin(), lb.end(), 1));
        m.negatives = static_cast<int>(lb.size()) - m.positives;
        const auto a = auc(column(rk, j), lb);
        m.auc = a.value;
        m.auc_note = a.reason;
        if (a.value) {
            auc_sum += *a.value;
            ++auc_count;
        }
        double t = global_t;
        if (youden && thresholds.scope == ThresholdScope::per_class) t = youden_threshold(column(*val_scores, j), int_column(*val_labels, j));
        const auto fa = f1_acc(sc, lb, t);
        m.f1 = fa.f1;
        m.acc = fa.acc;
        m.threshold = t;
        r.macro_f1 += m.f1;
        r.macro_acc += m.acc;
        r.per_class.push_back(std::move(m));
    }
    r.macro_f1 /= static_cast<double>(n);
    r.macro_acc /= static_cast<double>(n);
    if (auc_count > 0) r.macro_auc = auc_sum / auc_count;

    int hits = 0, labelled = 0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        if (labels.row(i).sum() == 0.0) continue;
        ++labelled;
        Eigen::Index best = 0;
        rk.row(i).maxCoeff(&best);
        if (labels(i, best) != 0.0) ++hits;
    }
    r.top1_accuracy = labelled ? static_cast<double>(hits) / labelled : 0.0;
    return r;
}

std::string EvalReport::to_json() const {
    using json = nlohmann::ordered_json;
    json j;
    j["mode"] = std::string(to_string(mode));
    j["threshold_policy"] = std::string(to_string(thresholds.policy));
    j["threshold_scope"] = std::string(to_string(thresholds.scope));
    j["samples"] = samples;
    j["macro"] = {{"auc", macro_auc ? json(*macro_auc) : json(nullptr)}, {"f1", macro_f1}, {"acc", macro_acc}};
    j["top1_accuracy"] = top1_accuracy;
    json per = json::array();
    for (const auto& m : per_class) {
        json e = {{"name", m.name}, {"auc", m.auc ? json(*m.auc) : json(nullptr)}, {"f1", m.f1}, {"acc", m.acc},
                  {"threshold", m.threshold}, {"positives", m.positives}, {"negatives", m.negatives}};
        if (!m.auc) e["auc_note"] = m.auc_note;
        per.push_back(std::move(e));
    }
    j["per_class"] = std::move(per);
    j["provenance"] = {{"model_fingerprint", scores.model_fingerprint}, {"bank_fingerprint", scores.bank_fingerprint}};
    return j.dump(2) + "\n";
}

std::string EvalReport::to_table(const std::string& dataset_name) const {
    std::ostringstream os;
    char line[160];
    auto pct = [](const std::optional<double>& v) {
        char b[16];
        if (!v) return std::string("     n/a");
        std::snprintf(b, sizeof b, "%8.2f", 100.0 * *v);
        return std::string(b);
    };
    std::size_t width = 8;
    for (const auto& m : per_class) width = std::max(width, m.name.size());
    if (!dataset_name.empty()) os << "dataset: " << dataset_name << "\n";
    os << "scoring: " << to_string(mode) << "   threshold: " << to_string(thresholds.policy) << " (" << to_string(thresholds.scope)
       << ")   samples: " << samples << "\n";
    std::snprintf(line, sizeof line, "%-*s %8s %8s %8s %5s %5s\n", static_cast<int>(width), "category", "AUC", "F1", "ACC", "pos", "neg");
    os << line;
    for (const auto& m : per_class) {
        std::snprintf(line, sizeof line, "%-*s %s %s %s %5d %5d\n", static_cast<int>(width), m.name.c_str(), pct(m.auc).c_str(),
                      pct(m.f1).c_str(), pct(m.acc).c_str(), m.positives, m.negatives);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-*s %s %s %s\n", static_cast<int>(width), "macro", pct(macro_auc).c_str(), pct(macro_f1).c_str(),
                  pct(macro_acc).c_str());
    os << line;
    std::snprintf(line, sizeof line, "top-1 accuracy: %.2f\n", 100.0 * top1_accuracy);
    os << line;
    return os.str();
}

EvalOptions eval_options_from(const ExperimentConfig& cfg) {
    EvalOptions o;
    o.scoring.mode = parse_scoring_mode(cfg.eval.mode);
    o.scoring.tau = cfg.loss.tau;
    o.scoring.combo = cfg.loss.combo;
    o.thresholds.policy = parse_threshold_policy(cfg.eval.threshold);
    o.thresholds.scope = parse_threshold_scope(cfg.eval.threshold_scope);
    o.thresholds.fixed_value = cfg.eval.threshold_value;
    return o;
}

namespace {

std::vector<Matrix> images_of(const std::vector<data::PairedSample>& samples) {
    std::vector<Matrix> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.image);
    return out;
}

}  // namespace

EvalReport evaluate(DfatModel& model, const knowledge::KnowledgeBank* bank, const data::Dataset& dataset, const EvalOptions& options) {
    const auto samples = dataset.split(options.split);
    if (samples.empty()) throw DataError("the " + std::string(data::to_string(options.split)) + " split is empty");
    const auto& cats = dataset.manifest.categories;
    const auto scores = score_images(model, bank, cats, images_of(samples), options.scoring);
    const Matrix labels = data::label_matrix(samples);
    if (options.thresholds.policy == ThresholdPolicy::youden_on_val) {
        const auto val = dataset.split(data::Split::val);
        if (val.empty()) throw DataError("youden_on_val needs a validation split");
        const auto vs = score_images(model, bank, cats, images_of(val), options.scoring);
        const Matrix vl = data::label_matrix(val);
        return report_from_scores(scores, labels, cats, options.thresholds, &vs.scores, &vl);
    }
    return report_from_scores(scores, labels, cats, options.thresholds);
}

}  // namespace dfat::eval
