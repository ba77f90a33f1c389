#include "dfat/alignment_losses.hpp"

#include "dfat/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dfat::losses {

std::string_view to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

std::string_view to_string(FeatureCombo c) {
    switch (c) {
        case FeatureCombo::both: return "both";
        case FeatureCombo::global_only: return "global_only";
        case FeatureCombo::local_only: return "local_only";
    }
    return "both";
}

Reduction parse_reduction(std::string_view s) {
    if (s == "mean") return Reduction::mean;
    if (s == "sum") return Reduction::sum;
    throw ConfigError("unknown reduction `" + std::string(s) + "` (expected mean|sum)");
}

FeatureCombo parse_feature_combo(std::string_view s) {
    if (s == "both") return FeatureCombo::both;
    if (s == "global_only" || s == "global-only" || s == "global") return FeatureCombo::global_only;
    if (s == "local_only" || s == "local-only" || s == "local") return FeatureCombo::local_only;
    throw ConfigError("unknown feature combo `" + std::string(s) + "` (expected both|global_only|local_only)");
}

void LossConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive, got " + std::to_string(tau));
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
}

SimilarityMatrix similarity(const Matrix& a, const Matrix& b, double tau) {
    if (!(tau > 0.0)) throw ConfigError("similarity temperature must be positive");
    if (a.cols() != b.cols()) {
        throw ConfigError("similarity dimension mismatch: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    }
    return {(a * b.transpose()) / tau, true};
}

Matrix log_softmax_rows(const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        const double lse = m + std::log((z.row(i).array() - m).exp().sum());
        out.row(i) = z.row(i).array() - lse;
    }
    return out;
}

double info_nce_pair(const Matrix& s, Reduction reduction, Matrix* grad_s) {
    if (s.rows() != s.cols()) {
        throw ConfigError("info_nce_pair needs a square matrix, got " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
    }
    const Eigen::Index b = s.rows();
    if (b == 0) throw ConfigError("info_nce_pair on an empty batch");
    const Matrix lr = log_softmax_rows(s);
    const Matrix lc = log_softmax_rows(s.transpose());  // row i = column i of s
    double total = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) total += -lr(i, i) - lc(i, i);
    const double scale = reduction == Reduction::mean ? 1.0 / static_cast<double>(b) : 1.0;
    if (grad_s) {
        const Matrix eye = Matrix::Identity(b, b);
        Matrix row_part = lr.array().exp().matrix() - eye;
        Matrix col_part = (lc.array().exp().matrix() - eye).transpose();
        *grad_s = 0.5 * scale * (row_part + col_part);
    }
    return 0.5 * scale * total;
}

BundleGrad BundleGrad::zeros(Eigen::Index b, Eigen::Index k) {
    return {Matrix::Zero(b, k), Matrix::Zero(b, k), Matrix::Zero(b, k), Matrix::Zero(b, k)};
}

namespace {

// One InfoNCE pairing of image rows a against text rows b; accumulates
// `weight` times the gradient into ga / gb.
double pairing(const Matrix& a, const Matrix& b, double tau, Reduction reduction, double weight, Matrix* ga, Matrix* gb) {
    const auto s = similarity(a, b, tau);
    Matrix ds;
    const double v = info_nce_pair(s.values, reduction, ga ? &ds : nullptr);
    if (ga) {
        *ga += weight * (ds * b) / tau;
        *gb += weight * (ds.transpose() * a) / tau;
    }
    return weight * v;
}

void check_bundle(const FeatureBundle& bundle) {
    bundle.validate();
    if (bundle.batch() == 0) throw ConfigError("loss on an empty batch");
}

}  // namespace

double loss_ca(const FeatureBundle& bundle, const LossConfig& cfg, BundleGrad* grad) {
    cfg.validate();
    check_bundle(bundle);
    if (grad) *grad = BundleGrad::zeros(bundle.batch(), bundle.dim());
    auto g = [&](Matrix BundleGrad::*m) { return grad ? &((*grad).*m) : nullptr; };
    switch (cfg.combo) {
        case FeatureCombo::both:
            return pairing(bundle.x_global, bundle.y_local, cfg.tau, cfg.reduction, 0.5, g(&BundleGrad::x_global),
                           g(&BundleGrad::y_local)) +
                   pairing(bundle.x_local, bundle.y_global, cfg.tau, cfg.reduction, 0.5, g(&BundleGrad::x_local),
                           g(&BundleGrad::y_global));
        case FeatureCombo::global_only:
            return pairing(bundle.x_global, bundle.y_global, cfg.tau, cfg.reduction, 1.0, g(&BundleGrad::x_global),
                           g(&BundleGrad::y_global));
        case FeatureCombo::local_only:
            return pairing(bundle.x_local, bundle.y_local, cfg.tau, cfg.reduction, 1.0, g(&BundleGrad::x_local),
                           g(&BundleGrad::y_local));
    }
    return 0.0;
}

double loss_cg(const FeatureBundle& bundle, const Matrix& d_hat, const Matrix& labels, const LossConfig& cfg, BundleGrad* grad,
               Matrix* d_hat_grad, CgStats* stats) {
    cfg.validate();
    check_bundle(bundle);
    const Eigen::Index b = bundle.batch(), n = d_hat.rows();
    if (n < 2) throw ConfigError("category loss needs at least 2 categories, got " + std::to_string(n));
    if (d_hat.cols() != bundle.dim()) {
        throw ConfigError("D_hat width " + std::to_string(d_hat.cols()) + " does not match feature width " +
                          std::to_string(bundle.dim()));
    }
    if (labels.rows() != b || labels.cols() != n) {
        throw ConfigError("labels are " + std::to_string(labels.rows()) + "x" + std::to_string(labels.cols()) + ", expected " +
                          std::to_string(b) + "x" + std::to_string(n));
    }

    const bool local = cfg.combo == FeatureCombo::local_only;
    const Matrix& img = local ? bundle.x_local : bundle.x_global;
    const Matrix& txt = local ? bundle.y_local : bundle.y_global;

    CgStats st;
    Matrix target = Matrix::Zero(b, n);
    for (Eigen::Index i = 0; i < b; ++i) {
        double pos = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double v = labels(i, j);
            if (v != 0.0 && v != 1.0) throw ConfigError("labels must be multi-hot (0 or 1)");
            pos += v;
        }
        if (pos == 0.0) {
            if (!cfg.skip_zero_positive) throw ConfigError("sample " + std::to_string(i) + " has no positive label");
            ++st.skipped;
            continue;
        }
        ++st.participating;
        target.row(i) = labels.row(i) / pos;
    }
    if (stats) *stats = st;
    if (grad) *grad = BundleGrad::zeros(b, bundle.dim());
    if (d_hat_grad) d_hat_grad->setZero(n, d_hat.cols());
    if (st.participating == 0) return 0.0;

    const double scale = 0.5 * (cfg.reduction == Reduction::mean ? 1.0 / st.participating : 1.0);
    double total = 0.0;
    for (const Matrix* feats : {&img, &txt}) {
        const Matrix logits = similarity(*feats, d_hat, cfg.tau).values;
        const Matrix logp = log_softmax_rows(logits);
        total += -(target.array() * logp.array()).sum();
        if (grad || d_hat_grad) {
            // Skipped rows have a zero target and must contribute nothing.
            Matrix dz = logp.array().exp().matrix() - target;
            for (Eigen::Index i = 0; i < b; ++i) {
                if (target.row(i).sum() == 0.0) dz.row(i).setZero();
            }
            dz *= scale;
            if (grad) (feats == &img ? (local ? grad->x_local : grad->x_global) : (local ? grad->y_local : grad->y_global)) +=
                (dz * d_hat) / cfg.tau;
            if (d_hat_grad) *d_hat_grad += (dz.transpose() * *feats) / cfg.tau;
        }
    }
    return scale * total;
}

LossBreakdown loss_total(const FeatureBundle& bundle, const Matrix& d_hat, const Matrix& labels, const LossConfig& cfg) {
    LossBreakdown out;
    BundleGrad gca, gcg;
    Matrix gd;
    out.ca = loss_ca(bundle, cfg, &gca);
    out.cg = loss_cg(bundle, d_hat, labels, cfg, &gcg, &gd, &out.cg_stats);
    const double w_ca = cfg.lambda, w_cg = 1.0 - cfg.lambda;
    out.total = w_ca * out.ca + w_cg * out.cg;
    out.grad = {w_ca * gca.x_global + w_cg * gcg.x_global, w_ca * gca.x_local + w_cg * gcg.x_local,
                w_ca * gca.y_global + w_cg * gcg.y_global, w_ca * gca.y_local + w_cg * gcg.y_local};
    out.d_hat_grad = w_cg * gd;
    return out;
}

SimilarityExtrema similarity_extrema(const FeatureBundle& bundle, const Matrix& d_hat, double tau) {
    SimilarityExtrema e{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    auto take = [&](const Matrix& a, const Matrix& b) {
        if (a.size() == 0 || b.size() == 0 || a.cols() != b.cols()) return;
        const Matrix s = (a * b.transpose()) / tau;
        e.min = std::min(e.min, s.minCoeff());
        e.max = std::max(e.max, s.maxCoeff());
    };
    take(bundle.x_global, bundle.y_local);
    take(bundle.x_local, bundle.y_global);
    take(bundle.x_global, bundle.y_global);
    take(bundle.x_local, bundle.y_local);
    take(bundle.x_global, d_hat);
    take(bundle.y_global, d_hat);
    return e;
}

TapedLoss attach_loss(ad::Tape& tape, const features::BundleVars& vars, ad::Var d_hat, const Matrix& labels, bool normalized,
                      const LossConfig& cfg) {
    const FeatureBundle bundle = vars.values(normalized);
    TapedLoss out;
    out.breakdown = loss_total(bundle, d_hat.value(), labels, cfg);
    const double total = out.breakdown.total;
    if (!std::isfinite(total) || !std::isfinite(out.breakdown.ca) || !std::isfinite(out.breakdown.cg)) {
        const auto e = similarity_extrema(bundle, d_hat.value(), cfg.tau);
        throw NumericalError("non-finite loss (L_CA=" + std::to_string(out.breakdown.ca) + ", L_CG=" +
                             std::to_string(out.breakdown.cg) + "); similarity range [" + std::to_string(e.min) + ", " +
                             std::to_string(e.max) + "]");
    }
    Matrix value(1, 1);
    value(0, 0) = total;
    const BundleGrad g = out.breakdown.grad;
    const Matrix gd = out.breakdown.d_hat_grad;
    out.total = tape.apply({vars.x_global, vars.x_local, vars.y_global, vars.y_local, d_hat}, std::move(value),
                           [g, gd](const Matrix& up, std::span<Matrix* const> in) {
                               const double s = up(0, 0);
                               const Matrix* parts[] = {&g.x_global, &g.x_local, &g.y_global, &g.y_local, &gd};
                               for (std::size_t k = 0; k < 5; ++k) {
                                   if (in[k]) *in[k] += s * *parts[k];
                               }
                           });
    return out;
}

}  // namespace dfat::losses
