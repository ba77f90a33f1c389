#pragma once

// Contrastive objectives over projected features.
//
//   L_CA    - symmetric InfoNCE over the cross pairings (X_g, Y_l) and (X_l, Y_g)
//   L_CG    - cross-entropy of image/text features against category anchors D̂,
//             with a uniform soft target over each sample's positive labels
//   L_total - lambda * L_CA + (1 - lambda) * L_CG
//
// Every function returns its value and, on request, the closed-form gradient.

#include "dfat/autograd.hpp"
#include "dfat/feature_pipeline.hpp"

#include <string_view>

namespace dfat::losses {

using ad::Matrix;
using features::FeatureBundle;

enum class Reduction { mean, sum };
enum class FeatureCombo { both, global_only, local_only };

std::string_view to_string(Reduction r);
std::string_view to_string(FeatureCombo c);
Reduction parse_reduction(std::string_view s);
FeatureCombo parse_feature_combo(std::string_view s);

struct LossConfig {
    double tau = 0.05;
    double lambda = 0.5;
    Reduction reduction = Reduction::mean;
    // When false a sample without positive labels is an error.
    bool skip_zero_positive = true;
    FeatureCombo combo = FeatureCombo::both;

    void validate() const;
};

struct SimilarityMatrix {
    Matrix values;
    bool tau_applied = false;
};

// (i, j) = <a_i, b_j> / tau.
SimilarityMatrix similarity(const Matrix& a, const Matrix& b, double tau);

// Log-softmax of each row, max-shifted.
Matrix log_softmax_rows(const Matrix& z);

// Half the sum of the row-wise and column-wise InfoNCE terms with the
// diagonal as positives. `grad_s`, when given, receives dL/dS.
double info_nce_pair(const Matrix& s, Reduction reduction, Matrix* grad_s = nullptr);

// Gradient of a loss with respect to each bundle matrix.
struct BundleGrad {
    Matrix x_global;
    Matrix x_local;
    Matrix y_global;
    Matrix y_local;

    static BundleGrad zeros(Eigen::Index b, Eigen::Index k);
};

double loss_ca(const FeatureBundle& bundle, const LossConfig& cfg, BundleGrad* grad = nullptr);

struct CgStats {
    int participating = 0;
    int skipped = 0;
};

// labels: B x N multi-hot (entries 0 or 1).
double loss_cg(const FeatureBundle& bundle, const Matrix& d_hat, const Matrix& labels, const LossConfig& cfg,
               BundleGrad* grad = nullptr, Matrix* d_hat_grad = nullptr, CgStats* stats = nullptr);

struct LossBreakdown {
    double total = 0.0;
    double ca = 0.0;
    double cg = 0.0;
    CgStats cg_stats;
    BundleGrad grad;   // d total / d bundle
    Matrix d_hat_grad; // d total / d D̂
};

LossBreakdown loss_total(const FeatureBundle& bundle, const Matrix& d_hat, const Matrix& labels, const LossConfig& cfg);

// Smallest and largest entry over every similarity matrix the losses use;
// reported when a loss turns non-finite.
struct SimilarityExtrema {
    double min = 0.0;
    double max = 0.0;
};
SimilarityExtrema similarity_extrema(const FeatureBundle& bundle, const Matrix& d_hat, double tau);

// Records L_total as a 1x1 tape node over the bundle and D̂ variables.
// Inputs that are constants on the tape receive no gradient.
struct TapedLoss {
    ad::Var total;
    LossBreakdown breakdown;
};
TapedLoss attach_loss(ad::Tape& tape, const features::BundleVars& bundle, ad::Var d_hat, const Matrix& labels, bool normalized,
                      const LossConfig& cfg);

}  // namespace dfat::losses
