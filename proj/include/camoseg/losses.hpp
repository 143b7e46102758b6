#pragma once

#include <cstdint>
#include <vector>

#include "camoseg/autograd.hpp"
#include "camoseg/tensor.hpp"

namespace camoseg::losses {

struct MatchAssignment {
    // (prediction index, ground-truth index), sorted by prediction index
    std::vector<std::pair<int64_t, int64_t>> pairs;
    std::vector<int64_t> unmatched_predictions;
    double total_cost = 0.0;
};

struct LossBreakdown {
    double bce = 0.0;
    double dice = 0.0;
    double ce = 0.0;
    double total = 0.0;
};

// mean over pixels of -[g log s(x) + (1-g) log(1-s(x))], stable logit form
ag::Var bce_loss(const ag::Var& pred_logits, const Tensor& gt);
double bce_loss_value(const Tensor& pred_logits, const Tensor& gt);

// 1 - (2 sum(p*g) + eps) / (sum p + sum g + eps), p in [0,1]
ag::Var dice_loss(const ag::Var& pred_probs, const Tensor& gt, double smooth = 1.0);
double dice_loss_value(const Tensor& pred_probs, const Tensor& gt, double smooth = 1.0);

// Eq.2-style: mean CE of softmax(z T^T / tau) against labels. tau passed as a
// scalar Var so its gradient flows (callers parameterize tau = exp(s)).
ag::Var classification_loss(const ag::Var& embeddings, const ag::Var& text_matrix,
                            const std::vector<int64_t>& labels, const ag::Var& tau);
double classification_loss_value(const Tensor& embeddings, const Tensor& text_matrix,
                                 const std::vector<int64_t>& labels, double tau);

// Minimum-cost assignment of min(P,G) pairs; among equal-cost optima the
// lexicographically smallest pair list is returned. NaN costs are rejected.
MatchAssignment hungarian_match(const Tensor& cost);

struct GroundTruthInstance {
    Tensor mask;  // binary, any resolution as long as it matches the prediction masks handed in
    int64_t category_id = 0;
};

// cost(i,j) = alpha*bce + dice + ce(i, label_j)
Tensor build_cost_matrix(const Tensor& pred_logits_lowres,      // [P, h, w]
                         const std::vector<Tensor>& gt_lowres,  // binary [h, w] each
                         const Tensor& embeddings,              // [P, D]
                         const Tensor& text_matrix,             // [C, D]
                         const std::vector<int64_t>& gt_labels, double tau, double alpha = 0.4);

struct TotalLossConfig {
    double alpha = 0.4;
    double noobj_weight = 0.1;
    double dice_smooth = 1.0;
    double confidence_weight = 0.1;
};

// L = alpha*L_bce + L_dice + L_ce over matched pairs; unmatched predictions
// contribute a weighted no-object CE term inside L_ce, and the per-instance
// existence confidence is supervised there as well (matched -> 1, else 0).
struct TotalLossInputs {
    std::vector<ag::Var> pred_mask_logits;  // per prediction, full-res [1,H*W] or [H,W]
    ag::Var embeddings;                     // [P, D]
    std::vector<ag::Var> confidences;       // per prediction scalar [1] (optional, may be empty)
    ag::Var text_with_noobj;                // [C+1, D], last row = no-object embedding
    ag::Var tau;                            // scalar
};

struct TotalLossResult {
    ag::Var total;
    LossBreakdown breakdown;
};

TotalLossResult total_loss(const TotalLossInputs& in, const MatchAssignment& match,
                           const std::vector<GroundTruthInstance>& gts, const TotalLossConfig& cfg);

}  // namespace camoseg::losses
