#include "camoseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "camoseg/kernels.hpp"

namespace camoseg::losses {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// O(n^3) Hungarian algorithm (potentials formulation) for an n x n matrix,
// minimization. Returns assignment row -> col.
std::vector<int64_t> solve_square(const std::vector<double>& a, int64_t n) {
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int64_t> p(n + 1, 0), way(n + 1, 0);
    for (int64_t i = 1; i <= n; ++i) {
        p[0] = i;
        int64_t j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            const int64_t i0 = p[j0];
            double delta = kInf;
            int64_t j1 = -1;
            for (int64_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int64_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int64_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int64_t> row_to_col(n, -1);
    for (int64_t j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

// Minimum total cost of assigning min(P,G) pairs; dummy-padded to square with
// zero cost so the real submatrix is fully covered.
double optimal_cost(const Tensor& cost, const std::vector<char>& row_active,
                    const std::vector<char>& col_active) {
    const int64_t pr = cost.dim(0), gc = cost.dim(1);
    std::vector<int64_t> rows, cols;
    for (int64_t i = 0; i < pr; ++i)
        if (row_active[i]) rows.push_back(i);
    for (int64_t j = 0; j < gc; ++j)
        if (col_active[j]) cols.push_back(j);
    const int64_t n = std::max<int64_t>(rows.size(), cols.size());
    if (n == 0) return 0.0;
    std::vector<double> a(n * n, 0.0);
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < cols.size(); ++j) a[i * n + j] = cost.at(rows[i], cols[j]);
    auto assign = solve_square(a, n);
    double total = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
        const int64_t j = assign[i];
        if (j >= 0 && j < static_cast<int64_t>(cols.size())) total += cost.at(rows[i], cols[j]);
    }
    return total;
}

}  // namespace

MatchAssignment hungarian_match(const Tensor& cost) {
    if (cost.rank() != 2) throw ShapeError("hungarian_match: cost must be 2D");
    const int64_t pr = cost.dim(0), gc = cost.dim(1);
    for (int64_t i = 0; i < cost.size(); ++i)
        if (std::isnan(cost[i])) throw DomainError("hungarian_match: NaN in cost matrix");

    MatchAssignment out;
    if (pr == 0 || gc == 0) {
        for (int64_t i = 0; i < pr; ++i) out.unmatched_predictions.push_back(i);
        return out;
    }

    std::vector<char> row_active(pr, true), col_active(gc, true);
    const double base = optimal_cost(cost, row_active, col_active);
    double mag = std::abs(base);
    for (int64_t i = 0; i < cost.size(); ++i) mag = std::max(mag, std::abs(cost[i]));
    const double eps = 1e-9 * (1.0 + mag);

    // Fix pairs prediction-by-prediction, always taking the smallest gt index
    // that keeps the assignment optimal. Yields the lexicographically
    // smallest optimal pair list.
    int64_t remaining = std::min(pr, gc);
    double fixed_cost = 0.0;
    for (int64_t i = 0; i < pr && remaining > 0; ++i) {
        int64_t chosen = -1;
        row_active[i] = false;
        const int64_t rows_left = static_cast<int64_t>(std::count(row_active.begin(), row_active.end(), char(1)));
        for (int64_t j = 0; j < gc; ++j) {
            if (!col_active[j]) continue;
            col_active[j] = false;
            const double sub = optimal_cost(cost, row_active, col_active);
            if (std::abs(fixed_cost + cost.at(i, j) + sub - base) <= eps) {
                chosen = j;
                break;
            }
            col_active[j] = true;
        }
        if (chosen >= 0) {
            out.pairs.emplace_back(i, chosen);
            fixed_cost += cost.at(i, chosen);
            --remaining;
        } else {
            // can this prediction stay unmatched while the rest still reach base?
            if (rows_left >= remaining) {
                const double sub = optimal_cost(cost, row_active, col_active);
                if (std::abs(fixed_cost + sub - base) <= eps) {
                    out.unmatched_predictions.push_back(i);
                    continue;
                }
            }
            // numerically forced: take the best feasible gt
            double best = kInf;
            for (int64_t j = 0; j < gc; ++j)
                if (col_active[j] && cost.at(i, j) < best) {
                    best = cost.at(i, j);
                    chosen = j;
                }
            col_active[chosen] = false;
            out.pairs.emplace_back(i, chosen);
            fixed_cost += cost.at(i, chosen);
            --remaining;
        }
    }
    for (int64_t i = 0; i < pr; ++i) {
        bool matched = false;
        for (auto& [p, g] : out.pairs)
            if (p == i) matched = true;
        if (!matched && std::find(out.unmatched_predictions.begin(), out.unmatched_predictions.end(), i) ==
                            out.unmatched_predictions.end())
            out.unmatched_predictions.push_back(i);
    }
    std::sort(out.unmatched_predictions.begin(), out.unmatched_predictions.end());
    out.total_cost = fixed_cost;
    return out;
}

ag::Var bce_loss(const ag::Var& pred_logits, const Tensor& gt) {
    return ag::bce_with_logits(pred_logits, gt.reshaped(pred_logits->value.shape()));
}

double bce_loss_value(const Tensor& pred_logits, const Tensor& gt) {
    check_same_shape(pred_logits, gt, "bce_loss");
    double loss = 0.0;
    for (int64_t i = 0; i < pred_logits.size(); ++i) {
        const double x = pred_logits[i], t = gt[i];
        loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    return loss / static_cast<double>(pred_logits.size());
}

ag::Var dice_loss(const ag::Var& pred_probs, const Tensor& gt, double smooth) {
    if (smooth <= 0.0) throw DomainError("dice_loss: smooth must be > 0");
    const Tensor g = gt.reshaped(pred_probs->value.shape());
    double sum_g = 0.0;
    for (int64_t i = 0; i < g.size(); ++i) sum_g += g[i];
    auto inter = ag::sum_all(ag::mul(pred_probs, ag::constant(g)));
    auto num = ag::affine(inter, 2.0, smooth);
    auto den = ag::affine(ag::sum_all(pred_probs), 1.0, sum_g + smooth);
    return ag::affine(ag::div_scalar(num, den), -1.0, 1.0);
}

double dice_loss_value(const Tensor& pred_probs, const Tensor& gt, double smooth) {
    check_same_shape(pred_probs, gt, "dice_loss");
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (int64_t i = 0; i < pred_probs.size(); ++i) {
        inter += pred_probs[i] * gt[i];
        sp += pred_probs[i];
        sg += gt[i];
    }
    return 1.0 - (2.0 * inter + smooth) / (sp + sg + smooth);
}

ag::Var classification_loss(const ag::Var& embeddings, const ag::Var& text_matrix,
                            const std::vector<int64_t>& labels, const ag::Var& tau) {
    if (tau->value[0] <= 0.0) throw DomainError("classification_loss: tau must be > 0");
    auto inv_tau = ag::div_scalar(ag::constant(Tensor::scalar(1.0)), tau);
    auto logits = ag::mul_scalar(ag::matmul_nt(embeddings, text_matrix), inv_tau);
    return ag::softmax_ce_mean(logits, labels);
}

double classification_loss_value(const Tensor& embeddings, const Tensor& text_matrix,
                                 const std::vector<int64_t>& labels, double tau) {
    auto loss = classification_loss(ag::constant(embeddings), ag::constant(text_matrix), labels,
                                    ag::constant(Tensor::scalar(tau)));
    return loss->value[0];
}

Tensor build_cost_matrix(const Tensor& pred_logits_lowres, const std::vector<Tensor>& gt_lowres,
                         const Tensor& embeddings, const Tensor& text_matrix,
                         const std::vector<int64_t>& gt_labels, double tau, double alpha) {
    const int64_t pr = pred_logits_lowres.dim(0);
    const int64_t gc = static_cast<int64_t>(gt_lowres.size());
    const int64_t hw = pred_logits_lowres.size() / pr;
    const int64_t cats = text_matrix.dim(0);
    const int64_t d = text_matrix.dim(1);

    // per-prediction class log-probabilities
    Tensor logp({pr, cats});
    {
        Tensor logits({pr, cats});
        kernels::matmul_nt(embeddings.data(), text_matrix.data(), logits.data(), pr, d, cats);
        for (int64_t i = 0; i < pr; ++i) {
            double mx = -kInf;
            for (int64_t c = 0; c < cats; ++c) {
                logits.at(i, c) /= tau;
                mx = std::max(mx, logits.at(i, c));
            }
            double z = 0.0;
            for (int64_t c = 0; c < cats; ++c) z += std::exp(logits.at(i, c) - mx);
            const double lz = mx + std::log(z);
            for (int64_t c = 0; c < cats; ++c) logp.at(i, c) = logits.at(i, c) - lz;
        }
    }

    Tensor cost({pr, gc});
    for (int64_t i = 0; i < pr; ++i) {
        const double* lg = pred_logits_lowres.data() + i * hw;
        std::vector<double> probs(hw);
        for (int64_t p = 0; p < hw; ++p) {
            const double x = lg[p];
            probs[p] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        }
        for (int64_t j = 0; j < gc; ++j) {
            const Tensor& g = gt_lowres[j];
            double bce = 0.0, inter = 0.0, sp = 0.0, sg = 0.0;
            for (int64_t p = 0; p < hw; ++p) {
                const double x = lg[p], t = g[p];
                bce += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
                inter += probs[p] * t;
                sp += probs[p];
                sg += t;
            }
            bce /= static_cast<double>(hw);
            const double dice = 1.0 - (2.0 * inter + 1.0) / (sp + sg + 1.0);
            const double ce = -logp.at(i, gt_labels[j]);
            cost.at(i, j) = alpha * bce + dice + ce;
        }
    }
    return cost;
}

TotalLossResult total_loss(const TotalLossInputs& in, const MatchAssignment& match,
                           const std::vector<GroundTruthInstance>& gts, const TotalLossConfig& cfg) {
    using ag::Var;
    const int64_t cats = in.text_with_noobj->value.dim(0) - 1;
    Var zero = ag::constant(Tensor::scalar(0.0));
    Var bce = zero, dice = zero;

    if (!match.pairs.empty()) {
        const double invp = 1.0 / static_cast<double>(match.pairs.size());
        for (auto& [pi, gi] : match.pairs) {
            const auto& logits = in.pred_mask_logits[pi];
            bce = ag::add(bce, ag::affine(bce_loss(logits, gts[gi].mask), invp, 0.0));
            dice = ag::add(dice, ag::affine(dice_loss(ag::sigmoid(logits), gts[gi].mask, cfg.dice_smooth), invp, 0.0));
        }
    }

    Var ce = zero;
    if (!match.pairs.empty()) {
        std::vector<int64_t> pidx;
        std::vector<int64_t> labels;
        for (auto& [pi, gi] : match.pairs) {
            pidx.push_back(pi);
            labels.push_back(gts[gi].category_id);
        }
        auto matched_emb = ag::select_rows(in.embeddings, pidx);
        ce = ag::add(ce, classification_loss(matched_emb, in.text_with_noobj, labels, in.tau));
    }
    if (!match.unmatched_predictions.empty() && cfg.noobj_weight > 0.0) {
        std::vector<int64_t> labels(match.unmatched_predictions.size(), cats);  // no-object row
        auto emb = ag::select_rows(in.embeddings, match.unmatched_predictions);
        ce = ag::add(ce, ag::affine(classification_loss(emb, in.text_with_noobj, labels, in.tau), cfg.noobj_weight, 0.0));
    }
    if (!in.confidences.empty() && cfg.confidence_weight > 0.0) {
        // existence supervision on confidence logits: matched -> 1, else 0
        std::vector<char> is_matched(in.confidences.size(), 0);
        for (auto& [pi, gi] : match.pairs) is_matched[pi] = 1;
        Var conf_loss = zero;
        const double inv = 1.0 / static_cast<double>(in.confidences.size());
        for (size_t i = 0; i < in.confidences.size(); ++i) {
            Tensor tgt = Tensor::scalar(is_matched[i] ? 1.0 : 0.0);
            conf_loss = ag::add(conf_loss, ag::affine(ag::bce_with_logits(in.confidences[i], tgt), inv, 0.0));
        }
        ce = ag::add(ce, ag::affine(conf_loss, cfg.confidence_weight, 0.0));
    }

    Var total = ag::add(ag::add(ag::affine(bce, cfg.alpha, 0.0), dice), ce);
    TotalLossResult res{total, {}};
    res.breakdown.bce = bce->value[0];
    res.breakdown.dice = dice->value[0];
    res.breakdown.ce = ce->value[0];
    res.breakdown.total = total->value[0];
    return res;
}

}  // namespace camoseg::losses
