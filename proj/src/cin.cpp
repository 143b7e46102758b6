#include "camoseg/cin.hpp"

#include <algorithm>
#include <cmath>

#include "camoseg/errors.hpp"
#include "camoseg/kernels.hpp"

namespace camoseg::cin {

void CinConfig::validate() const {
    if (hidden_factor < 1) throw ConfigError("cin.hidden_factor must be >= 1");
    if (confidence_threshold < 0.0 || confidence_threshold > 1.0)
        throw ConfigError("cin.confidence_threshold must be in [0,1]");
}

Cin::Cin(ParamStore& store, const CinConfig& cfg, int64_t c_t, uint64_t seed)
    : cfg_(cfg), c_t_(c_t), c_h_(cfg.hidden_factor * c_t) {
    cfg_.validate();
    proj_w_ = store.add_normal("cin.proj_w", {c_h_, c_t_}, c_t_, seed);
    proj_b_ = store.add_zeros("cin.proj_b", {1, c_h_});
    gamma_w_ = store.add_normal("cin.gamma_w", {c_h_, c_h_}, c_h_, seed);
    Tensor ones({1, c_h_});
    for (int64_t i = 0; i < c_h_; ++i) ones[i] = 1.0;
    gamma_b_ = store.add("cin.gamma_b", ones);  // gamma defaults to identity scale
    beta_w_ = store.add_normal("cin.beta_w", {c_h_, c_h_}, c_h_, seed);
    beta_b_ = store.add_zeros("cin.beta_b", {1, c_h_});
    res_w_ = store.add_zeros("cin.res_w", {1, c_h_});  // zero => warm start
    res_b_ = store.add_zeros("cin.res_b", {1, 1});
    conf_w_ = store.add_normal("cin.conf_w", {1, c_h_}, c_h_, seed);
    conf_b_ = store.add_zeros("cin.conf_b", {1, 1});
}

CinResult Cin::forward(const ag::Var& tva_map, int64_t h8, int64_t w8,
                       const ag::Var& coarse_quarter, int64_t h4, int64_t w4, int64_t h,
                       int64_t w) const {
    if (tva_map->value.rank() != 2 || tva_map->value.dim(0) != h8 * w8 ||
        tva_map->value.dim(1) != c_t_)
        throw ShapeError("cin.forward: tva map shape " + tva_map->value.shape_str());
    if (coarse_quarter->value.size() != h4 * w4)
        throw ShapeError("cin.forward: coarse mask does not match the 1/4 grid");

    ag::Var p = ag::add_rowvec(ag::matmul_nt(tva_map, proj_w_), proj_b_);  // [HW8, C_h]

    // pooling weights from the binarized coarse mask, resampled to 1/8 (values only)
    Tensor c8({1, h8, w8});
    kernels::bilinear_resize(coarse_quarter->value.data(), c8.data(), 1, h4, w4, h8, w8);
    Tensor wrow({1, h8 * w8});
    int64_t fg = 0;
    for (int64_t i = 0; i < h8 * w8; ++i) fg += c8[i] > 0.0;
    if (fg > 0)
        for (int64_t i = 0; i < h8 * w8; ++i) wrow[i] = c8[i] > 0.0 ? 1.0 / static_cast<double>(fg) : 0.0;
    ag::Var v = ag::matmul(ag::constant(std::move(wrow)), p);  // [1, C_h]; zero if mask empty

    ag::Var gamma = ag::add_rowvec(ag::matmul_nt(v, gamma_w_), gamma_b_);
    ag::Var beta = ag::add_rowvec(ag::matmul_nt(v, beta_w_), beta_b_);
    ag::Var mod = ag::add_rowvec(ag::mul_rowvec(ag::colnorm(p, 1e-5), gamma), beta);

    ag::Var res = ag::add_rowvec(ag::matmul_nt(mod, res_w_), res_b_);  // [HW8, 1]
    res = ag::reshape(ag::transpose2d(res), {1, h8, w8});
    res = ag::bilinear_to(res, h4, w4);
    ag::Var refined = ag::add(ag::reshape(res, {1, h4 * w4}), coarse_quarter);
    ag::Var full = ag::bilinear_to(ag::reshape(refined, {1, h4, w4}), h, w);

    CinResult out;
    out.final_logits = ag::reshape(full, {1, h * w});
    out.confidence_logit = ag::reshape(ag::add(ag::matmul_nt(v, conf_w_), conf_b_), {1});
    const double x = out.confidence_logit->value[0];
    out.confidence = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return out;
}

std::vector<ScoredMask> score_and_select(const std::vector<Tensor>& mask_logits,
                                         const std::vector<double>& confidences, double threshold,
                                         int64_t h, int64_t w) {
    if (threshold < 0.0 || threshold > 1.0) throw RangeError("score_and_select: threshold not in [0,1]");
    if (mask_logits.size() != confidences.size())
        throw ShapeError("score_and_select: logits/confidence count mismatch");
    std::vector<ScoredMask> kept;
    for (size_t i = 0; i < mask_logits.size(); ++i) {
        if (confidences[i] < threshold) continue;
        ScoredMask m;
        m.index = static_cast<int64_t>(i);
        m.confidence = confidences[i];
        m.mask = Tensor({h, w});
        if (mask_logits[i].size() != h * w) throw ShapeError("score_and_select: bad mask size");
        for (int64_t p = 0; p < h * w; ++p) m.mask[p] = mask_logits[i][p] > 0.0 ? 1.0 : 0.0;
        kept.push_back(std::move(m));
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const ScoredMask& a, const ScoredMask& b) { return a.confidence > b.confidence; });
    return kept;
}

}  // namespace camoseg::cin
