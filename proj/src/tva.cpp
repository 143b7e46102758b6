#include "camoseg/tva.hpp"

#include <cmath>

#include "camoseg/errors.hpp"
#include "camoseg/layout.hpp"

namespace camoseg::tva {

Tensor mask_pool(const Tensor& features, const Tensor& mask) {
    if (features.rank() != 3) throw ShapeError("mask_pool: features must be [C,H,W]");
    if (mask.rank() != 2 || mask.dim(0) != features.dim(1) || mask.dim(1) != features.dim(2))
        throw ShapeError("mask_pool: mask dims " + mask.shape_str() + " do not match features " +
                         features.shape_str());
    const int64_t c = features.dim(0), hw = features.dim(1) * features.dim(2);
    Tensor out({c});
    int64_t n = 0;
    for (int64_t p = 0; p < hw; ++p) {
        if (mask[p] <= 0.5) continue;
        ++n;
        for (int64_t ch = 0; ch < c; ++ch) out[ch] += features[ch * hw + p];
    }
    if (n > 0)
        for (int64_t ch = 0; ch < c; ++ch) out[ch] /= static_cast<double>(n);
    return out;
}

void TvaConfig::validate() const {
    if (channels < 1) throw ConfigError("tva.channels must be >= 1");
}

Tva::Tva(ParamStore& store, const TvaConfig& cfg, int64_t c_cat, int64_t text_dim, uint64_t seed)
    : cfg_(cfg), text_dim_(text_dim) {
    cfg_.validate();
    fproj_w_ = store.add_normal("tva.fproj_w", {cfg_.channels, c_cat}, c_cat, seed);
    fproj_b_ = store.add_zeros("tva.fproj_b", {1, cfg_.channels});
    uproj_w_ = store.add_normal("tva.uproj_w", {cfg_.channels, text_dim}, text_dim, seed);
    uproj_b_ = store.add_zeros("tva.uproj_b", {1, cfg_.channels});
}

ag::Var Tva::project_fused(const msff::FusedFeatureMap& fused, int64_t& h8, int64_t& w8) const {
    h8 = fused.h * 4;
    w8 = fused.w * 4;
    ag::Var up = ag::bilinear_to(ag::chw_of_rows(fused.rows, fused.h, fused.w), h8, w8);
    return ag::add_rowvec(ag::matmul_nt(ag::rows_of_chw(up), fproj_w_), fproj_b_);
}

TvaOutput Tva::aggregate(const ag::Var& mask_embeddings, const ag::Var& text_embeddings,
                         const msff::FusedFeatureMap& fused) const {
    const int64_t n = mask_embeddings->value.dim(0);
    const int64_t d = mask_embeddings->value.dim(1);
    if (text_embeddings->value.dim(0) < 1) throw ConfigError("tva.aggregate: empty vocabulary");
    if (text_embeddings->value.dim(1) != d)
        throw ShapeError("tva.aggregate: text dim != embedding dim");

    TvaOutput out;
    out.c_t = cfg_.channels;
    out.f8 = project_fused(fused, out.h8, out.w8);

    ag::Var s = ag::affine(ag::matmul_nt(mask_embeddings, text_embeddings),
                           1.0 / std::sqrt(static_cast<double>(d)), 0.0);
    out.weights = ag::softmax_rows(s);
    ag::Var u = ag::matmul(out.weights, text_embeddings);                // [N, D]
    ag::Var pu = ag::add_rowvec(ag::matmul_nt(u, uproj_w_), uproj_b_);  // [N, C_t]
    out.attn_raw = ag::matmul_nt(pu, out.f8);                           // [N, HW8]
    out.attn_filtered = ag::relu(ag::center_rows(out.attn_raw));
    for (int64_t i = 0; i < n; ++i) {
        ag::Var col = ag::reshape(ag::select_rows(out.attn_filtered, {i}), {out.h8 * out.w8, 1});
        out.per_instance_map.push_back(ag::mul_colvec(out.f8, col));
    }
    return out;
}

TvaOutput Tva::passthrough(const msff::FusedFeatureMap& fused, int64_t n) const {
    TvaOutput out;
    out.c_t = cfg_.channels;
    out.f8 = project_fused(fused, out.h8, out.w8);
    for (int64_t i = 0; i < n; ++i) out.per_instance_map.push_back(out.f8);
    return out;
}

}  // namespace camoseg::tva
