#pragma once

#include <cstdint>
#include <vector>

#include "camoseg/autograd.hpp"
#include "camoseg/msff.hpp"
#include "camoseg/params.hpp"

namespace camoseg::tva {

// Mean of feature vectors over mask-foreground positions (mask binarized at
// >0.5); zero vector when the mask is empty. features: [C,H,W], mask: [H,W].
Tensor mask_pool(const Tensor& features, const Tensor& mask);

struct TvaConfig {
    int64_t channels = 32;  // C_t, the projected fused-channel width
    void validate() const;
};

struct TvaOutput {
    ag::Var f8;                             // projected fused map, [H8*W8, C_t]
    ag::Var weights;                        // softmax over categories, [N, C]
    ag::Var attn_raw, attn_filtered;        // [N, H8*W8]
    std::vector<ag::Var> per_instance_map;  // N entries, [H8*W8, C_t]
    int64_t h8 = 0, w8 = 0, c_t = 0;
};

class Tva {
public:
    Tva(ParamStore& store, const TvaConfig& cfg, int64_t c_cat, int64_t text_dim, uint64_t seed);

    // (1) s_ic = <z_i, t_c>/sqrt(D); (2) w_i = softmax_c; (3) u_i = sum_c w_ic t_c;
    // (4) A_i(p) = <F'(p), proj(u_i)>; (5) filter: mean-subtract, clamp at 0;
    // (6) map_i = A-hat_i * F'
    TvaOutput aggregate(const ag::Var& mask_embeddings, const ag::Var& text_embeddings,
                        const msff::FusedFeatureMap& fused) const;
    // ablation: unfiltered projected features for every instance
    TvaOutput passthrough(const msff::FusedFeatureMap& fused, int64_t n) const;

    int64_t channels() const { return cfg_.channels; }

private:
    ag::Var project_fused(const msff::FusedFeatureMap& fused, int64_t& h8, int64_t& w8) const;

    TvaConfig cfg_;
    int64_t text_dim_;
    ag::Var fproj_w_, fproj_b_;  // [C_t, C_cat]
    ag::Var uproj_w_, uproj_b_;  // [C_t, D_text]
};

}  // namespace camoseg::tva
