#pragma once

#include <cstdint>
#include <string>

#include "camoseg/autograd.hpp"
#include "camoseg/backbone.hpp"
#include "camoseg/params.hpp"

namespace camoseg::msff {

struct MsffConfig {
    std::string gate_activation = "sigmoid";  // sigmoid | identity
    int64_t fusion_scale = 32;
    void validate() const;
};

// Fused map at 1/32, stored as [H32*W32, C_cat] rows.
struct FusedFeatureMap {
    ag::Var rows;
    int64_t h = 0, w = 0, channels = 0;
};

class Msff {
public:
    Msff(ParamStore& store, const MsffConfig& cfg, int64_t c8, int64_t c16, int64_t c32,
         int64_t c_dec, uint64_t seed);

    // (1) area-down all levels to 1/32; (2) concat -> X; (3) 1x1 conv + gate -> G;
    // (4) Y = G*X; (5) 1x1-project + area-down decoder_final -> D; (6) Y + D
    FusedFeatureMap fuse(const backbone::FeaturePyramid& pyramid) const;
    // ablation: projected decoder features alone, at 1/32
    FusedFeatureMap fuse_decoder_only(const backbone::FeaturePyramid& pyramid) const;

    int64_t c_cat() const { return c_cat_; }

private:
    MsffConfig cfg_;
    int64_t c8_, c16_, c32_, c_dec_, c_cat_;
    ag::Var gate_w_, gate_b_;  // [C_cat, C_cat], [1, C_cat]
    ag::Var dec_w_, dec_b_;    // [C_cat, C_dec], [1, C_cat]
};

}  // namespace camoseg::msff
