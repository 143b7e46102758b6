#pragma once

#include <cstdint>
#include <vector>

#include "camoseg/autograd.hpp"
#include "camoseg/params.hpp"

namespace camoseg::cin {

struct CinConfig {
    int64_t hidden_factor = 2;           // C_h = hidden_factor * C_t
    double confidence_threshold = 0.5;
    void validate() const;
};

struct CinResult {
    ag::Var final_logits;      // [1, H*W]
    ag::Var confidence_logit;  // [1]
    double confidence = 0.0;   // sigmoid of the logit
};

class Cin {
public:
    Cin(ParamStore& store, const CinConfig& cfg, int64_t c_t, uint64_t seed);

    // (1) project C_t -> C_h; (2) mask-pool with the binarized coarse mask -> v;
    // (3) gamma/beta from v; (4) instance-normalize spatially, modulate;
    // (5) 1x1 conv -> residual, resampled onto the coarse 1/4 grid, added to the
    // coarse logits, upsampled to full resolution; (6) confidence = sigmoid(linear(v)).
    // The residual head is zero-initialized so at init final == coarse exactly.
    CinResult forward(const ag::Var& tva_map, int64_t h8, int64_t w8,
                      const ag::Var& coarse_quarter,  // [1, h4*w4] logits
                      int64_t h4, int64_t w4, int64_t h, int64_t w) const;

    int64_t hidden_channels() const { return c_h_; }

private:
    CinConfig cfg_;
    int64_t c_t_, c_h_;
    ag::Var proj_w_, proj_b_;    // [C_h, C_t]
    ag::Var gamma_w_, gamma_b_;  // [C_h, C_h], [1, C_h]
    ag::Var beta_w_, beta_b_;
    ag::Var res_w_, res_b_;    // [1, C_h], [1, 1], zero-initialized
    ag::Var conf_w_, conf_b_;  // [1, C_h], [1, 1]
};

struct ScoredMask {
    int64_t index = 0;
    double confidence = 0.0;
    Tensor mask;  // binary [H, W]
};

// keep confidence >= threshold, binarize logits at 0, sort by descending
// confidence with lowest-index tie-break
std::vector<ScoredMask> score_and_select(const std::vector<Tensor>& mask_logits,
                                         const std::vector<double>& confidences, double threshold,
                                         int64_t h, int64_t w);

}  // namespace camoseg::cin
