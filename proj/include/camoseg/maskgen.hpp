#pragma once

#include <cstdint>
#include <vector>

#include "camoseg/autograd.hpp"
#include "camoseg/msff.hpp"
#include "camoseg/params.hpp"

namespace camoseg::maskgen {

struct MaskGenConfig {
    int64_t num_queries = 20;
    int64_t layers = 6;
    int64_t heads = 1;
    int64_t embed_dim = 16;  // D_emb, must equal the text embedding dim
    int64_t query_dim = 32;  // C_p: pixel-decoder channels = query width
    int64_t ffn_dim = 64;
    void validate() const;
};

// Intermediate maps at 1/32, 1/16, 1/8 plus the 1/4 per-pixel embedding map,
// all in [H*W, C] rows layout.
struct PixelDecoderOutput {
    ag::Var i32, i16, i8;
    ag::Var per_pixel;
    int64_t h32 = 0, w32 = 0;
    int64_t h4() const { return h32 * 8; }
    int64_t w4() const { return w32 * 8; }
};

struct InstancePredictions {
    std::vector<ag::Var> mask_logits;  // N entries, [1, H*W] full resolution
    ag::Var logits_quarter;            // [N, H4*W4], pre-upsampling (cin refines here)
    ag::Var embeddings;                // [N, D_emb]
    std::vector<double> confidences;   // N, filled by cin (empty until then)
    int64_t height = 0, width = 0, h4 = 0, w4 = 0;
};

class MaskGen {
public:
    MaskGen(ParamStore& store, const MaskGenConfig& cfg, int64_t c_cat, uint64_t seed);

    PixelDecoderOutput pixel_decode(const msff::FusedFeatureMap& fused) const;
    // layer l attends to scale (l mod 3) in [1/32, 1/16, 1/8]; masked
    // cross-attention -> self-attention -> FFN, residual + layernorm each
    ag::Var transformer_decode(const ag::Var& queries, const PixelDecoderOutput& pdo) const;
    // logits[i](p) = <embed_head(q_i), per_pixel(p)>, bilinearly upsampled to (h, w)
    InstancePredictions predict_masks(const ag::Var& queries, const PixelDecoderOutput& pdo,
                                      int64_t h, int64_t w) const;

    ag::Var initial_queries() const { return queries_; }
    const MaskGenConfig& config() const { return cfg_; }

private:
    struct Attn {
        ag::Var wq, wk, wv, wo;  // [C_p, C_p] each
        ag::Var bq, bk, bv, bo;  // [1, C_p]
        ag::Var ln_g, ln_b;
    };
    struct Ffn {
        ag::Var w1, b1, w2, b2, ln_g, ln_b;
    };
    struct Layer {
        Attn cross, self_attn;
        Ffn ffn;
    };

    ag::Var attention(const Attn& a, const ag::Var& q_in, const ag::Var& kv_rows,
                      const Tensor* bias) const;  // bias: [N, HW] additive, may be null
    ag::Var embed(const ag::Var& queries) const;
    // mask-attention bias at a given scale from current query mask predictions
    Tensor attn_bias(const ag::Var& queries, const PixelDecoderOutput& pdo, int64_t hs,
                     int64_t ws) const;

    MaskGenConfig cfg_;
    ag::Var proj32_w_, proj32_b_;  // C_cat -> C_p at 1/32
    ag::Var conv16_w_, conv16_b_, conv8_w_, conv8_b_, conv4_w_, conv4_b_;  // 3x3 stages
    ag::Var perpix_w_, perpix_b_;                                          // C_p -> D_emb
    ag::Var queries_;                                                      // [N, C_p], learned
    std::vector<Layer> layers_;
    ag::Var embed_w_, embed_b_;  // C_p -> D_emb
};

}  // namespace camoseg::maskgen
