#include "camoseg/maskgen.hpp"

#include <cmath>
#include <string>

#include "camoseg/errors.hpp"
#include "camoseg/kernels.hpp"
#include "camoseg/layout.hpp"

namespace camoseg::maskgen {

void MaskGenConfig::validate() const {
    if (num_queries < 1) throw ConfigError("maskgen.num_queries must be >= 1");
    if (layers < 1) throw ConfigError("maskgen.layers must be >= 1");
    if (heads < 1 || query_dim % heads != 0)
        throw ConfigError("maskgen.heads must be >= 1 and divide the query dim");
    if (embed_dim < 1 || query_dim < 1 || ffn_dim < 1)
        throw ConfigError("maskgen dims must be >= 1");
}

namespace {

void init_attn(ParamStore& s, const std::string& p, int64_t d, uint64_t seed, auto& a) {
    a.wq = s.add_normal(p + ".wq", {d, d}, d, seed);
    a.wk = s.add_normal(p + ".wk", {d, d}, d, seed);
    a.wv = s.add_normal(p + ".wv", {d, d}, d, seed);
    a.wo = s.add_normal(p + ".wo", {d, d}, d, seed);
    a.bq = s.add_zeros(p + ".bq", {1, d});
    a.bk = s.add_zeros(p + ".bk", {1, d});
    a.bv = s.add_zeros(p + ".bv", {1, d});
    a.bo = s.add_zeros(p + ".bo", {1, d});
    Tensor ones({1, d});
    for (int64_t i = 0; i < d; ++i) ones[i] = 1.0;
    a.ln_g = s.add(p + ".ln_g", ones);
    a.ln_b = s.add_zeros(p + ".ln_b", {1, d});
}

}  // namespace

MaskGen::MaskGen(ParamStore& store, const MaskGenConfig& cfg, int64_t c_cat, uint64_t seed)
    : cfg_(cfg) {
    cfg_.validate();
    const int64_t cp = cfg_.query_dim, de = cfg_.embed_dim, f = cfg_.ffn_dim;
    proj32_w_ = store.add_normal("maskgen.proj32_w", {cp, c_cat}, c_cat, seed);
    proj32_b_ = store.add_zeros("maskgen.proj32_b", {1, cp});
    conv16_w_ = store.add_normal("maskgen.conv16_w", {cp, cp, 3, 3}, cp * 9, seed);
    conv16_b_ = store.add_zeros("maskgen.conv16_b", {cp});
    conv8_w_ = store.add_normal("maskgen.conv8_w", {cp, cp, 3, 3}, cp * 9, seed);
    conv8_b_ = store.add_zeros("maskgen.conv8_b", {cp});
    conv4_w_ = store.add_normal("maskgen.conv4_w", {cp, cp, 3, 3}, cp * 9, seed);
    conv4_b_ = store.add_zeros("maskgen.conv4_b", {cp});
    perpix_w_ = store.add_normal("maskgen.perpix_w", {de, cp}, cp, seed);
    perpix_b_ = store.add_zeros("maskgen.perpix_b", {1, de});
    queries_ = store.add_normal("maskgen.queries", {cfg_.num_queries, cp}, cp, seed);
    for (int64_t l = 0; l < cfg_.layers; ++l) {
        Layer layer;
        const std::string p = "maskgen.layer" + std::to_string(l);
        init_attn(store, p + ".cross", cp, seed, layer.cross);
        init_attn(store, p + ".self", cp, seed, layer.self_attn);
        layer.ffn.w1 = store.add_normal(p + ".ffn.w1", {f, cp}, cp, seed);
        layer.ffn.b1 = store.add_zeros(p + ".ffn.b1", {1, f});
        layer.ffn.w2 = store.add_normal(p + ".ffn.w2", {cp, f}, f, seed);
        layer.ffn.b2 = store.add_zeros(p + ".ffn.b2", {1, cp});
        Tensor ones({1, cp});
        for (int64_t i = 0; i < cp; ++i) ones[i] = 1.0;
        layer.ffn.ln_g = store.add(p + ".ffn.ln_g", ones);
        layer.ffn.ln_b = store.add_zeros(p + ".ffn.ln_b", {1, cp});
        layers_.push_back(layer);
    }
    embed_w_ = store.add_normal("maskgen.embed_w", {de, cp}, cp, seed);
    embed_b_ = store.add_zeros("maskgen.embed_b", {1, de});
}

PixelDecoderOutput MaskGen::pixel_decode(const msff::FusedFeatureMap& fused) const {
    PixelDecoderOutput out;
    out.h32 = fused.h;
    out.w32 = fused.w;
    out.i32 = ag::add_rowvec(ag::matmul_nt(fused.rows, proj32_w_), proj32_b_);

    auto stage = [&](const ag::Var& rows, int64_t h, int64_t w, const ag::Var& cw,
                     const ag::Var& cb) {
        ag::Var chw = ag::chw_of_rows(rows, h, w);
        chw = ag::bilinear_to(chw, h * 2, w * 2);
        chw = ag::relu(ag::conv3x3(chw, cw, cb));
        return ag::rows_of_chw(chw);
    };
    out.i16 = stage(out.i32, out.h32, out.w32, conv16_w_, conv16_b_);
    out.i8 = stage(out.i16, out.h32 * 2, out.w32 * 2, conv8_w_, conv8_b_);
    ag::Var p4 = stage(out.i8, out.h32 * 4, out.w32 * 4, conv4_w_, conv4_b_);
    out.per_pixel = ag::add_rowvec(ag::matmul_nt(p4, perpix_w_), perpix_b_);
    return out;
}

ag::Var MaskGen::embed(const ag::Var& queries) const {
    return ag::add_rowvec(ag::matmul_nt(queries, embed_w_), embed_b_);
}

Tensor MaskGen::attn_bias(const ag::Var& queries, const PixelDecoderOutput& pdo, int64_t hs,
                          int64_t ws) const {
    // non-differentiable gate: masks come from the current queries' values
    const int64_t n = queries->value.dim(0);
    const Tensor& pp = pdo.per_pixel->value;  // [HW4, D_emb]
    Tensor emb({n, cfg_.embed_dim});
    kernels::matmul_nt(queries->value.data(), embed_w_->value.data(), emb.data(), n,
                       cfg_.query_dim, cfg_.embed_dim);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t d = 0; d < cfg_.embed_dim; ++d) emb.at(i, d) += embed_b_->value[d];
    Tensor logits4({n, pp.dim(0)});
    kernels::matmul_nt(emb.data(), pp.data(), logits4.data(), n, cfg_.embed_dim, pp.dim(0));
    Tensor scaled({n, hs, ws});
    kernels::bilinear_resize(logits4.data(), scaled.data(), n, pdo.h4(), pdo.w4(), hs, ws);
    Tensor bias({n, hs * ws});
    for (int64_t i = 0; i < n; ++i) {
        bool any = false;
        for (int64_t p = 0; p < hs * ws; ++p) {
            const bool fg = scaled[i * hs * ws + p] > 0.0;  // sigmoid > 0.5
            bias.at(i, p) = fg ? 0.0 : -1e9;
            any = any || fg;
        }
        if (!any)  // empty predicted region: fall back to full attention
            for (int64_t p = 0; p < hs * ws; ++p) bias.at(i, p) = 0.0;
    }
    return bias;
}

ag::Var MaskGen::attention(const Attn& a, const ag::Var& q_in, const ag::Var& kv_rows,
                           const Tensor* bias) const {
    const int64_t dh = cfg_.query_dim / cfg_.heads;
    ag::Var q = ag::add_rowvec(ag::matmul_nt(q_in, a.wq), a.bq);
    ag::Var k = ag::add_rowvec(ag::matmul_nt(kv_rows, a.wk), a.bk);
    ag::Var v = ag::add_rowvec(ag::matmul_nt(kv_rows, a.wv), a.bv);
    std::vector<ag::Var> heads;
    for (int64_t h = 0; h < cfg_.heads; ++h) {
        ag::Var qh = ag::slice_cols(q, h * dh, dh);
        ag::Var kh = ag::slice_cols(k, h * dh, dh);
        ag::Var vh = ag::slice_cols(v, h * dh, dh);
        ag::Var scores = ag::affine(ag::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)), 0.0);
        if (bias) scores = ag::add(scores, ag::constant(*bias));
        heads.push_back(ag::matmul(ag::softmax_rows(scores), vh));
    }
    ag::Var o = cfg_.heads == 1 ? heads[0] : ag::concat_cols(heads);
    o = ag::add_rowvec(ag::matmul_nt(o, a.wo), a.bo);
    return ag::layernorm_rows(ag::add(q_in, o), a.ln_g, a.ln_b);
}

ag::Var MaskGen::transformer_decode(const ag::Var& queries, const PixelDecoderOutput& pdo) const {
    ag::Var q = queries;
    for (int64_t l = 0; l < cfg_.layers; ++l) {
        const Layer& layer = layers_[static_cast<size_t>(l)];
        const int scale = static_cast<int>(l % 3);  // [1/32, 1/16, 1/8]
        const ag::Var& feats = scale == 0 ? pdo.i32 : scale == 1 ? pdo.i16 : pdo.i8;
        const int64_t hs = pdo.h32 << scale, ws = pdo.w32 << scale;
        const Tensor bias = attn_bias(q, pdo, hs, ws);
        q = attention(layer.cross, q, feats, &bias);
        q = attention(layer.self_attn, q, q, nullptr);
        ag::Var f = ag::add_rowvec(ag::matmul_nt(q, layer.ffn.w1), layer.ffn.b1);
        f = ag::add_rowvec(ag::matmul_nt(ag::relu(f), layer.ffn.w2), layer.ffn.b2);
        q = ag::layernorm_rows(ag::add(q, f), layer.ffn.ln_g, layer.ffn.ln_b);
    }
    return q;
}

InstancePredictions MaskGen::predict_masks(const ag::Var& queries, const PixelDecoderOutput& pdo,
                                           int64_t h, int64_t w) const {
    InstancePredictions out;
    out.height = h;
    out.width = w;
    out.embeddings = embed(queries);
    out.h4 = pdo.h4();
    out.w4 = pdo.w4();
    const int64_t n = queries->value.dim(0);
    out.logits_quarter = ag::matmul_nt(out.embeddings, pdo.per_pixel);  // [N, HW4]
    ag::Var full = ag::bilinear_to(ag::reshape(out.logits_quarter, {n, pdo.h4(), pdo.w4()}), h, w);
    full = ag::reshape(full, {n, h * w});
    for (int64_t i = 0; i < n; ++i) out.mask_logits.push_back(ag::select_rows(full, {i}));
    return out;
}

}  // namespace camoseg::maskgen
