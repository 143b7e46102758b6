#include "camoseg/msff.hpp"

#include "camoseg/errors.hpp"
#include "camoseg/kernels.hpp"
#include "camoseg/layout.hpp"

namespace camoseg::msff {

void MsffConfig::validate() const {
    if (gate_activation != "sigmoid" && gate_activation != "identity")
        throw ConfigError("msff.gate_activation must be 'sigmoid' or 'identity'");
    if (fusion_scale != 32) throw ConfigError("msff.fusion_scale: only 32 is supported");
}

Msff::Msff(ParamStore& store, const MsffConfig& cfg, int64_t c8, int64_t c16, int64_t c32,
           int64_t c_dec, uint64_t seed)
    : cfg_(cfg), c8_(c8), c16_(c16), c32_(c32), c_dec_(c_dec), c_cat_(c8 + c16 + c32) {
    cfg_.validate();
    gate_w_ = store.add_normal("msff.gate_w", {c_cat_, c_cat_}, c_cat_, seed);
    gate_b_ = store.add_zeros("msff.gate_b", {1, c_cat_});
    dec_w_ = store.add_normal("msff.dec_w", {c_cat_, c_dec}, c_dec, seed);
    dec_b_ = store.add_zeros("msff.dec_b", {1, c_cat_});
}

namespace {

Tensor down_rows(const Tensor& level, int64_t factor) {
    if (factor == 1) return rows_from_chw(level);
    Tensor y({level.dim(0), level.dim(1) / factor, level.dim(2) / factor});
    kernels::area_down(level.data(), y.data(), level.dim(0), level.dim(1), level.dim(2), factor);
    return rows_from_chw(y);
}

void check_level(const Tensor& t, int64_t c, int64_t h32, int64_t w32, int64_t f, const char* name) {
    if (t.rank() != 3 || t.dim(0) != c || t.dim(1) != h32 * f || t.dim(2) != w32 * f)
        throw ShapeError(std::string("msff.fuse: bad ") + name + " shape " + t.shape_str());
}

}  // namespace

FusedFeatureMap Msff::fuse(const backbone::FeaturePyramid& pyramid) const {
    if (pyramid.level32.rank() != 3) throw ShapeError("msff.fuse: missing level32");
    const int64_t h32 = pyramid.level32.dim(1), w32 = pyramid.level32.dim(2);
    check_level(pyramid.level8, c8_, h32, w32, 4, "level8");
    check_level(pyramid.level16, c16_, h32, w32, 2, "level16");
    check_level(pyramid.level32, c32_, h32, w32, 1, "level32");
    check_level(pyramid.decoder_final, c_dec_, h32, w32, 4, "decoder_final");

    const Tensor r8 = down_rows(pyramid.level8, 4);
    const Tensor r16 = down_rows(pyramid.level16, 2);
    const Tensor r32 = rows_from_chw(pyramid.level32);
    Tensor xcat({h32 * w32, c_cat_});
    for (int64_t p = 0; p < h32 * w32; ++p) {
        for (int64_t c = 0; c < c8_; ++c) xcat.at(p, c) = r8.at(p, c);
        for (int64_t c = 0; c < c16_; ++c) xcat.at(p, c8_ + c) = r16.at(p, c);
        for (int64_t c = 0; c < c32_; ++c) xcat.at(p, c8_ + c16_ + c) = r32.at(p, c);
    }

    ag::Var x = ag::constant(std::move(xcat));
    ag::Var g = ag::add_rowvec(ag::matmul_nt(x, gate_w_), gate_b_);
    if (cfg_.gate_activation == "sigmoid") g = ag::sigmoid(g);
    ag::Var y = ag::mul(g, x);

    ag::Var d = ag::constant(down_rows(pyramid.decoder_final, 4));
    d = ag::add_rowvec(ag::matmul_nt(d, dec_w_), dec_b_);

    return {ag::add(y, d), h32, w32, c_cat_};
}

FusedFeatureMap Msff::fuse_decoder_only(const backbone::FeaturePyramid& pyramid) const {
    if (pyramid.decoder_final.rank() != 3 || pyramid.decoder_final.dim(0) != c_dec_)
        throw ShapeError("msff.fuse_decoder_only: bad decoder_final");
    const int64_t h32 = pyramid.decoder_final.dim(1) / 4, w32 = pyramid.decoder_final.dim(2) / 4;
    ag::Var d = ag::constant(down_rows(pyramid.decoder_final, 4));
    d = ag::add_rowvec(ag::matmul_nt(d, dec_w_), dec_b_);
    return {d, h32, w32, c_cat_};
}

}  // namespace camoseg::msff
