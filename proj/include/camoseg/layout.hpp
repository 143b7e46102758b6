#pragma once

#include "camoseg/autograd.hpp"

namespace camoseg::ag {

// [C,H,W] -> [H*W, C]: spatial positions as rows, channels as columns.
inline Var rows_of_chw(const Var& x) {
    if (x->value.rank() != 3) throw ShapeError("rows_of_chw: expected [C,H,W]");
    const int64_t c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    return transpose2d(reshape(x, {c, hw}));
}

// [H*W, C] -> [C,H,W]
inline Var chw_of_rows(const Var& x, int64_t h, int64_t w) {
    if (x->value.rank() != 2 || x->value.dim(0) != h * w)
        throw ShapeError("chw_of_rows: rows do not match h*w");
    return reshape(transpose2d(x), {x->value.dim(1), h, w});
}

}  // namespace camoseg::ag

namespace camoseg {

inline Tensor rows_from_chw(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("rows_from_chw: expected [C,H,W]");
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out({h * w, c});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < h * w; ++p) out.at(p, ch) = t[ch * h * w + p];
    return out;
}

}  // namespace camoseg
