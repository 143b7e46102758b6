#include "camoseg/kernels.hpp"

#include <algorithm>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace camoseg::kernels {

namespace {
Backend g_backend = Backend::OpenMP;

// Shared loop bodies. `par` toggles the OpenMP pragmas at runtime so both
// backends execute exactly the same per-element accumulation order.

void matmul_impl(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n, bool par) {
#pragma omp parallel for if (par && m * n * k > 4096) schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* yr = y + i * n;
        std::fill(yr, yr + n, 0.0);
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* br = b + p * n;
            for (int64_t j = 0; j < n; ++j) yr[j] += av * br[j];
        }
    }
}

void matmul_nt_impl(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n, bool par) {
#pragma omp parallel for if (par && m * n * k > 4096) schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* br = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += ar[p] * br[p];
            y[i * n + j] = s;
        }
    }
}

void matmul_tn_impl(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n, bool par) {
#pragma omp parallel for if (par && m * n * k > 4096) schedule(static)
    for (int64_t i = 0; i < k; ++i) {
        double* yr = y + i * n;
        std::fill(yr, yr + n, 0.0);
        for (int64_t p = 0; p < m; ++p) {
            const double av = a[p * k + i];
            const double* br = b + p * n;
            for (int64_t j = 0; j < n; ++j) yr[j] += av * br[j];
        }
    }
}

void conv3x3_impl(const double* x, const double* w, const double* b, double* y,
                  int64_t cin, int64_t cout, int64_t h, int64_t wd, int64_t stride, bool par) {
    const int64_t ho = (h + stride - 1) / stride;
    const int64_t wo = (wd + stride - 1) / stride;
#pragma omp parallel for if (par && cout * ho * wo * cin > 2048) schedule(static)
    for (int64_t oc = 0; oc < cout; ++oc) {
        double* yc = y + oc * ho * wo;
        const double bias = b ? b[oc] : 0.0;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                double s = bias;
                const int64_t iy0 = oy * stride - 1;
                const int64_t ix0 = ox * stride - 1;
                for (int64_t ic = 0; ic < cin; ++ic) {
                    const double* xc = x + ic * h * wd;
                    const double* wk = w + ((oc * cin + ic) * 9);
                    for (int64_t ky = 0; ky < 3; ++ky) {
                        const int64_t iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < 3; ++kx) {
                            const int64_t ix = ix0 + kx;
                            if (ix < 0 || ix >= wd) continue;
                            s += wk[ky * 3 + kx] * xc[iy * wd + ix];
                        }
                    }
                }
                yc[oy * wo + ox] = s;
            }
        }
    }
}

void conv3x3_grad_input_impl(const double* gy, const double* w, double* gx,
                             int64_t cin, int64_t cout, int64_t h, int64_t wd, bool par) {
    // gather over input positions; stride 1, pad 1
#pragma omp parallel for if (par && cin * h * wd * cout > 2048) schedule(static)
    for (int64_t ic = 0; ic < cin; ++ic) {
        double* gxc = gx + ic * h * wd;
        for (int64_t iy = 0; iy < h; ++iy) {
            for (int64_t ix = 0; ix < wd; ++ix) {
                double s = 0.0;
                for (int64_t oc = 0; oc < cout; ++oc) {
                    const double* gyc = gy + oc * h * wd;
                    const double* wk = w + ((oc * cin + ic) * 9);
                    for (int64_t ky = 0; ky < 3; ++ky) {
                        const int64_t oy = iy + 1 - ky;
                        if (oy < 0 || oy >= h) continue;
                        for (int64_t kx = 0; kx < 3; ++kx) {
                            const int64_t ox = ix + 1 - kx;
                            if (ox < 0 || ox >= wd) continue;
                            s += wk[ky * 3 + kx] * gyc[oy * wd + ox];
                        }
                    }
                }
                gxc[iy * wd + ix] += s;
            }
        }
    }
}

void conv3x3_grad_weight_impl(const double* gy, const double* x, double* gw, double* gb,
                              int64_t cin, int64_t cout, int64_t h, int64_t wd, bool par) {
#pragma omp parallel for if (par && cout * cin * h * wd > 2048) schedule(static)
    for (int64_t oc = 0; oc < cout; ++oc) {
        const double* gyc = gy + oc * h * wd;
        if (gb) {
            double s = 0.0;
            for (int64_t i = 0; i < h * wd; ++i) s += gyc[i];
            gb[oc] += s;
        }
        for (int64_t ic = 0; ic < cin; ++ic) {
            const double* xc = x + ic * h * wd;
            double* wk = gw + ((oc * cin + ic) * 9);
            for (int64_t ky = 0; ky < 3; ++ky) {
                for (int64_t kx = 0; kx < 3; ++kx) {
                    double s = 0.0;
                    for (int64_t oy = 0; oy < h; ++oy) {
                        const int64_t iy = oy - 1 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t ox = 0; ox < wd; ++ox) {
                            const int64_t ix = ox - 1 + kx;
                            if (ix < 0 || ix >= wd) continue;
                            s += gyc[oy * wd + ox] * xc[iy * wd + ix];
                        }
                    }
                    wk[ky * 3 + kx] += s;
                }
            }
        }
    }
}

struct Lerp {
    int64_t i0, i1;
    double w0, w1;
};

Lerp lerp_coords(int64_t o, int64_t in_size, int64_t out_size) {
    // align_corners=false
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_size) / static_cast<double>(out_size) - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > static_cast<double>(in_size - 1)) src = static_cast<double>(in_size - 1);
    const int64_t i0 = static_cast<int64_t>(src);
    const int64_t i1 = std::min(i0 + 1, in_size - 1);
    const double w1 = src - static_cast<double>(i0);
    return {i0, i1, 1.0 - w1, w1};
}

void bilinear_resize_impl(const double* x, double* y, int64_t c, int64_t hi, int64_t wi,
                          int64_t ho, int64_t wo, bool par) {
#pragma omp parallel for if (par && c * ho * wo > 4096) schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* xc = x + ch * hi * wi;
        double* yc = y + ch * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
            const Lerp ly = lerp_coords(oy, hi, ho);
            for (int64_t ox = 0; ox < wo; ++ox) {
                const Lerp lx = lerp_coords(ox, wi, wo);
                yc[oy * wo + ox] = ly.w0 * (lx.w0 * xc[ly.i0 * wi + lx.i0] + lx.w1 * xc[ly.i0 * wi + lx.i1]) +
                                   ly.w1 * (lx.w0 * xc[ly.i1 * wi + lx.i0] + lx.w1 * xc[ly.i1 * wi + lx.i1]);
            }
        }
    }
}

void bilinear_resize_grad_impl(const double* gy, double* gx, int64_t c, int64_t hi, int64_t wi,
                               int64_t ho, int64_t wo, bool par) {
    // scatter within a channel, channels independent
#pragma omp parallel for if (par && c > 1) schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* gyc = gy + ch * ho * wo;
        double* gxc = gx + ch * hi * wi;
        for (int64_t oy = 0; oy < ho; ++oy) {
            const Lerp ly = lerp_coords(oy, hi, ho);
            for (int64_t ox = 0; ox < wo; ++ox) {
                const Lerp lx = lerp_coords(ox, wi, wo);
                const double g = gyc[oy * wo + ox];
                gxc[ly.i0 * wi + lx.i0] += ly.w0 * lx.w0 * g;
                gxc[ly.i0 * wi + lx.i1] += ly.w0 * lx.w1 * g;
                gxc[ly.i1 * wi + lx.i0] += ly.w1 * lx.w0 * g;
                gxc[ly.i1 * wi + lx.i1] += ly.w1 * lx.w1 * g;
            }
        }
    }
}

void area_down_impl(const double* x, double* y, int64_t c, int64_t h, int64_t w, int64_t f, bool par) {
    const int64_t ho = h / f, wo = w / f;
    const double inv = 1.0 / static_cast<double>(f * f);
#pragma omp parallel for if (par && c * ho * wo > 4096) schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* xc = x + ch * h * w;
        double* yc = y + ch * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                double s = 0.0;
                for (int64_t ky = 0; ky < f; ++ky)
                    for (int64_t kx = 0; kx < f; ++kx) s += xc[(oy * f + ky) * w + ox * f + kx];
                yc[oy * wo + ox] = s * inv;
            }
        }
    }
}

void area_down_grad_impl(const double* gy, double* gx, int64_t c, int64_t h, int64_t w, int64_t f, bool par) {
    const int64_t ho = h / f, wo = w / f;
    const double inv = 1.0 / static_cast<double>(f * f);
#pragma omp parallel for if (par && c > 1) schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* gyc = gy + ch * ho * wo;
        double* gxc = gx + ch * h * w;
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                const double g = gyc[oy * wo + ox] * inv;
                for (int64_t ky = 0; ky < f; ++ky)
                    for (int64_t kx = 0; kx < f; ++kx) gxc[(oy * f + ky) * w + ox * f + kx] += g;
            }
    }
}

}  // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

void set_num_workers(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

#define CAMOSEG_DISPATCH(fn, ...)                  \
    if (g_backend == Backend::OpenMP)              \
        fn##_impl(__VA_ARGS__, true);              \
    else                                           \
        fn##_impl(__VA_ARGS__, false)

void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    CAMOSEG_DISPATCH(matmul, a, b, y, m, k, n);
}
void matmul_nt(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    CAMOSEG_DISPATCH(matmul_nt, a, b, y, m, k, n);
}
void matmul_tn(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    CAMOSEG_DISPATCH(matmul_tn, a, b, y, m, k, n);
}
void conv3x3(const double* x, const double* w, const double* b, double* y,
             int64_t cin, int64_t cout, int64_t h, int64_t wd, int64_t stride) {
    CAMOSEG_DISPATCH(conv3x3, x, w, b, y, cin, cout, h, wd, stride);
}
void conv3x3_grad_input(const double* gy, const double* w, double* gx,
                        int64_t cin, int64_t cout, int64_t h, int64_t wd) {
    CAMOSEG_DISPATCH(conv3x3_grad_input, gy, w, gx, cin, cout, h, wd);
}
void conv3x3_grad_weight(const double* gy, const double* x, double* gw, double* gb,
                         int64_t cin, int64_t cout, int64_t h, int64_t wd) {
    CAMOSEG_DISPATCH(conv3x3_grad_weight, gy, x, gw, gb, cin, cout, h, wd);
}
void bilinear_resize(const double* x, double* y, int64_t c, int64_t hi, int64_t wi, int64_t ho, int64_t wo) {
    CAMOSEG_DISPATCH(bilinear_resize, x, y, c, hi, wi, ho, wo);
}
void bilinear_resize_grad(const double* gy, double* gx, int64_t c, int64_t hi, int64_t wi, int64_t ho, int64_t wo) {
    CAMOSEG_DISPATCH(bilinear_resize_grad, gy, gx, c, hi, wi, ho, wo);
}
void area_down(const double* x, double* y, int64_t c, int64_t h, int64_t w, int64_t f) {
    CAMOSEG_DISPATCH(area_down, x, y, c, h, w, f);
}
void area_down_grad(const double* gy, double* gx, int64_t c, int64_t h, int64_t w, int64_t f) {
    CAMOSEG_DISPATCH(area_down_grad, gy, gx, c, h, w, f);
}

#undef CAMOSEG_DISPATCH

namespace serial {
void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    matmul_impl(a, b, y, m, k, n, false);
}
void matmul_nt(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    matmul_nt_impl(a, b, y, m, k, n, false);
}
void matmul_tn(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    matmul_tn_impl(a, b, y, m, k, n, false);
}
void conv3x3(const double* x, const double* w, const double* b, double* y,
             int64_t cin, int64_t cout, int64_t h, int64_t wd, int64_t stride) {
    conv3x3_impl(x, w, b, y, cin, cout, h, wd, stride, false);
}
void conv3x3_grad_input(const double* gy, const double* w, double* gx,
                        int64_t cin, int64_t cout, int64_t h, int64_t wd) {
    conv3x3_grad_input_impl(gy, w, gx, cin, cout, h, wd, false);
}
void conv3x3_grad_weight(const double* gy, const double* x, double* gw, double* gb,
                         int64_t cin, int64_t cout, int64_t h, int64_t wd) {
    conv3x3_grad_weight_impl(gy, x, gw, gb, cin, cout, h, wd, false);
}
void bilinear_resize(const double* x, double* y, int64_t c, int64_t hi, int64_t wi, int64_t ho, int64_t wo) {
    bilinear_resize_impl(x, y, c, hi, wi, ho, wo, false);
}
void bilinear_resize_grad(const double* gy, double* gx, int64_t c, int64_t hi, int64_t wi, int64_t ho, int64_t wo) {
    bilinear_resize_grad_impl(gy, gx, c, hi, wi, ho, wo, false);
}
void area_down(const double* x, double* y, int64_t c, int64_t h, int64_t w, int64_t f) {
    area_down_impl(x, y, c, h, w, f, false);
}
void area_down_grad(const double* gy, double* gx, int64_t c, int64_t h, int64_t w, int64_t f) {
    area_down_grad_impl(gy, gx, c, h, w, f, false);
}
}  // namespace serial

namespace omp {
void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    matmul_impl(a, b, y, m, k, n, true);
}
void matmul_nt(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    matmul_nt_impl(a, b, y, m, k, n, true);
}
void matmul_tn(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    matmul_tn_impl(a, b, y, m, k, n, true);
}
void conv3x3(const double* x, const double* w, const double* b, double* y,
             int64_t cin, int64_t cout, int64_t h, int64_t wd, int64_t stride) {
    conv3x3_impl(x, w, b, y, cin, cout, h, wd, stride, true);
}
void conv3x3_grad_input(const double* gy, const double* w, double* gx,
                        int64_t cin, int64_t cout, int64_t h, int64_t wd) {
    conv3x3_grad_input_impl(gy, w, gx, cin, cout, h, wd, true);
}
void conv3x3_grad_weight(const double* gy, const double* x, double* gw, double* gb,
                         int64_t cin, int64_t cout, int64_t h, int64_t wd) {
    conv3x3_grad_weight_impl(gy, x, gw, gb, cin, cout, h, wd, true);
}
void bilinear_resize(const double* x, double* y, int64_t c, int64_t hi, int64_t wi, int64_t ho, int64_t wo) {
    bilinear_resize_impl(x, y, c, hi, wi, ho, wo, true);
}
void bilinear_resize_grad(const double* gy, double* gx, int64_t c, int64_t hi, int64_t wi, int64_t ho, int64_t wo) {
    bilinear_resize_grad_impl(gy, gx, c, hi, wi, ho, wo, true);
}
void area_down(const double* x, double* y, int64_t c, int64_t h, int64_t w, int64_t f) {
    area_down_impl(x, y, c, h, w, f, true);
}
void area_down_grad(const double* gy, double* gx, int64_t c, int64_t h, int64_t w, int64_t f) {
    area_down_grad_impl(gy, gx, c, h, w, f, true);
}
}  // namespace omp

}  // namespace camoseg::kernels
