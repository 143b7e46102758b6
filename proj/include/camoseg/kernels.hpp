#pragma once

#include <cstdint>

namespace camoseg::kernels {

enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);
// Honors CAMOSEG_NUM_WORKERS; 0 keeps the OpenMP default.
void set_num_workers(int n);

// All kernels are deterministic: every output element is accumulated by a
// single thread in a fixed order, so the serial and OpenMP backends produce
// bitwise-identical results.

// Y[m,n] = A[m,k] * B[k,n]
void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
// Y[m,n] = A[m,k] * B[n,k]^T
void matmul_nt(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
// Y[k,n] = A[m,k]^T * B[m,n]
void matmul_tn(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);

// 3x3 conv, zero padding 1, arbitrary stride. x: [Cin,H,W], w: [Cout,Cin,3,3],
// b: [Cout] (may be null), y: [Cout,Ho,Wo] with Ho=(H+s-1)/s for pad 1.
void conv3x3(const double* x, const double* w, const double* b, double* y,
             int64_t cin, int64_t cout, int64_t h, int64_t wd, int64_t stride);
// stride-1 gradients; gx/gw/gb accumulated into (callers zero them first)
void conv3x3_grad_input(const double* gy, const double* w, double* gx,
                        int64_t cin, int64_t cout, int64_t h, int64_t wd);
void conv3x3_grad_weight(const double* gy, const double* x, double* gw, double* gb,
                         int64_t cin, int64_t cout, int64_t h, int64_t wd);

// Bilinear resize with align_corners=false semantics. x: [C,Hi,Wi] -> y: [C,Ho,Wo]
void bilinear_resize(const double* x, double* y, int64_t c, int64_t hi, int64_t wi,
                     int64_t ho, int64_t wo);
void bilinear_resize_grad(const double* gy, double* gx, int64_t c, int64_t hi, int64_t wi,
                          int64_t ho, int64_t wo);

// Area-average downsample by integer factor f. x: [C,H,W] -> y: [C,H/f,W/f]
void area_down(const double* x, double* y, int64_t c, int64_t h, int64_t w, int64_t f);
void area_down_grad(const double* gy, double* gx, int64_t c, int64_t h, int64_t w, int64_t f);

namespace serial {
void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void conv3x3(const double* x, const double* w, const double* b, double* y,
             int64_t cin, int64_t cout, int64_t h, int64_t wd, int64_t stride);
void conv3x3_grad_input(const double* gy, const double* w, double* gx,
                        int64_t cin, int64_t cout, int64_t h, int64_t wd);
void conv3x3_grad_weight(const double* gy, const double* x, double* gw, double* gb,
                         int64_t cin, int64_t cout, int64_t h, int64_t wd);
void bilinear_resize(const double* x, double* y, int64_t c, int64_t hi, int64_t wi,
                     int64_t ho, int64_t wo);
void bilinear_resize_grad(const double* gy, double* gx, int64_t c, int64_t hi, int64_t wi,
                          int64_t ho, int64_t wo);
void area_down(const double* x, double* y, int64_t c, int64_t h, int64_t w, int64_t f);
void area_down_grad(const double* gy, double* gx, int64_t c, int64_t h, int64_t w, int64_t f);
}  // namespace serial

namespace omp {
void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void conv3x3(const double* x, const double* w, const double* b, double* y,
             int64_t cin, int64_t cout, int64_t h, int64_t wd, int64_t stride);
void conv3x3_grad_input(const double* gy, const double* w, double* gx,
                        int64_t cin, int64_t cout, int64_t h, int64_t wd);
void conv3x3_grad_weight(const double* gy, const double* x, double* gw, double* gb,
                         int64_t cin, int64_t cout, int64_t h, int64_t wd);
void bilinear_resize(const double* x, double* y, int64_t c, int64_t hi, int64_t wi,
                     int64_t ho, int64_t wo);
void bilinear_resize_grad(const double* gy, double* gx, int64_t c, int64_t hi, int64_t wi,
                          int64_t ho, int64_t wo);
void area_down(const double* x, double* y, int64_t c, int64_t h, int64_t w, int64_t f);
void area_down_grad(const double* gy, double* gx, int64_t c, int64_t h, int64_t w, int64_t f);
}  // namespace omp

}  // namespace camoseg::kernels
