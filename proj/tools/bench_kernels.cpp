#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#include "camoseg/kernels.hpp"
#include "camoseg/rng.hpp"
#include "camoseg/tensor.hpp"

using namespace camoseg;

namespace {

template <typename F>
double time_best(F&& f, int reps = 5) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    for (int64_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

void report(const char* name, double ts, double to, bool equal) {
    std::printf("%-22s serial %8.2f ms   openmp %8.2f ms   speedup %5.2fx   bitwise %s\n", name,
                ts * 1e3, to * 1e3, ts / to, equal ? "equal" : "MISMATCH");
}

}  // namespace

int main() {
    std::printf("kernel benchmark: serial reference vs OpenMP\n\n");

    {
        const int64_t m = 384, k = 384, n = 384;
        Tensor a = random_tensor({m, k}, 1), b = random_tensor({k, n}, 2);
        Tensor ys({m, n}), yo({m, n});
        const double ts = time_best([&] { kernels::serial::matmul(a.data(), b.data(), ys.data(), m, k, n); });
        const double to = time_best([&] { kernels::omp::matmul(a.data(), b.data(), yo.data(), m, k, n); });
        report("matmul 384^3", ts, to, bitwise_equal(ys, yo));
    }
    {
        const int64_t cin = 64, cout = 64, h = 64, w = 64;
        Tensor x = random_tensor({cin, h, w}, 3), wt = random_tensor({cout, cin, 3, 3}, 4);
        Tensor bias = random_tensor({cout}, 5);
        Tensor ys({cout, h, w}), yo({cout, h, w});
        const double ts = time_best(
            [&] { kernels::serial::conv3x3(x.data(), wt.data(), bias.data(), ys.data(), cin, cout, h, w, 1); });
        const double to = time_best(
            [&] { kernels::omp::conv3x3(x.data(), wt.data(), bias.data(), yo.data(), cin, cout, h, w, 1); });
        report("conv3x3 64c 64x64", ts, to, bitwise_equal(ys, yo));
    }
    {
        const int64_t c = 64, hi = 64, wi = 64, ho = 256, wo = 256;
        Tensor x = random_tensor({c, hi, wi}, 6);
        Tensor ys({c, ho, wo}), yo({c, ho, wo});
        const double ts =
            time_best([&] { kernels::serial::bilinear_resize(x.data(), ys.data(), c, hi, wi, ho, wo); });
        const double to =
            time_best([&] { kernels::omp::bilinear_resize(x.data(), yo.data(), c, hi, wi, ho, wo); });
        report("bilinear 64->256", ts, to, bitwise_equal(ys, yo));
    }
    {
        const int64_t c = 64, h = 512, w = 512, f = 4;
        Tensor x = random_tensor({c, h, w}, 7);
        Tensor ys({c, h / f, w / f}), yo({c, h / f, w / f});
        const double ts = time_best([&] { kernels::serial::area_down(x.data(), ys.data(), c, h, w, f); });
        const double to = time_best([&] { kernels::omp::area_down(x.data(), yo.data(), c, h, w, f); });
        report("area_down 512/4", ts, to, bitwise_equal(ys, yo));
    }
    return 0;
}
