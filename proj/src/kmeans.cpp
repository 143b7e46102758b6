#include "camoseg/kmeans.hpp"

#include <cmath>
#include <limits>

#include "camoseg/errors.hpp"
#include "camoseg/rng.hpp"

namespace camoseg {

namespace {

double sqdist(const double* a, const double* b, int64_t d) {
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

}  // namespace

KmeansResult kmeans(const Tensor& points, int64_t k, uint64_t seed, int64_t max_iters, double tol) {
    if (points.rank() != 2) throw ShapeError("kmeans: points must be [n,d]");
    const int64_t n = points.dim(0), d = points.dim(1);
    if (k < 2) throw DomainError("kmeans: k must be >= 2");
    if (k > n) throw DomainError("kmeans: k exceeds the number of points");

    Rng rng(Rng::derive(seed, 0x6b6d, 0));
    Tensor centers({k, d});
    // k-means++: first center uniform, then proportional to squared distance
    std::vector<double> dist(static_cast<size_t>(n), 0.0);
    int64_t first = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
    for (int64_t j = 0; j < d; ++j) centers.at(0, j) = points.at(first, j);
    for (int64_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int64_t cc = 0; cc < c; ++cc)
                best = std::min(best, sqdist(points.data() + i * d, centers.data() + cc * d, d));
            dist[static_cast<size_t>(i)] = best;
            total += best;
        }
        int64_t pick;
        if (total <= 0.0) {
            pick = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));  // all points identical
        } else {
            double r = rng.uniform() * total;
            pick = n - 1;
            for (int64_t i = 0; i < n; ++i) {
                r -= dist[static_cast<size_t>(i)];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        for (int64_t j = 0; j < d; ++j) centers.at(c, j) = points.at(pick, j);
    }

    KmeansResult res;
    res.labels.assign(static_cast<size_t>(n), 0);
    for (int64_t it = 0; it < max_iters; ++it) {
        res.iterations = it + 1;
        for (int64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            int64_t lab = 0;
            for (int64_t c = 0; c < k; ++c) {
                const double dd = sqdist(points.data() + i * d, centers.data() + c * d, d);
                if (dd < best) {  // strict: ties keep the lowest center index
                    best = dd;
                    lab = c;
                }
            }
            res.labels[static_cast<size_t>(i)] = lab;
        }
        Tensor sums({k, d});
        std::vector<int64_t> counts(static_cast<size_t>(k), 0);
        for (int64_t i = 0; i < n; ++i) {
            const int64_t c = res.labels[static_cast<size_t>(i)];
            ++counts[static_cast<size_t>(c)];
            for (int64_t j = 0; j < d; ++j) sums.at(c, j) += points.at(i, j);
        }
        double moved = 0.0;
        for (int64_t c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) continue;  // empty cluster keeps its center
            for (int64_t j = 0; j < d; ++j) {
                const double nc = sums.at(c, j) / static_cast<double>(counts[static_cast<size_t>(c)]);
                moved += std::abs(nc - centers.at(c, j));
                centers.at(c, j) = nc;
            }
        }
        if (moved < tol) break;
    }
    res.centers = std::move(centers);
    return res;
}

}  // namespace camoseg
