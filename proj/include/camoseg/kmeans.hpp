#pragma once

#include <cstdint>
#include <vector>

#include "camoseg/tensor.hpp"

namespace camoseg {

struct KmeansResult {
    std::vector<int64_t> labels;  // one per point
    Tensor centers;               // [k, d]; duplicate centers collapse onto one point
    int64_t iterations = 0;
};

// k-means++ seeding, Lloyd iterations until max_iters or total center movement
// < tol. Deterministic given the seed. points: [n, d].
KmeansResult kmeans(const Tensor& points, int64_t k, uint64_t seed, int64_t max_iters = 100,
                    double tol = 1e-6);

}  // namespace camoseg
