#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "camoseg/tensor.hpp"

namespace camoseg::eval {

struct ScoredInstance {
    Tensor mask;  // binary [H,W]
    double confidence = 0.0;
    int64_t category_id = 0;
};

struct GtInstance {
    Tensor mask;
    int64_t category_id = 0;
    bool iscrowd = false;
};

struct EvalResult {
    double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
    std::map<double, double> per_threshold;
    std::map<int64_t, double> per_category;  // class-aware mode only
};

// |a n b| / |a u b|; 0 when both empty
double mask_iou(const Tensor& a, const Tensor& b);

std::vector<double> coco_thresholds();  // {0.50, 0.55, ..., 0.95}

// Greedy confidence-ordered matching per image, 101-point interpolated AP.
// Crowd ground truth may absorb any number of predictions and never counts
// toward the GT total; predictions matched to crowd are ignored.
EvalResult average_precision(const std::vector<std::vector<ScoredInstance>>& predictions,
                             const std::vector<std::vector<GtInstance>>& gts,
                             const std::vector<double>& thresholds, bool class_agnostic = true,
                             int64_t max_detections = 100);

}  // namespace camoseg::eval
